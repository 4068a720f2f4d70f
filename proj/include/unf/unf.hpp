#pragma once

#include "unf/basis.hpp"
#include "unf/basis_exec.hpp"
#include "unf/errors.hpp"
#include "unf/io.hpp"
#include "unf/layers.hpp"
#include "unf/lopt.hpp"
#include "unf/ndarray.hpp"
#include "unf/oracle.hpp"
#include "unf/rng.hpp"
#include "unf/symmetry.hpp"
#include "unf/wspec.hpp"
