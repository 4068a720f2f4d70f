#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "unf/unf.hpp"

namespace test {

inline std::shared_ptr<const unf::WeightSpaceSpec> shared_spec(unf::WeightSpaceSpec spec) {
  return std::make_shared<const unf::WeightSpaceSpec>(std::move(spec));
}

inline std::shared_ptr<const unf::WeightSpaceSpec> spec_from_text(const std::string& text) {
  return shared_spec(unf::parse_spec(text));
}

// Central finite difference of a scalar function along a direction.
inline double directional_fd(const std::function<double(const std::vector<double>&)>& f,
                             const std::vector<double>& x0, const std::vector<double>& dir,
                             double h = 1e-5) {
  std::vector<double> plus = x0;
  std::vector<double> minus = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    plus[i] += h * dir[i];
    minus[i] -= h * dir[i];
  }
  return (f(plus) - f(minus)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

inline std::vector<double> random_direction(std::size_t n, unf::Rng& rng) {
  std::vector<double> d(n);
  for (auto& v : d) v = rng.normal();
  return d;
}

}  // namespace test
