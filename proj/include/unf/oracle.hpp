#pragma once

// Brute-force certification. The equivariant-map space for a tensor pair is
// the fixed subspace of the conjugation action on linear maps; averaging
// that action over the whole (small) group gives a projector whose rank is
// the subspace dimension. Comparing it with the enumerated basis size and
// with the numerical rank of the materialized basis certifies both
// correctness and maximality.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "unf/basis.hpp"
#include "unf/basis_exec.hpp"
#include "unf/errors.hpp"
#include "unf/symmetry.hpp"
#include "unf/wspec.hpp"

namespace unf {

constexpr std::int64_t kDefaultGroupCap = 10000;
constexpr std::int64_t kDefaultMatrixCap = 10000000;
constexpr double kRankThreshold = 1e-6;

struct EquivarianceReport {
  double max_error = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  bool pass = false;
};

// fn maps WeightValues -> WeightValues with channels c_in -> anything.
template <class T, class Fn>
EquivarianceReport check_equivariance(Fn&& fn, std::shared_ptr<const WeightSpaceSpec> spec,
                                      const DimSizes& sizes, std::int64_t c_in, int trials,
                                      std::uint64_t seed, double tolerance = 1e-12) {
  if (trials < 1) throw ShapeError("check_equivariance: trials must be >= 1");
  Rng rng(seed);
  EquivarianceReport report;
  report.trials = trials;
  report.tolerance = tolerance;
  for (int trial = 0; trial < trials; ++trial) {
    WeightValues<T> w = random_values<T>(spec, sizes, c_in, rng.next_u64());
    NeuronPermutation sigma = random_permutation(sizes, rng);
    WeightValues<T> lhs = fn(apply_permutation(sigma, w));
    WeightValues<T> rhs = apply_permutation(sigma, fn(w));
    double err = static_cast<double>(wv_max_abs_diff(lhs, rhs));
    report.max_error = std::max(report.max_error, err);
  }
  report.pass = report.max_error <= tolerance;
  return report;
}

// fn maps WeightValues -> flat vector; checks the output ignores permutations.
template <class T, class Fn>
EquivarianceReport check_invariance(Fn&& fn, std::shared_ptr<const WeightSpaceSpec> spec,
                                    const DimSizes& sizes, std::int64_t c_in, int trials,
                                    std::uint64_t seed, double tolerance = 1e-12) {
  if (trials < 1) throw ShapeError("check_invariance: trials must be >= 1");
  Rng rng(seed);
  EquivarianceReport report;
  report.trials = trials;
  report.tolerance = tolerance;
  for (int trial = 0; trial < trials; ++trial) {
    WeightValues<T> w = random_values<T>(spec, sizes, c_in, rng.next_u64());
    NeuronPermutation sigma = random_permutation(sizes, rng);
    std::vector<T> base = fn(w);
    std::vector<T> perm = fn(apply_permutation(sigma, w));
    if (base.size() != perm.size()) throw ShapeError("check_invariance: output size changed");
    for (std::size_t i = 0; i < base.size(); ++i) {
      double err = std::abs(static_cast<double>(base[i]) - static_cast<double>(perm[i]));
      report.max_error = std::max(report.max_error, err);
    }
  }
  report.pass = report.max_error <= tolerance;
  return report;
}

namespace detail {

inline DimSizes pair_sizes(const std::vector<std::string>& out_dims,
                           const std::vector<std::string>& in_dims, const DimSizes& sizes) {
  DimSizes subset;
  for (const auto& d : out_dims) subset[d] = sizes.at(d);
  for (const auto& d : in_dims) subset[d] = sizes.at(d);
  return subset;
}

// flat -> flat map induced on a tensor by sigma^{-1} applied per axis:
// perm[flat(i)] = flat(sigma^{-1}(i)).
inline std::vector<std::int64_t> inverse_index_map(const std::vector<std::string>& dims,
                                                   const DimSizes& sizes,
                                                   const NeuronPermutation& sigma_inv) {
  std::vector<std::int64_t> shape;
  for (const auto& d : dims) shape.push_back(sizes.at(d));
  std::vector<std::int64_t> strides = row_major_strides(shape);
  std::int64_t n = shape_size(shape);
  std::vector<std::int64_t> map(n);
  std::vector<std::int64_t> idx(dims.size(), 0);
  for (std::int64_t j = 0; j < n; ++j) {
    std::int64_t mapped = 0;
    for (std::size_t a = 0; a < dims.size(); ++a) {
      mapped += sigma_inv.images.at(dims[a])[idx[a]] * strides[a];
    }
    map[j] = mapped;
    for (std::size_t a = dims.size(); a > 0;) {
      --a;
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return map;
}

inline int svd_rank(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  double cutoff = kRankThreshold * sv(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) ++rank;
  }
  return rank;
}

}  // namespace detail

// Rank of the group average of the conjugation action on vec(linear maps).
inline int fixed_subspace_dimension(const std::vector<std::string>& out_dims,
                                    const std::vector<std::string>& in_dims, const DimSizes& sizes,
                                    std::int64_t group_cap = kDefaultGroupCap,
                                    std::int64_t matrix_cap = kDefaultMatrixCap) {
  DimSizes subset = detail::pair_sizes(out_dims, in_dims, sizes);
  std::vector<std::int64_t> out_shape, in_shape;
  for (const auto& d : out_dims) out_shape.push_back(subset.at(d));
  for (const auto& d : in_dims) in_shape.push_back(subset.at(d));
  const std::int64_t n_out = shape_size(out_shape);
  const std::int64_t n_in = shape_size(in_shape);
  const std::int64_t m = n_out * n_in;
  if (m * m > matrix_cap) {
    throw CapError("projector size " + std::to_string(m) + "^2 exceeds cap " +
                   std::to_string(matrix_cap));
  }
  std::vector<NeuronPermutation> group = enumerate_group(subset, group_cap);
  Eigen::MatrixXd projector = Eigen::MatrixXd::Zero(m, m);
  const double weight = 1.0 / static_cast<double>(group.size());
  for (const auto& sigma : group) {
    NeuronPermutation sigma_inv = inverse(sigma);
    std::vector<std::int64_t> out_map = detail::inverse_index_map(out_dims, subset, sigma_inv);
    std::vector<std::int64_t> in_map = detail::inverse_index_map(in_dims, subset, sigma_inv);
    for (std::int64_t o = 0; o < n_out; ++o) {
      for (std::int64_t i = 0; i < n_in; ++i) {
        projector(o * n_in + i, out_map[o] * n_in + in_map[i]) += weight;
      }
    }
  }
  return detail::svd_rank(projector);
}

// Dense n_out x n_in matrix of a single basis function.
inline Eigen::MatrixXd materialize_basis_matrix(const BasisDescriptor& d, const DimSizes& sizes) {
  const int nblocks = static_cast<int>(d.block_names.size());
  std::vector<std::int64_t> block_sizes(nblocks);
  for (int b = 0; b < nblocks; ++b) block_sizes[b] = sizes.at(d.block_names[b]);
  std::vector<std::int64_t> out_shape, in_shape;
  for (int c : d.out_chars) out_shape.push_back(block_sizes[c]);
  for (int c : d.in_chars) in_shape.push_back(block_sizes[c]);
  std::vector<std::int64_t> out_strides = row_major_strides(out_shape);
  std::vector<std::int64_t> in_strides = row_major_strides(in_shape);
  Eigen::MatrixXd mat = Eigen::MatrixXd::Zero(shape_size(out_shape), shape_size(in_shape));
  std::vector<std::int64_t> v(nblocks, 0);
  for (;;) {
    std::int64_t row = 0, col = 0;
    for (std::size_t a = 0; a < d.out_chars.size(); ++a) row += v[d.out_chars[a]] * out_strides[a];
    for (std::size_t a = 0; a < d.in_chars.size(); ++a) col += v[d.in_chars[a]] * in_strides[a];
    mat(row, col) += 1.0;
    int b = nblocks;
    while (b > 0) {
      --b;
      if (++v[b] < block_sizes[b]) break;
      v[b] = 0;
      if (b == 0) return mat;
    }
    if (nblocks == 0) return mat;
  }
}

// Numerical rank of the stacked (descriptor count x n_out*n_in) matrix.
inline int basis_rank(const std::vector<BasisDescriptor>& descriptors, const DimSizes& sizes,
                      std::int64_t matrix_cap = kDefaultMatrixCap) {
  if (descriptors.empty()) return 0;
  Eigen::MatrixXd first = materialize_basis_matrix(descriptors.front(), sizes);
  const std::int64_t m = first.rows() * first.cols();
  if (m * static_cast<std::int64_t>(descriptors.size()) > matrix_cap) {
    throw CapError("stacked basis matrix exceeds cap " + std::to_string(matrix_cap));
  }
  Eigen::MatrixXd stacked(descriptors.size(), m);
  stacked.row(0) = Eigen::Map<Eigen::VectorXd>(first.data(), m);
  for (std::size_t k = 1; k < descriptors.size(); ++k) {
    Eigen::MatrixXd mk = materialize_basis_matrix(descriptors[k], sizes);
    stacked.row(static_cast<Eigen::Index>(k)) = Eigen::Map<Eigen::VectorXd>(mk.data(), m);
  }
  return detail::svd_rank(stacked);
}

struct PairCertificate {
  std::int64_t enumerated = 0;
  int rank = 0;
  int fixed_dim = 0;
  bool equal = false;
};

inline PairCertificate certify_pair(const std::vector<std::string>& out_dims,
                                    const std::vector<std::string>& in_dims, const DimSizes& sizes,
                                    std::int64_t group_cap = kDefaultGroupCap,
                                    std::int64_t matrix_cap = kDefaultMatrixCap,
                                    std::int64_t basis_cap = kDefaultBasisCap) {
  PairCertificate cert;
  DimSizes subset = detail::pair_sizes(out_dims, in_dims, sizes);
  std::vector<BasisDescriptor> descriptors = pair_basis_dims(out_dims, in_dims, basis_cap);
  cert.enumerated = static_cast<std::int64_t>(descriptors.size());
  cert.rank = basis_rank(descriptors, subset, matrix_cap);
  cert.fixed_dim = fixed_subspace_dimension(out_dims, in_dims, subset, group_cap, matrix_cap);
  cert.equal = cert.enumerated == cert.rank && cert.rank == cert.fixed_dim;
  return cert;
}

inline std::map<std::pair<std::string, std::string>, PairCertificate> certify_spec(
    const WeightSpaceSpec& spec, const DimSizes& sizes,
    std::int64_t group_cap = kDefaultGroupCap, std::int64_t matrix_cap = kDefaultMatrixCap,
    std::int64_t basis_cap = kDefaultBasisCap) {
  std::map<std::pair<std::string, std::string>, PairCertificate> result;
  for (const auto& out_t : spec.tensors()) {
    for (const auto& in_t : spec.tensors()) {
      result[{out_t.id, in_t.id}] =
          certify_pair(out_t.dims, in_t.dims, sizes, group_cap, matrix_cap, basis_cap);
    }
  }
  return result;
}

}  // namespace unf
