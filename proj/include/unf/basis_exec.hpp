#pragma once

// Executes a basis descriptor on dense data. The compiled form reduces the
// per-entry definition to three flat offset tables: carry blocks (chars on
// both sides), sum blocks (input only), broadcast blocks (output only).
// Forward: for every carry assignment, accumulate over sum offsets, then
// write the accumulator at every broadcast offset; untouched entries stay
// zero. The adjoint swaps the roles of the sum and broadcast tables.
//
// A naive loop over all block assignments is kept as the reference; both
// run their additions in the same order, so results match bitwise.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "unf/basis.hpp"
#include "unf/errors.hpp"
#include "unf/ndarray.hpp"
#include "unf/wspec.hpp"

namespace unf {

namespace detail {

// Flat offsets of every assignment of the given blocks, last block fastest.
inline std::vector<std::int64_t> offset_table(const std::vector<int>& blocks,
                                              const std::vector<std::int64_t>& block_sizes,
                                              const std::vector<std::int64_t>& block_strides) {
  std::int64_t count = 1;
  for (int b : blocks) count *= block_sizes[b];
  std::vector<std::int64_t> table;
  table.reserve(count);
  std::vector<std::int64_t> idx(blocks.size(), 0);
  for (;;) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < blocks.size(); ++k) off += idx[k] * block_strides[blocks[k]];
    table.push_back(off);
    std::size_t k = blocks.size();
    while (k > 0) {
      --k;
      if (++idx[k] < block_sizes[blocks[k]]) break;
      idx[k] = 0;
      if (k == 0) return table;
    }
    if (blocks.empty()) return table;
  }
}

}  // namespace detail

class CompiledBasis {
 public:
  CompiledBasis(const BasisDescriptor& d, const DimSizes& sizes) {
    const int nblocks = static_cast<int>(d.block_names.size());
    std::vector<std::int64_t> block_sizes(nblocks);
    for (int b = 0; b < nblocks; ++b) {
      auto it = sizes.find(d.block_names[b]);
      if (it == sizes.end()) {
        throw ShapeError("compile: missing size for dimension '" + d.block_names[b] + "'");
      }
      block_sizes[b] = it->second;
    }
    for (int c : d.in_chars) in_shape_.push_back(block_sizes[c]);
    for (int c : d.out_chars) out_shape_.push_back(block_sizes[c]);
    std::vector<std::int64_t> in_strides = row_major_strides(in_shape_);
    std::vector<std::int64_t> out_strides = row_major_strides(out_shape_);

    // stride of a block = sum of strides of the axes it labels
    std::vector<std::int64_t> block_in_stride(nblocks, 0);
    std::vector<std::int64_t> block_out_stride(nblocks, 0);
    for (std::size_t a = 0; a < d.in_chars.size(); ++a) {
      block_in_stride[d.in_chars[a]] += in_strides[a];
    }
    for (std::size_t a = 0; a < d.out_chars.size(); ++a) {
      block_out_stride[d.out_chars[a]] += out_strides[a];
    }

    std::vector<int> carry;
    for (int b = 0; b < nblocks; ++b) {
      bool summed = std::find(d.sum_chars.begin(), d.sum_chars.end(), b) != d.sum_chars.end();
      bool bcast =
          std::find(d.broadcast_chars.begin(), d.broadcast_chars.end(), b) != d.broadcast_chars.end();
      if (!summed && !bcast) carry.push_back(b);
    }
    carry_in_ = detail::offset_table(carry, block_sizes, block_in_stride);
    carry_out_ = detail::offset_table(carry, block_sizes, block_out_stride);
    sum_in_ = detail::offset_table(d.sum_chars, block_sizes, block_in_stride);
    bcast_out_ = detail::offset_table(d.broadcast_chars, block_sizes, block_out_stride);
    in_size_ = shape_size(in_shape_);
    out_size_ = shape_size(out_shape_);
  }

  const std::vector<std::int64_t>& in_shape() const { return in_shape_; }
  const std::vector<std::int64_t>& out_shape() const { return out_shape_; }
  std::int64_t in_size() const { return in_size_; }
  std::int64_t out_size() const { return out_size_; }

  // out must hold out_size() entries; it is overwritten.
  template <class T>
  void apply(const T* x, T* out) const {
    std::fill(out, out + out_size_, T{0});
    for (std::size_t c = 0; c < carry_in_.size(); ++c) {
      const T* xc = x + carry_in_[c];
      T acc{0};
      for (std::int64_t so : sum_in_) acc += xc[so];
      T* oc = out + carry_out_[c];
      for (std::int64_t bo : bcast_out_) oc[bo] = acc;
    }
  }

  // grad_in must hold in_size() entries; satisfies <apply(x), g> == <x, adjoint(g)>.
  template <class T>
  void apply_adjoint(const T* g, T* grad_in) const {
    std::fill(grad_in, grad_in + in_size_, T{0});
    for (std::size_t c = 0; c < carry_in_.size(); ++c) {
      const T* gc = g + carry_out_[c];
      T acc{0};
      for (std::int64_t bo : bcast_out_) acc += gc[bo];
      T* ic = grad_in + carry_in_[c];
      for (std::int64_t so : sum_in_) ic[so] = acc;
    }
  }

  // Forward with the result scaled and accumulated: out += scale * E(x).
  template <class T>
  void apply_scaled_add(const T* x, T scale, T* out) const {
    for (std::size_t c = 0; c < carry_in_.size(); ++c) {
      const T* xc = x + carry_in_[c];
      T acc{0};
      for (std::int64_t so : sum_in_) acc += xc[so];
      acc *= scale;
      T* oc = out + carry_out_[c];
      for (std::int64_t bo : bcast_out_) oc[bo] += acc;
    }
  }

  // Adjoint, scaled and accumulated: grad_in += scale * A(g).
  template <class T>
  void apply_adjoint_scaled_add(const T* g, T scale, T* grad_in) const {
    for (std::size_t c = 0; c < carry_in_.size(); ++c) {
      const T* gc = g + carry_out_[c];
      T acc{0};
      for (std::int64_t bo : bcast_out_) acc += gc[bo];
      acc *= scale;
      T* ic = grad_in + carry_in_[c];
      for (std::int64_t so : sum_in_) ic[so] += acc;
    }
  }

 private:
  std::vector<std::int64_t> in_shape_, out_shape_;
  std::vector<std::int64_t> carry_in_, carry_out_, sum_in_, bcast_out_;
  std::int64_t in_size_ = 0, out_size_ = 0;
};

template <class T>
NdArray<T> apply_basis(const BasisDescriptor& d, const DimSizes& sizes, const NdArray<T>& x) {
  CompiledBasis plan(d, sizes);
  if (!shape_equal(x.shape(), plan.in_shape())) {
    throw ShapeError("apply_basis: input shape " + shape_to_string(x.shape()) + " != expected " +
                     shape_to_string(plan.in_shape()));
  }
  NdArray<T> out(plan.out_shape());
  plan.apply(x.data(), out.data());
  return out;
}

template <class T>
NdArray<T> apply_basis_adjoint(const BasisDescriptor& d, const DimSizes& sizes,
                               const NdArray<T>& grad_out) {
  CompiledBasis plan(d, sizes);
  if (!shape_equal(grad_out.shape(), plan.out_shape())) {
    throw ShapeError("apply_basis_adjoint: grad shape " + shape_to_string(grad_out.shape()) +
                     " != expected " + shape_to_string(plan.out_shape()));
  }
  NdArray<T> grad_in(plan.in_shape());
  plan.apply_adjoint(grad_out.data(), grad_in.data());
  return grad_in;
}

// Reference implementation: loop over every assignment of a value to every
// block (block 0 outermost) and accumulate input entries into the output
// position named by the assignment.
template <class T>
NdArray<T> naive_apply_basis(const BasisDescriptor& d, const DimSizes& sizes, const NdArray<T>& x) {
  const int nblocks = static_cast<int>(d.block_names.size());
  std::vector<std::int64_t> block_sizes(nblocks);
  for (int b = 0; b < nblocks; ++b) block_sizes[b] = sizes.at(d.block_names[b]);

  std::vector<std::int64_t> in_shape, out_shape;
  for (int c : d.in_chars) in_shape.push_back(block_sizes[c]);
  for (int c : d.out_chars) out_shape.push_back(block_sizes[c]);
  if (!shape_equal(x.shape(), in_shape)) {
    throw ShapeError("naive_apply_basis: input shape mismatch");
  }
  NdArray<T> out(out_shape);

  std::vector<std::int64_t> v(nblocks, 0);
  std::vector<std::int64_t> in_idx(d.in_chars.size());
  std::vector<std::int64_t> out_idx(d.out_chars.size());
  for (;;) {
    for (std::size_t a = 0; a < d.in_chars.size(); ++a) in_idx[a] = v[d.in_chars[a]];
    for (std::size_t a = 0; a < d.out_chars.size(); ++a) out_idx[a] = v[d.out_chars[a]];
    out[out.flat_index(out_idx)] += x[x.flat_index(in_idx)];
    int b = nblocks;
    while (b > 0) {
      --b;
      if (++v[b] < block_sizes[b]) break;
      v[b] = 0;
      if (b == 0) return out;
    }
    if (nblocks == 0) return out;
  }
}

}  // namespace unf
