#pragma once

// Weight-space layers and deep models.
//
// EquivariantLayer: for every ordered tensor pair (out, in) and every basis
// function of that pair, a learned c_out x c_in mixing matrix; the output
// tensor is the sum over input tensors, basis functions and input channels.
// Bias is one scalar per output tensor per output channel, broadcast over
// entries (a constant broadcast is itself an equivariant map).
//
// DeepSetLayer: y[k'] = sum_k Lambda[k',k] x[k] + Gamma[k',k] mean(x[k]) +
// bias[k'], applied entrywise, where the mean runs over every entry of every
// tensor. Nonlinearities are separate blocks.
//
// UNFModel: a block sequence (equivariant / deep-set / relu / invariant
// pooling / dense) with forward, reverse-mode parameter gradients, and a
// flat parameter vector for black-box training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "unf/basis.hpp"
#include "unf/basis_exec.hpp"
#include "unf/errors.hpp"
#include "unf/ndarray.hpp"
#include "unf/rng.hpp"
#include "unf/wspec.hpp"

namespace unf {

enum class InitScheme { zero, scaled_normal };

template <class T = double>
class EquivariantLayer {
 public:
  struct Pair {
    std::size_t out_tensor, in_tensor;
    std::vector<BasisDescriptor> descriptors;
    std::vector<CompiledBasis> plans;
    std::int64_t coef_offset;
  };

  EquivariantLayer() = default;

  EquivariantLayer(std::shared_ptr<const WeightSpaceSpec> spec, DimSizes sizes, std::int64_t c_in,
                   std::int64_t c_out, bool with_bias, std::int64_t basis_cap = kDefaultBasisCap)
      : spec_(std::move(spec)), sizes_(std::move(sizes)), c_in_(c_in), c_out_(c_out),
        with_bias_(with_bias) {
    if (c_in_ < 1 || c_out_ < 1) throw ShapeError("EquivariantLayer: channels must be >= 1");
    validate_sizes(*spec_, sizes_);
    const std::size_t L = spec_->size();
    std::int64_t offset = 0;
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t m = 0; m < L; ++m) {
        Pair p;
        p.out_tensor = l;
        p.in_tensor = m;
        p.descriptors =
            pair_basis_dims(spec_->tensor(l).dims, spec_->tensor(m).dims, basis_cap);
        for (const auto& d : p.descriptors) p.plans.emplace_back(d, sizes_);
        p.coef_offset = offset;
        offset += static_cast<std::int64_t>(p.descriptors.size()) * c_out_ * c_in_;
        pairs_.push_back(std::move(p));
      }
    }
    bias_offset_ = offset;
    if (with_bias_) offset += static_cast<std::int64_t>(L) * c_out_;
    params_.assign(offset, T{0});
  }

  const WeightSpaceSpec& spec() const { return *spec_; }
  std::shared_ptr<const WeightSpaceSpec> spec_ptr() const { return spec_; }
  const DimSizes& sizes() const { return sizes_; }
  std::int64_t c_in() const { return c_in_; }
  std::int64_t c_out() const { return c_out_; }
  bool with_bias() const { return with_bias_; }
  const std::vector<Pair>& pairs() const { return pairs_; }

  std::int64_t param_count() const { return static_cast<std::int64_t>(params_.size()); }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  T& coef(std::size_t pair_idx, std::size_t b, std::int64_t k_out, std::int64_t k_in) {
    return params_[coef_index(pair_idx, b, k_out, k_in)];
  }
  std::int64_t coef_index(std::size_t pair_idx, std::size_t b, std::int64_t k_out,
                          std::int64_t k_in) const {
    const Pair& p = pairs_[pair_idx];
    return p.coef_offset + (static_cast<std::int64_t>(b) * c_out_ + k_out) * c_in_ + k_in;
  }
  std::int64_t bias_index(std::size_t tensor_idx, std::int64_t k_out) const {
    return bias_offset_ + static_cast<std::int64_t>(tensor_idx) * c_out_ + k_out;
  }

  // Sum over input tensors of per-output-tensor basis counts.
  std::int64_t basis_total_into(std::size_t out_tensor) const {
    std::int64_t total = 0;
    for (const auto& p : pairs_) {
      if (p.out_tensor == out_tensor) total += static_cast<std::int64_t>(p.descriptors.size());
    }
    return total;
  }

  void init(InitScheme scheme, Rng& rng) {
    std::fill(params_.begin(), params_.end(), T{0});
    if (scheme == InitScheme::zero) return;
    for (const auto& p : pairs_) {
      T stddev = T{1} / std::sqrt(static_cast<T>(c_in_ * basis_total_into(p.out_tensor)));
      std::int64_t n = static_cast<std::int64_t>(p.descriptors.size()) * c_out_ * c_in_;
      for (std::int64_t j = 0; j < n; ++j) {
        params_[p.coef_offset + j] = stddev * static_cast<T>(rng.normal());
      }
    }
  }

  WeightValues<T> apply(const WeightValues<T>& w) const {
    if (w.channels() != c_in_ || !(w.spec() == *spec_)) {
      throw ShapeError("EquivariantLayer: input does not match layer spec/channels");
    }
    WeightValues<T> out(spec_, sizes_, c_out_);
    std::vector<T> scratch(max_out_entries());
    for (const auto& p : pairs_) {
      for (std::size_t b = 0; b < p.plans.size(); ++b) {
        const CompiledBasis& plan = p.plans[b];
        for (std::int64_t k_in = 0; k_in < c_in_; ++k_in) {
          plan.apply(w.channel_data(p.in_tensor, k_in), scratch.data());
          for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
            T coef = params_[coef_index_of(p, b, k_out, k_in)];
            if (coef == T{0}) continue;
            T* dst = out.channel_data(p.out_tensor, k_out);
            for (std::int64_t e = 0; e < plan.out_size(); ++e) dst[e] += coef * scratch[e];
          }
        }
      }
    }
    if (with_bias_) {
      for (std::size_t l = 0; l < spec_->size(); ++l) {
        for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
          T bv = params_[bias_index(l, k_out)];
          if (bv == T{0}) continue;
          T* dst = out.channel_data(l, k_out);
          for (std::int64_t e = 0; e < out.entry_count(l); ++e) dst[e] += bv;
        }
      }
    }
    return out;
  }

  // Returns the input gradient and accumulates parameter gradients into
  // grad_params (layout identical to params()).
  WeightValues<T> vjp(const WeightValues<T>& w, const WeightValues<T>& grad_out,
                      std::vector<T>& grad_params) const {
    if (grad_out.channels() != c_out_ || !(grad_out.spec() == *spec_)) {
      throw ShapeError("EquivariantLayer: grad does not match layer spec/channels");
    }
    if (w.channels() != c_in_) throw ShapeError("EquivariantLayer: input channel mismatch");
    if (grad_params.size() != params_.size()) {
      throw ShapeError("EquivariantLayer: grad_params size mismatch");
    }
    WeightValues<T> grad_in(spec_, sizes_, c_in_);
    std::vector<T> scratch(max_in_entries());
    for (const auto& p : pairs_) {
      for (std::size_t b = 0; b < p.plans.size(); ++b) {
        const CompiledBasis& plan = p.plans[b];
        for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
          plan.apply_adjoint(grad_out.channel_data(p.out_tensor, k_out), scratch.data());
          for (std::int64_t k_in = 0; k_in < c_in_; ++k_in) {
            const T* x = w.channel_data(p.in_tensor, k_in);
            T dot_val{0};
            for (std::int64_t e = 0; e < plan.in_size(); ++e) dot_val += scratch[e] * x[e];
            grad_params[coef_index_of(p, b, k_out, k_in)] += dot_val;
            T coef = params_[coef_index_of(p, b, k_out, k_in)];
            if (coef == T{0}) continue;
            T* dst = grad_in.channel_data(p.in_tensor, k_in);
            for (std::int64_t e = 0; e < plan.in_size(); ++e) dst[e] += coef * scratch[e];
          }
        }
      }
    }
    if (with_bias_) {
      for (std::size_t l = 0; l < spec_->size(); ++l) {
        for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
          const T* g = grad_out.channel_data(l, k_out);
          T s{0};
          for (std::int64_t e = 0; e < grad_out.entry_count(l); ++e) s += g[e];
          grad_params[bias_index(l, k_out)] += s;
        }
      }
    }
    return grad_in;
  }

 private:
  std::int64_t coef_index_of(const Pair& p, std::size_t b, std::int64_t k_out,
                             std::int64_t k_in) const {
    return p.coef_offset + (static_cast<std::int64_t>(b) * c_out_ + k_out) * c_in_ + k_in;
  }
  std::int64_t max_out_entries() const {
    std::int64_t m = 1;
    for (const auto& p : pairs_) {
      for (const auto& plan : p.plans) m = std::max(m, plan.out_size());
    }
    return m;
  }
  std::int64_t max_in_entries() const {
    std::int64_t m = 1;
    for (const auto& p : pairs_) {
      for (const auto& plan : p.plans) m = std::max(m, plan.in_size());
    }
    return m;
  }

  std::shared_ptr<const WeightSpaceSpec> spec_;
  DimSizes sizes_;
  std::int64_t c_in_ = 0, c_out_ = 0;
  bool with_bias_ = false;
  std::vector<Pair> pairs_;
  std::vector<T> params_;
  std::int64_t bias_offset_ = 0;
};

template <class T = double>
class DeepSetLayer {
 public:
  DeepSetLayer() = default;

  DeepSetLayer(std::shared_ptr<const WeightSpaceSpec> spec, DimSizes sizes, std::int64_t c_in,
               std::int64_t c_out)
      : spec_(std::move(spec)), sizes_(std::move(sizes)), c_in_(c_in), c_out_(c_out) {
    if (c_in_ < 1 || c_out_ < 1) throw ShapeError("DeepSetLayer: channels must be >= 1");
    validate_sizes(*spec_, sizes_);
    params_.assign(2 * c_out_ * c_in_ + c_out_, T{0});
  }

  const WeightSpaceSpec& spec() const { return *spec_; }
  std::int64_t c_in() const { return c_in_; }
  std::int64_t c_out() const { return c_out_; }
  std::int64_t param_count() const { return static_cast<std::int64_t>(params_.size()); }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  std::int64_t lambda_index(std::int64_t k_out, std::int64_t k_in) const {
    return k_out * c_in_ + k_in;
  }
  std::int64_t gamma_index(std::int64_t k_out, std::int64_t k_in) const {
    return c_out_ * c_in_ + k_out * c_in_ + k_in;
  }
  std::int64_t bias_index(std::int64_t k_out) const { return 2 * c_out_ * c_in_ + k_out; }

  void init(InitScheme scheme, Rng& rng) {
    std::fill(params_.begin(), params_.end(), T{0});
    if (scheme == InitScheme::zero) return;
    T stddev = T{1} / std::sqrt(static_cast<T>(2 * c_in_));
    for (std::int64_t j = 0; j < 2 * c_out_ * c_in_; ++j) {
      params_[j] = stddev * static_cast<T>(rng.normal());
    }
  }

  WeightValues<T> apply(const WeightValues<T>& w) const {
    if (w.channels() != c_in_ || !(w.spec() == *spec_)) {
      throw ShapeError("DeepSetLayer: input does not match layer spec/channels");
    }
    std::vector<T> mean = channel_means(w);
    WeightValues<T> out(spec_, sizes_, c_out_);
    for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
      T base = params_[bias_index(k_out)];
      for (std::int64_t k_in = 0; k_in < c_in_; ++k_in) {
        base += params_[gamma_index(k_out, k_in)] * mean[k_in];
      }
      for (std::size_t l = 0; l < w.tensor_count(); ++l) {
        T* dst = out.channel_data(l, k_out);
        std::int64_t n = out.entry_count(l);
        std::fill(dst, dst + n, base);
        for (std::int64_t k_in = 0; k_in < c_in_; ++k_in) {
          T lam = params_[lambda_index(k_out, k_in)];
          if (lam == T{0}) continue;
          const T* x = w.channel_data(l, k_in);
          for (std::int64_t e = 0; e < n; ++e) dst[e] += lam * x[e];
        }
      }
    }
    return out;
  }

  WeightValues<T> vjp(const WeightValues<T>& w, const WeightValues<T>& grad_out,
                      std::vector<T>& grad_params) const {
    if (grad_out.channels() != c_out_) throw ShapeError("DeepSetLayer: grad channel mismatch");
    if (w.channels() != c_in_) throw ShapeError("DeepSetLayer: input channel mismatch");
    if (grad_params.size() != params_.size()) throw ShapeError("DeepSetLayer: grad_params size");
    const T total = static_cast<T>(w.total_entries());
    std::vector<T> mean = channel_means(w);
    std::vector<T> grad_sum(c_out_, T{0});
    for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
      T s{0};
      for (std::size_t l = 0; l < w.tensor_count(); ++l) {
        const T* g = grad_out.channel_data(l, k_out);
        for (std::int64_t e = 0; e < grad_out.entry_count(l); ++e) s += g[e];
      }
      grad_sum[k_out] = s;
      grad_params[bias_index(k_out)] += s;
      for (std::int64_t k_in = 0; k_in < c_in_; ++k_in) {
        grad_params[gamma_index(k_out, k_in)] += s * mean[k_in];
        T dot_val{0};
        for (std::size_t l = 0; l < w.tensor_count(); ++l) {
          const T* g = grad_out.channel_data(l, k_out);
          const T* x = w.channel_data(l, k_in);
          for (std::int64_t e = 0; e < w.entry_count(l); ++e) dot_val += g[e] * x[e];
        }
        grad_params[lambda_index(k_out, k_in)] += dot_val;
      }
    }
    WeightValues<T> grad_in(spec_, sizes_, c_in_);
    for (std::int64_t k_in = 0; k_in < c_in_; ++k_in) {
      T mean_term{0};
      for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
        mean_term += params_[gamma_index(k_out, k_in)] * grad_sum[k_out];
      }
      mean_term /= total;
      for (std::size_t l = 0; l < w.tensor_count(); ++l) {
        T* dst = grad_in.channel_data(l, k_in);
        std::int64_t n = w.entry_count(l);
        std::fill(dst, dst + n, mean_term);
        for (std::int64_t k_out = 0; k_out < c_out_; ++k_out) {
          T lam = params_[lambda_index(k_out, k_in)];
          if (lam == T{0}) continue;
          const T* g = grad_out.channel_data(l, k_out);
          for (std::int64_t e = 0; e < n; ++e) dst[e] += lam * g[e];
        }
      }
    }
    return grad_in;
  }

 private:
  std::vector<T> channel_means(const WeightValues<T>& w) const {
    std::vector<T> mean(c_in_, T{0});
    for (std::int64_t k = 0; k < c_in_; ++k) {
      T s{0};
      for (std::size_t l = 0; l < w.tensor_count(); ++l) {
        const T* x = w.channel_data(l, k);
        for (std::int64_t e = 0; e < w.entry_count(l); ++e) s += x[e];
      }
      mean[k] = s / static_cast<T>(w.total_entries());
    }
    return mean;
  }

  std::shared_ptr<const WeightSpaceSpec> spec_;
  DimSizes sizes_;
  std::int64_t c_in_ = 0, c_out_ = 0;
  std::vector<T> params_;
};

// Per tensor and channel, the sum over all entries; spec order then channel.
template <class T>
std::vector<T> invariant_pool(const WeightValues<T>& w) {
  std::vector<T> out(w.tensor_count() * w.channels(), T{0});
  for (std::size_t l = 0; l < w.tensor_count(); ++l) {
    for (std::int64_t k = 0; k < w.channels(); ++k) {
      const T* x = w.channel_data(l, k);
      T s{0};
      for (std::int64_t e = 0; e < w.entry_count(l); ++e) s += x[e];
      out[l * w.channels() + k] = s;
    }
  }
  return out;
}

// Per tensor and channel: mean, population variance, min, 25th, 50th, 75th
// percentile, max. Percentiles interpolate linearly at rank p*(n-1).
template <class T>
std::vector<T> statnn_features(const WeightValues<T>& w) {
  std::vector<T> out;
  out.reserve(w.tensor_count() * w.channels() * 7);
  std::vector<T> sorted;
  for (std::size_t l = 0; l < w.tensor_count(); ++l) {
    const std::int64_t n = w.entry_count(l);
    for (std::int64_t k = 0; k < w.channels(); ++k) {
      const T* x = w.channel_data(l, k);
      T mean{0};
      for (std::int64_t e = 0; e < n; ++e) mean += x[e];
      mean /= static_cast<T>(n);
      T var{0};
      for (std::int64_t e = 0; e < n; ++e) var += (x[e] - mean) * (x[e] - mean);
      var /= static_cast<T>(n);
      sorted.assign(x, x + n);
      std::sort(sorted.begin(), sorted.end());
      auto percentile = [&](double p) {
        double r = p * static_cast<double>(n - 1);
        std::int64_t lo = static_cast<std::int64_t>(r);
        std::int64_t hi = std::min(lo + 1, n - 1);
        T frac = static_cast<T>(r - static_cast<double>(lo));
        return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
      };
      out.push_back(mean);
      out.push_back(var);
      out.push_back(sorted.front());
      out.push_back(percentile(0.25));
      out.push_back(percentile(0.50));
      out.push_back(percentile(0.75));
      out.push_back(sorted.back());
    }
  }
  return out;
}

struct ReluBlock {};
struct PoolBlock {};

template <class T = double>
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(std::int64_t n_in, std::int64_t n_out) : n_in_(n_in), n_out_(n_out) {
    if (n_in_ < 1 || n_out_ < 1) throw ShapeError("DenseBlock: sizes must be >= 1");
    params_.assign(n_out_ * n_in_ + n_out_, T{0});
  }

  std::int64_t n_in() const { return n_in_; }
  std::int64_t n_out() const { return n_out_; }
  std::int64_t param_count() const { return static_cast<std::int64_t>(params_.size()); }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  void init(InitScheme scheme, Rng& rng) {
    std::fill(params_.begin(), params_.end(), T{0});
    if (scheme == InitScheme::zero) return;
    T stddev = T{1} / std::sqrt(static_cast<T>(n_in_));
    for (std::int64_t j = 0; j < n_out_ * n_in_; ++j) {
      params_[j] = stddev * static_cast<T>(rng.normal());
    }
  }

  std::vector<T> apply(const std::vector<T>& x) const {
    if (static_cast<std::int64_t>(x.size()) != n_in_) throw ShapeError("DenseBlock: input size");
    std::vector<T> y(n_out_);
    for (std::int64_t i = 0; i < n_out_; ++i) {
      T acc = params_[n_out_ * n_in_ + i];
      const T* row = params_.data() + i * n_in_;
      for (std::int64_t j = 0; j < n_in_; ++j) acc += row[j] * x[j];
      y[i] = acc;
    }
    return y;
  }

  std::vector<T> vjp(const std::vector<T>& x, const std::vector<T>& g,
                     std::vector<T>& grad_params) const {
    if (grad_params.size() != params_.size()) throw ShapeError("DenseBlock: grad_params size");
    std::vector<T> gx(n_in_, T{0});
    for (std::int64_t i = 0; i < n_out_; ++i) {
      grad_params[n_out_ * n_in_ + i] += g[i];
      const T* row = params_.data() + i * n_in_;
      T* grow = grad_params.data() + i * n_in_;
      for (std::int64_t j = 0; j < n_in_; ++j) {
        grow[j] += g[i] * x[j];
        gx[j] += row[j] * g[i];
      }
    }
    return gx;
  }

 private:
  std::int64_t n_in_ = 0, n_out_ = 0;
  std::vector<T> params_;
};

template <class T = double>
using ModelBlock =
    std::variant<EquivariantLayer<T>, DeepSetLayer<T>, ReluBlock, PoolBlock, DenseBlock<T>>;

template <class T = double>
using ModelValue = std::variant<WeightValues<T>, std::vector<T>>;

namespace detail {

template <class T>
ModelValue<T> relu_forward(const ModelValue<T>& v) {
  if (std::holds_alternative<WeightValues<T>>(v)) {
    WeightValues<T> out = std::get<WeightValues<T>>(v);
    for (std::size_t l = 0; l < out.tensor_count(); ++l) {
      for (auto& e : out.tensor(l).values()) e = e > T{0} ? e : T{0};
    }
    return out;
  }
  std::vector<T> out = std::get<std::vector<T>>(v);
  for (auto& e : out) e = e > T{0} ? e : T{0};
  return out;
}

template <class T>
ModelValue<T> relu_backward(const ModelValue<T>& x, const ModelValue<T>& g) {
  if (std::holds_alternative<WeightValues<T>>(x)) {
    WeightValues<T> out = std::get<WeightValues<T>>(g);
    const auto& in = std::get<WeightValues<T>>(x);
    for (std::size_t l = 0; l < out.tensor_count(); ++l) {
      T* ge = out.tensor(l).data();
      const T* xe = in.tensor(l).data();
      for (std::int64_t e = 0; e < out.tensor(l).size(); ++e) {
        if (!(xe[e] > T{0})) ge[e] = T{0};
      }
    }
    return out;
  }
  std::vector<T> out = std::get<std::vector<T>>(g);
  const auto& in = std::get<std::vector<T>>(x);
  for (std::size_t e = 0; e < out.size(); ++e) {
    if (!(in[e] > T{0})) out[e] = T{0};
  }
  return out;
}

}  // namespace detail

template <class T = double>
class UNFModel {
 public:
  UNFModel() = default;
  UNFModel(std::shared_ptr<const WeightSpaceSpec> spec, DimSizes sizes)
      : spec_(std::move(spec)), sizes_(std::move(sizes)) {}

  const WeightSpaceSpec& spec() const { return *spec_; }
  std::shared_ptr<const WeightSpaceSpec> spec_ptr() const { return spec_; }
  const DimSizes& sizes() const { return sizes_; }
  std::vector<ModelBlock<T>>& blocks() { return blocks_; }
  const std::vector<ModelBlock<T>>& blocks() const { return blocks_; }

  void add_equivariant(std::int64_t c_in, std::int64_t c_out, bool bias = true) {
    blocks_.push_back(EquivariantLayer<T>(spec_, sizes_, c_in, c_out, bias));
  }
  void add_deepset(std::int64_t c_in, std::int64_t c_out) {
    blocks_.push_back(DeepSetLayer<T>(spec_, sizes_, c_in, c_out));
  }
  void add_relu() { blocks_.push_back(ReluBlock{}); }
  void add_pool() { blocks_.push_back(PoolBlock{}); }
  void add_dense(std::int64_t n_in, std::int64_t n_out) {
    blocks_.push_back(DenseBlock<T>(n_in, n_out));
  }

  std::int64_t param_count() const {
    std::int64_t total = 0;
    for (const auto& block : blocks_) total += block_param_count(block);
    return total;
  }

  std::vector<T> get_params() const {
    std::vector<T> flat;
    flat.reserve(param_count());
    for (const auto& block : blocks_) {
      if (const auto* e = std::get_if<EquivariantLayer<T>>(&block)) {
        flat.insert(flat.end(), e->params().begin(), e->params().end());
      } else if (const auto* d = std::get_if<DeepSetLayer<T>>(&block)) {
        flat.insert(flat.end(), d->params().begin(), d->params().end());
      } else if (const auto* f = std::get_if<DenseBlock<T>>(&block)) {
        flat.insert(flat.end(), f->params().begin(), f->params().end());
      }
    }
    return flat;
  }

  void set_params(const std::vector<T>& flat) {
    if (static_cast<std::int64_t>(flat.size()) != param_count()) {
      throw ShapeError("set_params: expected " + std::to_string(param_count()) + " values, got " +
                       std::to_string(flat.size()));
    }
    std::size_t pos = 0;
    for (auto& block : blocks_) {
      std::vector<T>* params = nullptr;
      if (auto* e = std::get_if<EquivariantLayer<T>>(&block)) {
        params = &e->params();
      } else if (auto* d = std::get_if<DeepSetLayer<T>>(&block)) {
        params = &d->params();
      } else if (auto* f = std::get_if<DenseBlock<T>>(&block)) {
        params = &f->params();
      }
      if (!params) continue;
      std::copy(flat.begin() + pos, flat.begin() + pos + params->size(), params->begin());
      pos += params->size();
    }
  }

  void init(InitScheme scheme, Rng& rng) {
    for (auto& block : blocks_) {
      if (auto* e = std::get_if<EquivariantLayer<T>>(&block)) {
        e->init(scheme, rng);
      } else if (auto* d = std::get_if<DeepSetLayer<T>>(&block)) {
        d->init(scheme, rng);
      } else if (auto* f = std::get_if<DenseBlock<T>>(&block)) {
        f->init(scheme, rng);
      }
    }
  }

  // Zeroes the last parameter-bearing block so the model's output is zero.
  void zero_final_block() {
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      if (auto* e = std::get_if<EquivariantLayer<T>>(&*it)) {
        std::fill(e->params().begin(), e->params().end(), T{0});
        return;
      }
      if (auto* d = std::get_if<DeepSetLayer<T>>(&*it)) {
        std::fill(d->params().begin(), d->params().end(), T{0});
        return;
      }
      if (auto* f = std::get_if<DenseBlock<T>>(&*it)) {
        std::fill(f->params().begin(), f->params().end(), T{0});
        return;
      }
    }
  }

  ModelValue<T> forward(const WeightValues<T>& w) const {
    ModelValue<T> v = w;
    for (std::size_t i = 0; i < blocks_.size(); ++i) v = block_forward(i, v);
    return v;
  }

  // Inputs seen by each block, plus the final output at the back.
  std::vector<ModelValue<T>> forward_trace(const WeightValues<T>& w) const {
    std::vector<ModelValue<T>> trace;
    trace.reserve(blocks_.size() + 1);
    trace.push_back(ModelValue<T>(w));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      trace.push_back(block_forward(i, trace.back()));
    }
    return trace;
  }

  // Reverse-mode sweep from a gradient on the model output; returns the
  // gradient on w and fills grad_params (layout of get_params()).
  WeightValues<T> backward(const WeightValues<T>& w, const ModelValue<T>& grad_output,
                           std::vector<T>& grad_params) const {
    std::vector<ModelValue<T>> trace = forward_trace(w);
    grad_params.assign(param_count(), T{0});
    std::vector<std::size_t> offsets(blocks_.size(), 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      offsets[i] = pos;
      pos += block_param_count(blocks_[i]);
    }
    ModelValue<T> g = grad_output;
    for (std::size_t ri = blocks_.size(); ri > 0; --ri) {
      std::size_t i = ri - 1;
      g = block_backward(i, trace[i], g, grad_params, offsets[i]);
    }
    return std::get<WeightValues<T>>(g);
  }

 private:
  static std::int64_t block_param_count(const ModelBlock<T>& block) {
    if (const auto* e = std::get_if<EquivariantLayer<T>>(&block)) return e->param_count();
    if (const auto* d = std::get_if<DeepSetLayer<T>>(&block)) return d->param_count();
    if (const auto* f = std::get_if<DenseBlock<T>>(&block)) return f->param_count();
    return 0;
  }

  ModelValue<T> block_forward(std::size_t i, const ModelValue<T>& v) const {
    const ModelBlock<T>& block = blocks_[i];
    try {
      if (const auto* e = std::get_if<EquivariantLayer<T>>(&block)) {
        return e->apply(std::get<WeightValues<T>>(v));
      }
      if (const auto* d = std::get_if<DeepSetLayer<T>>(&block)) {
        return d->apply(std::get<WeightValues<T>>(v));
      }
      if (std::holds_alternative<ReluBlock>(block)) return detail::relu_forward(v);
      if (std::holds_alternative<PoolBlock>(block)) {
        return invariant_pool(std::get<WeightValues<T>>(v));
      }
      return std::get<DenseBlock<T>>(block).apply(std::get<std::vector<T>>(v));
    } catch (const std::bad_variant_access&) {
      throw ShapeError("model: value kind mismatch at block " + std::to_string(i));
    }
  }

  ModelValue<T> block_backward(std::size_t i, const ModelValue<T>& input, const ModelValue<T>& g,
                               std::vector<T>& grad_params, std::size_t offset) const {
    const ModelBlock<T>& block = blocks_[i];
    try {
      if (const auto* e = std::get_if<EquivariantLayer<T>>(&block)) {
        std::vector<T> gp(e->param_count(), T{0});
        WeightValues<T> gin = e->vjp(std::get<WeightValues<T>>(input),
                                     std::get<WeightValues<T>>(g), gp);
        std::copy(gp.begin(), gp.end(), grad_params.begin() + offset);
        return gin;
      }
      if (const auto* d = std::get_if<DeepSetLayer<T>>(&block)) {
        std::vector<T> gp(d->param_count(), T{0});
        WeightValues<T> gin =
            d->vjp(std::get<WeightValues<T>>(input), std::get<WeightValues<T>>(g), gp);
        std::copy(gp.begin(), gp.end(), grad_params.begin() + offset);
        return gin;
      }
      if (std::holds_alternative<ReluBlock>(block)) return detail::relu_backward(input, g);
      if (std::holds_alternative<PoolBlock>(block)) {
        const auto& w = std::get<WeightValues<T>>(input);
        const auto& gv = std::get<std::vector<T>>(g);
        WeightValues<T> gin(w.spec_ptr(), w.sizes(), w.channels());
        for (std::size_t l = 0; l < w.tensor_count(); ++l) {
          for (std::int64_t k = 0; k < w.channels(); ++k) {
            T* dst = gin.channel_data(l, k);
            T val = gv[l * w.channels() + k];
            std::fill(dst, dst + w.entry_count(l), val);
          }
        }
        return gin;
      }
      const auto& f = std::get<DenseBlock<T>>(block);
      std::vector<T> gp(f.param_count(), T{0});
      std::vector<T> gin = f.vjp(std::get<std::vector<T>>(input), std::get<std::vector<T>>(g), gp);
      std::copy(gp.begin(), gp.end(), grad_params.begin() + offset);
      return gin;
    } catch (const std::bad_variant_access&) {
      throw ShapeError("model: value kind mismatch at block " + std::to_string(i));
    }
  }

  std::shared_ptr<const WeightSpaceSpec> spec_;
  DimSizes sizes_;
  std::vector<ModelBlock<T>> blocks_;
};

struct BlockCount {
  std::string kind;
  std::int64_t params = 0;
  // per ordered tensor pair: out id, in id, basis functions
  std::vector<std::tuple<std::string, std::string, std::int64_t>> pair_basis;
};

struct ParameterCount {
  std::int64_t total = 0;
  std::vector<BlockCount> blocks;
};

template <class T>
ParameterCount count_parameters(const UNFModel<T>& model) {
  ParameterCount result;
  for (const auto& block : model.blocks()) {
    BlockCount bc;
    if (const auto* e = std::get_if<EquivariantLayer<T>>(&block)) {
      bc.kind = "equivariant";
      bc.params = e->param_count();
      for (const auto& p : e->pairs()) {
        bc.pair_basis.emplace_back(model.spec().tensor(p.out_tensor).id,
                                   model.spec().tensor(p.in_tensor).id,
                                   static_cast<std::int64_t>(p.descriptors.size()));
      }
    } else if (const auto* d = std::get_if<DeepSetLayer<T>>(&block)) {
      bc.kind = "deepset";
      bc.params = d->param_count();
    } else if (std::holds_alternative<ReluBlock>(block)) {
      bc.kind = "relu";
    } else if (std::holds_alternative<PoolBlock>(block)) {
      bc.kind = "pool";
    } else {
      bc.kind = "dense";
      bc.params = std::get<DenseBlock<T>>(block).param_count();
    }
    result.total += bc.params;
    result.blocks.push_back(std::move(bc));
  }
  return result;
}

}  // namespace unf
