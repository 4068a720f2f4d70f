#pragma once

// Learned optimizer on a desk-scale task. The update rule keeps every
// momentum m <- gamma*m + g and steps W <- W - alpha*(m_nominal + beta*f(.)),
// where f is a weight-space model fed 19 channels per entry: the weights,
// the gradient, six fixed-decay momenta, and an 11-channel sinusoidal
// encoding of the step count. alpha is kept positive through a softplus and
// the nominal decay gamma0 inside (0,1) through a sigmoid. With beta = 0 or
// no f the step reduces to SGD with momentum, bit for bit.
//
// Meta-training estimates gradients with antithetic evolution strategies
// over full short-horizon unrolls and follows them with Adam; each mirrored
// pair shares one task seed. The task is 4-class Gaussian-blobs
// classification with per-feature scale anisotropy, learned by a small MLP
// whose gradients are hand-coded.

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "unf/errors.hpp"
#include "unf/layers.hpp"
#include "unf/rng.hpp"
#include "unf/wspec.hpp"

namespace unf {

inline constexpr std::array<double, 6> kFeatureGammas{0.1, 0.5, 0.9, 0.99, 0.999, 0.9999};
inline constexpr int kTimeEncodings = 11;
inline constexpr int kFeatureChannels = 2 + 6 + kTimeEncodings;
inline constexpr std::uint64_t kEvalTaskBase = 1000000;
inline constexpr std::uint64_t kValTaskBase = 2000000;
inline constexpr double kDivergenceThreshold = 1e6;

template <class T>
T softplus(T x) {
  return x > T{30} ? x : std::log1p(std::exp(x));
}
template <class T>
T inv_softplus(T y) {
  return y > T{30} ? y : std::log(std::expm1(y));
}
template <class T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}
template <class T>
T logit(T p) {
  return std::log(p / (T{1} - p));
}

// ---------------------------------------------------------------------------
// Task: anisotropic Gaussian blobs, classified by a small relu MLP.

struct BlobsTaskConfig {
  int dims = 16;
  int classes = 4;
  int hidden = 16;
  int batch = 64;
  int horizon = 500;
  double noise = 0.5;                  // within-class spread before scaling
  double log10_scale_half_range = 0.5; // per-feature scales 10^U(-r, r)
};

template <class T = double>
class BlobsTask {
 public:
  BlobsTask(const BlobsTaskConfig& cfg, std::uint64_t task_seed) : cfg_(cfg) {
    Rng center_rng = Rng(task_seed).split("centers");
    centers_.resize(static_cast<std::size_t>(cfg_.classes) * cfg_.dims);
    for (auto& c : centers_) c = static_cast<T>(center_rng.normal());
    Rng scale_rng = Rng(task_seed).split("scales");
    scales_.resize(cfg_.dims);
    for (auto& s : scales_) {
      double u = (2.0 * scale_rng.uniform() - 1.0) * cfg_.log10_scale_half_range;
      s = static_cast<T>(std::pow(10.0, u));
    }
  }

  const BlobsTaskConfig& config() const { return cfg_; }
  const std::vector<T>& scales() const { return scales_; }

  // x: batch*dims row-major, y: batch labels
  void sample_batch(Rng& rng, std::vector<T>& x, std::vector<int>& y) const {
    x.resize(static_cast<std::size_t>(cfg_.batch) * cfg_.dims);
    y.resize(cfg_.batch);
    for (int b = 0; b < cfg_.batch; ++b) {
      int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.classes)));
      y[b] = label;
      const T* center = centers_.data() + static_cast<std::size_t>(label) * cfg_.dims;
      T* row = x.data() + static_cast<std::size_t>(b) * cfg_.dims;
      for (int j = 0; j < cfg_.dims; ++j) {
        row[j] = scales_[j] * (center[j] + static_cast<T>(cfg_.noise * rng.normal()));
      }
    }
  }

 private:
  BlobsTaskConfig cfg_;
  std::vector<T> centers_;
  std::vector<T> scales_;
};

// ---------------------------------------------------------------------------
// Inner MLP with hand-coded reverse mode. Weight layout follows the mlp
// preset: per layer a (n_out, n_in) weight and a (n_out) bias.

inline std::shared_ptr<const WeightSpaceSpec> mlp_task_spec(int depth) {
  std::vector<std::int64_t> widths(static_cast<std::size_t>(depth) + 1, 1);
  return std::make_shared<const WeightSpaceSpec>(
      preset_spec(PresetKind::mlp, depth, widths).tensors());
}

inline DimSizes mlp_task_sizes(const std::vector<std::int64_t>& widths) {
  return preset_sizes(PresetKind::mlp, static_cast<int>(widths.size()) - 1, widths);
}

inline std::shared_ptr<const WeightSpaceSpec> blobs_mlp_spec(const BlobsTaskConfig& cfg) {
  (void)cfg;
  return mlp_task_spec(2);
}

inline DimSizes blobs_mlp_sizes(const BlobsTaskConfig& cfg) {
  return mlp_task_sizes({cfg.dims, cfg.hidden, cfg.classes});
}

// He-style init: weights N(0, 2/fan_in), biases zero.
template <class T = double>
WeightValues<T> mlp_init(std::shared_ptr<const WeightSpaceSpec> spec, const DimSizes& sizes,
                         std::uint64_t seed) {
  WeightValues<T> w(std::move(spec), sizes, 1);
  Rng rng(seed);
  for (std::size_t l = 0; l < w.tensor_count(); ++l) {
    const auto& shape = w.tensor(l).shape();
    if (shape.size() == 3) {  // (1, n_out, n_in) weight
      T stddev = std::sqrt(T{2} / static_cast<T>(shape[2]));
      for (auto& v : w.tensor(l).values()) v = stddev * static_cast<T>(rng.normal());
    }
  }
  return w;
}

namespace detail {

template <class T>
struct MlpActivations {
  std::vector<std::vector<T>> pre;   // pre-activations per layer, batch-major
  std::vector<std::vector<T>> post;  // inputs to each layer (post[0] = x)
};

template <class T>
void mlp_forward(const WeightValues<T>& w, const std::vector<T>& x, int batch,
                 MlpActivations<T>& act) {
  const std::size_t depth = w.tensor_count() / 2;
  act.pre.resize(depth);
  act.post.resize(depth + 1);
  act.post[0] = x;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& wt = w.tensor(2 * l);
    const auto& bt = w.tensor(2 * l + 1);
    const std::int64_t n_out = wt.shape()[1];
    const std::int64_t n_in = wt.shape()[2];
    const T* wd = wt.data();
    const T* bd = bt.data();
    const std::vector<T>& h = act.post[l];
    std::vector<T>& z = act.pre[l];
    z.assign(static_cast<std::size_t>(batch) * n_out, T{0});
    for (int b = 0; b < batch; ++b) {
      const T* hrow = h.data() + static_cast<std::size_t>(b) * n_in;
      T* zrow = z.data() + static_cast<std::size_t>(b) * n_out;
      for (std::int64_t i = 0; i < n_out; ++i) {
        T acc = bd[i];
        const T* wrow = wd + i * n_in;
        for (std::int64_t j = 0; j < n_in; ++j) acc += wrow[j] * hrow[j];
        zrow[i] = acc;
      }
    }
    if (l + 1 < depth) {
      std::vector<T>& hn = act.post[l + 1];
      hn.resize(z.size());
      for (std::size_t e = 0; e < z.size(); ++e) hn[e] = z[e] > T{0} ? z[e] : T{0};
    }
  }
}

// Mean softmax cross-entropy over the batch; fills dz with dloss/dlogits.
template <class T>
T softmax_nll(const std::vector<T>& logits, const std::vector<int>& y, int batch, int classes,
              std::vector<T>* dz) {
  T loss{0};
  if (dz) dz->assign(logits.size(), T{0});
  for (int b = 0; b < batch; ++b) {
    const T* z = logits.data() + static_cast<std::size_t>(b) * classes;
    T zmax = z[0];
    for (int k = 1; k < classes; ++k) zmax = std::max(zmax, z[k]);
    T sum{0};
    for (int k = 0; k < classes; ++k) sum += std::exp(z[k] - zmax);
    T lse = zmax + std::log(sum);
    loss += lse - z[y[b]];
    if (dz) {
      T* drow = dz->data() + static_cast<std::size_t>(b) * classes;
      for (int k = 0; k < classes; ++k) {
        T p = std::exp(z[k] - lse);
        drow[k] = (p - (k == y[b] ? T{1} : T{0})) / static_cast<T>(batch);
      }
    }
  }
  return loss / static_cast<T>(batch);
}

}  // namespace detail

template <class T = double>
T mlp_loss(const WeightValues<T>& w, const std::vector<T>& x, const std::vector<int>& y,
           int batch) {
  detail::MlpActivations<T> act;
  detail::mlp_forward(w, x, batch, act);
  const auto& logits = act.pre.back();
  int classes = static_cast<int>(logits.size()) / batch;
  return detail::softmax_nll<T>(logits, y, batch, classes, nullptr);
}

template <class T = double>
struct MlpEval {
  T loss;
  WeightValues<T> grad;
};

template <class T = double>
MlpEval<T> mlp_loss_grad(const WeightValues<T>& w, const std::vector<T>& x,
                         const std::vector<int>& y, int batch) {
  detail::MlpActivations<T> act;
  detail::mlp_forward(w, x, batch, act);
  const std::size_t depth = w.tensor_count() / 2;
  const auto& logits = act.pre.back();
  int classes = static_cast<int>(logits.size()) / batch;

  MlpEval<T> result{T{0}, WeightValues<T>(w.spec_ptr(), w.sizes(), 1)};
  std::vector<T> dz;
  result.loss = detail::softmax_nll<T>(logits, y, batch, classes, &dz);

  for (std::size_t l = depth; l > 0;) {
    --l;
    const auto& wt = w.tensor(2 * l);
    const std::int64_t n_out = wt.shape()[1];
    const std::int64_t n_in = wt.shape()[2];
    const T* wd = wt.data();
    const std::vector<T>& h = act.post[l];
    T* gw = result.grad.tensor(2 * l).data();
    T* gb = result.grad.tensor(2 * l + 1).data();
    for (int b = 0; b < batch; ++b) {
      const T* drow = dz.data() + static_cast<std::size_t>(b) * n_out;
      const T* hrow = h.data() + static_cast<std::size_t>(b) * n_in;
      for (std::int64_t i = 0; i < n_out; ++i) {
        gb[i] += drow[i];
        T* gwrow = gw + i * n_in;
        for (std::int64_t j = 0; j < n_in; ++j) gwrow[j] += drow[i] * hrow[j];
      }
    }
    if (l > 0) {
      const std::vector<T>& zprev = act.pre[l - 1];
      std::vector<T> dh(static_cast<std::size_t>(batch) * n_in, T{0});
      for (int b = 0; b < batch; ++b) {
        const T* drow = dz.data() + static_cast<std::size_t>(b) * n_out;
        T* dhrow = dh.data() + static_cast<std::size_t>(b) * n_in;
        for (std::int64_t i = 0; i < n_out; ++i) {
          const T* wrow = wd + i * n_in;
          for (std::int64_t j = 0; j < n_in; ++j) dhrow[j] += drow[i] * wrow[j];
        }
      }
      for (std::size_t e = 0; e < dh.size(); ++e) {
        if (!(zprev[e] > T{0})) dh[e] = T{0};
      }
      dz = std::move(dh);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Optimizer state and step.

enum class OptVariant { unf, deepset, sgdm };

inline OptVariant variant_from_string(const std::string& s) {
  if (s == "unf") return OptVariant::unf;
  if (s == "deepset") return OptVariant::deepset;
  if (s == "sgdm") return OptVariant::sgdm;
  throw ParseError("unknown optimizer variant '" + s + "'");
}

inline const char* variant_name(OptVariant v) {
  switch (v) {
    case OptVariant::unf: return "unf";
    case OptVariant::deepset: return "deepset";
    case OptVariant::sgdm: return "sgdm";
  }
  return "?";
}

template <class T = double>
struct Optimizer {
  T raw_alpha{};
  T raw_gamma0{};
  T beta{};  // fixed attenuation of the functional term, not meta-trained
  std::optional<UNFModel<T>> f;

  T alpha() const { return softplus(raw_alpha); }
  T gamma0() const { return sigmoid(raw_gamma0); }

  std::int64_t meta_param_count() const { return 2 + (f ? f->param_count() : 0); }

  std::vector<T> meta_params() const {
    std::vector<T> theta{raw_alpha, raw_gamma0};
    if (f) {
      std::vector<T> fp = f->get_params();
      theta.insert(theta.end(), fp.begin(), fp.end());
    }
    return theta;
  }

  void set_meta_params(const std::vector<T>& theta) {
    if (static_cast<std::int64_t>(theta.size()) != meta_param_count()) {
      throw ShapeError("set_meta_params: expected " + std::to_string(meta_param_count()) +
                       " values, got " + std::to_string(theta.size()));
    }
    raw_alpha = theta[0];
    raw_gamma0 = theta[1];
    if (f) f->set_params(std::vector<T>(theta.begin() + 2, theta.end()));
  }
};

// f architectures: three deep-set blocks with relus, then either an
// equivariant output layer (unf) or a deep-set output layer (deepset).
template <class T = double>
UNFModel<T> make_opt_model(OptVariant variant, std::shared_ptr<const WeightSpaceSpec> spec,
                           const DimSizes& sizes, std::uint64_t init_seed, int width = 32) {
  UNFModel<T> model(std::move(spec), sizes);
  model.add_deepset(kFeatureChannels, width);
  model.add_relu();
  model.add_deepset(width, width);
  model.add_relu();
  model.add_deepset(width, width);
  model.add_relu();
  if (variant == OptVariant::unf) {
    model.add_equivariant(width, 1, /*bias=*/true);
  } else {
    model.add_deepset(width, 1);
  }
  Rng rng(init_seed);
  model.init(InitScheme::scaled_normal, rng);
  model.zero_final_block();  // f starts as the zero function
  return model;
}

template <class T = double>
Optimizer<T> make_optimizer(OptVariant variant, std::shared_ptr<const WeightSpaceSpec> spec,
                            const DimSizes& sizes, std::uint64_t init_seed, T beta = T(0.001),
                            T alpha_init = T(0.1), T gamma0_init = T(0.9)) {
  Optimizer<T> opt;
  opt.raw_alpha = inv_softplus(alpha_init);
  opt.raw_gamma0 = logit(gamma0_init);
  opt.beta = variant == OptVariant::sgdm ? T{0} : beta;
  if (variant != OptVariant::sgdm) {
    opt.f = make_opt_model<T>(variant, std::move(spec), sizes, init_seed);
  }
  return opt;
}

template <class T = double>
struct OptState {
  WeightValues<T> w;
  WeightValues<T> m_nominal;
  std::array<WeightValues<T>, 6> m_feature;
  std::int64_t t = 0;
};

template <class T>
OptState<T> make_opt_state(WeightValues<T> w0) {
  OptState<T> state;
  state.m_nominal = WeightValues<T>(w0.spec_ptr(), w0.sizes(), 1);
  for (auto& m : state.m_feature) m = WeightValues<T>(w0.spec_ptr(), w0.sizes(), 1);
  state.w = std::move(w0);
  return state;
}

// Channels: [w, grad, m^0.1, m^0.5, m^0.9, m^0.99, m^0.999, m^0.9999,
// sin(t/10^(3j/10)) for j = 0..10].
template <class T>
WeightValues<T> build_features(const OptState<T>& state, const WeightValues<T>& grad) {
  WeightValues<T> features(state.w.spec_ptr(), state.w.sizes(), kFeatureChannels);
  std::array<T, kTimeEncodings> enc;
  for (int j = 0; j < kTimeEncodings; ++j) {
    enc[j] = static_cast<T>(std::sin(static_cast<double>(state.t) / std::pow(10.0, 0.3 * j)));
  }
  for (std::size_t l = 0; l < features.tensor_count(); ++l) {
    const std::int64_t n = features.entry_count(l);
    auto copy_channel = [&](int ch, const T* src) {
      std::copy(src, src + n, features.channel_data(l, ch));
    };
    copy_channel(0, state.w.channel_data(l, 0));
    copy_channel(1, grad.channel_data(l, 0));
    for (int i = 0; i < 6; ++i) copy_channel(2 + i, state.m_feature[i].channel_data(l, 0));
    for (int j = 0; j < kTimeEncodings; ++j) {
      T* dst = features.channel_data(l, 8 + j);
      std::fill(dst, dst + n, enc[j]);
    }
  }
  return features;
}

template <class T>
void opt_step(const Optimizer<T>& opt, OptState<T>& state, const WeightValues<T>& grad) {
  if (!grad.same_layout(state.w)) throw ShapeError("opt_step: gradient layout mismatch");
  for (std::size_t i = 0; i < kFeatureGammas.size(); ++i) {
    wv_decay_add(static_cast<T>(kFeatureGammas[i]), state.m_feature[i], grad);
  }
  wv_decay_add(opt.gamma0(), state.m_nominal, grad);
  const T alpha = opt.alpha();
  if (!opt.f || opt.beta == T{0}) {
    for (std::size_t l = 0; l < state.w.tensor_count(); ++l) {
      T* wd = state.w.tensor(l).data();
      const T* md = state.m_nominal.tensor(l).data();
      for (std::int64_t e = 0, n = state.w.tensor(l).size(); e < n; ++e) {
        wd[e] -= alpha * md[e];
      }
    }
  } else {
    WeightValues<T> features = build_features(state, grad);
    ModelValue<T> out = opt.f->forward(features);
    const WeightValues<T>& u = std::get<WeightValues<T>>(out);
    if (u.channels() != 1) throw ShapeError("opt_step: f must emit one channel");
    for (std::size_t l = 0; l < state.w.tensor_count(); ++l) {
      T* wd = state.w.tensor(l).data();
      const T* md = state.m_nominal.tensor(l).data();
      const T* ud = u.tensor(l).data();
      for (std::int64_t e = 0, n = state.w.tensor(l).size(); e < n; ++e) {
        wd[e] -= alpha * (md[e] + opt.beta * ud[e]);
      }
    }
  }
  if (!wv_all_finite(state.w)) {
    throw NumericalError("opt_step: non-finite weights at t=" + std::to_string(state.t) +
                         " (alpha=" + std::to_string(static_cast<double>(alpha)) + ")");
  }
  ++state.t;
}

// ---------------------------------------------------------------------------
// Inner training loop.

template <class T = double>
struct InnerRun {
  std::vector<T> losses;
  bool diverged = false;
  T objective = std::numeric_limits<T>::infinity();  // mean of last 10 losses
  T final_loss = std::numeric_limits<T>::infinity();
};

template <class T = double>
InnerRun<T> inner_train(const BlobsTaskConfig& cfg, std::uint64_t task_seed,
                        const Optimizer<T>& opt, int horizon = 0) {
  if (horizon <= 0) horizon = cfg.horizon;
  BlobsTask<T> task(cfg, Rng(task_seed).split("blobs").next_u64());
  auto spec = blobs_mlp_spec(cfg);
  DimSizes sizes = blobs_mlp_sizes(cfg);
  OptState<T> state =
      make_opt_state(mlp_init<T>(spec, sizes, Rng(task_seed).split("init").next_u64()));
  Rng data_rng = Rng(task_seed).split("data");

  InnerRun<T> run;
  run.losses.reserve(horizon);
  std::vector<T> x;
  std::vector<int> y;
  for (int t = 0; t < horizon; ++t) {
    task.sample_batch(data_rng, x, y);
    MlpEval<T> ev = mlp_loss_grad(state.w, x, y, cfg.batch);
    if (!std::isfinite(static_cast<double>(ev.loss))) {
      run.diverged = true;
      break;
    }
    run.losses.push_back(ev.loss);
    if (static_cast<double>(ev.loss) > kDivergenceThreshold) {
      run.diverged = true;
      break;
    }
    try {
      opt_step(opt, state, ev.grad);
    } catch (const NumericalError&) {
      run.diverged = true;
      break;
    }
  }
  if (run.losses.empty()) {
    run.objective = T(10) * static_cast<T>(kDivergenceThreshold);
    return run;
  }
  run.final_loss = run.losses.back();
  if (run.diverged) {
    run.objective = T(10) * run.losses.back();
  } else {
    std::size_t tail = std::min<std::size_t>(10, run.losses.size());
    T sum{0};
    for (std::size_t i = run.losses.size() - tail; i < run.losses.size(); ++i) {
      sum += run.losses[i];
    }
    run.objective = sum / static_cast<T>(tail);
  }
  return run;
}

// Plain SGD-with-momentum loop over the same task stream, written out
// independently; the reference for the beta=0 reduction.
template <class T = double>
struct SgdmRun {
  std::vector<T> losses;
  WeightValues<T> final_w;
};

template <class T = double>
SgdmRun<T> sgdm_reference_run(const BlobsTaskConfig& cfg, std::uint64_t task_seed, T alpha, T gamma,
                              int steps) {
  BlobsTask<T> task(cfg, Rng(task_seed).split("blobs").next_u64());
  auto spec = blobs_mlp_spec(cfg);
  DimSizes sizes = blobs_mlp_sizes(cfg);
  WeightValues<T> w = mlp_init<T>(spec, sizes, Rng(task_seed).split("init").next_u64());
  WeightValues<T> m(w.spec_ptr(), w.sizes(), 1);
  Rng data_rng = Rng(task_seed).split("data");

  SgdmRun<T> run;
  std::vector<T> x;
  std::vector<int> y;
  for (int t = 0; t < steps; ++t) {
    task.sample_batch(data_rng, x, y);
    MlpEval<T> ev = mlp_loss_grad(w, x, y, cfg.batch);
    run.losses.push_back(ev.loss);
    for (std::size_t l = 0; l < w.tensor_count(); ++l) {
      T* md = m.tensor(l).data();
      T* wd = w.tensor(l).data();
      const T* gd = ev.grad.tensor(l).data();
      for (std::int64_t e = 0, n = w.tensor(l).size(); e < n; ++e) {
        md[e] = gamma * md[e] + gd[e];
        wd[e] -= alpha * md[e];
      }
    }
  }
  run.final_w = std::move(w);
  return run;
}

// ---------------------------------------------------------------------------
// Antithetic evolution strategies and the meta-training loop.

namespace detail {

template <class Fn>
void run_parallel(int jobs, int threads, Fn&& fn) {
  if (threads <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    threads = hw == 0 ? 1 : static_cast<int>(hw);
  }
  threads = std::min(threads, jobs);
  if (threads <= 1) {
    for (int j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      int j = next.fetch_add(1);
      if (j >= jobs) return;
      try {
        fn(j);
      } catch (...) {
        std::scoped_lock lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

template <class T = double>
struct EsEstimate {
  std::vector<T> grad;
  T mean_objective{};
  int evals = 0;
  int healthy_evals = 0;  // evaluations that did not flag divergence
};

// objective(theta, pair_index) -> {value, diverged}; both signs of a pair
// get the same pair_index so the caller can share task seeds across them.
template <class T, class Obj>
EsEstimate<T> es_gradient(const std::vector<T>& theta, int pairs, T sigma, Rng& rng,
                          Obj&& objective, int threads = 1) {
  if (pairs < 1) throw ShapeError("es_gradient: need at least one pair");
  const std::size_t dim = theta.size();
  std::vector<std::vector<T>> eps(pairs, std::vector<T>(dim));
  for (auto& e : eps) {
    for (auto& v : e) v = static_cast<T>(rng.normal());
  }
  struct Eval {
    T value{};
    bool diverged = false;
  };
  std::vector<Eval> results(2 * static_cast<std::size_t>(pairs));
  detail::run_parallel(2 * pairs, threads, [&](int job) {
    int pair = job / 2;
    T sign = job % 2 == 0 ? T{1} : T{-1};
    std::vector<T> perturbed(dim);
    for (std::size_t d = 0; d < dim; ++d) perturbed[d] = theta[d] + sign * sigma * eps[pair][d];
    auto [value, diverged] = objective(perturbed, pair);
    results[job] = Eval{value, diverged};
  });

  EsEstimate<T> est;
  est.grad.assign(dim, T{0});
  est.evals = 2 * pairs;
  T sum{0};
  for (int pair = 0; pair < pairs; ++pair) {
    const Eval& plus = results[2 * pair];
    const Eval& minus = results[2 * pair + 1];
    T coef = (plus.value - minus.value) / (T{2} * sigma * static_cast<T>(pairs));
    for (std::size_t d = 0; d < dim; ++d) est.grad[d] += coef * eps[pair][d];
    sum += plus.value + minus.value;
    est.healthy_evals += (plus.diverged ? 0 : 1) + (minus.diverged ? 0 : 1);
  }
  est.mean_objective = sum / static_cast<T>(2 * pairs);
  return est;
}

template <class T = double>
struct Adam {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::vector<T> m, v;
  std::int64_t t = 0;

  void step(std::vector<T>& theta, const std::vector<T>& grad) {
    if (m.empty()) {
      m.assign(theta.size(), T{0});
      v.assign(theta.size(), T{0});
    }
    ++t;
    T bc1 = T{1} - std::pow(beta1, static_cast<T>(t));
    T bc2 = T{1} - std::pow(beta2, static_cast<T>(t));
    for (std::size_t d = 0; d < theta.size(); ++d) {
      m[d] = beta1 * m[d] + (T{1} - beta1) * grad[d];
      v[d] = beta2 * v[d] + (T{1} - beta2) * grad[d] * grad[d];
      theta[d] -= lr * (m[d] / bc1) / (std::sqrt(v[d] / bc2) + eps);
    }
  }
};

template <class T>
void clip_by_global_norm(std::vector<T>& grad, T max_norm) {
  T sq{0};
  for (T g : grad) sq += g * g;
  T norm = std::sqrt(sq);
  if (norm > max_norm && norm > T{0}) {
    T scale = max_norm / norm;
    for (T& g : grad) g *= scale;
  }
}

template <class T = double>
struct MetaConfig {
  int particles = 16;  // objective evaluations per meta-step, two per pair
  T sigma = T(0.01);
  int meta_steps = 200;
  T lr = T(1e-3);
  T clip = T(1);
  std::uint64_t seed = 0;
  int threads = 1;
  int val_interval = 10;
  int val_tasks = 3;
  T beta = T(0.001);
  T alpha_init = T(0.1);
  T gamma0_init = T(0.9);
};

template <class T = double>
struct MetaResult {
  Optimizer<T> best;
  std::vector<T> best_theta;
  T best_val = std::numeric_limits<T>::infinity();
  int best_step = -1;  // -1 means the initialization won
  std::vector<std::pair<int, T>> history;      // (meta_step, mean particle objective)
  std::vector<std::pair<int, T>> val_history;  // (meta_step, center validation objective)
  std::vector<T> final_theta;
};

template <class T = double>
MetaResult<T> meta_train(const BlobsTaskConfig& task_cfg, OptVariant variant,
                         const MetaConfig<T>& cfg) {
  if (cfg.particles < 2 || cfg.particles % 2 != 0) {
    throw ShapeError("meta_train: particles must be even and >= 2");
  }
  auto spec = blobs_mlp_spec(task_cfg);
  DimSizes sizes = blobs_mlp_sizes(task_cfg);
  const Optimizer<T> proto =
      make_optimizer<T>(variant, spec, sizes, Rng(cfg.seed).split("f-init").next_u64(), cfg.beta,
                        cfg.alpha_init, cfg.gamma0_init);
  std::vector<T> theta = proto.meta_params();

  auto with_params = [&](const std::vector<T>& th) {
    Optimizer<T> opt = proto;
    opt.set_meta_params(th);
    return opt;
  };
  auto validate = [&](const std::vector<T>& th) {
    Optimizer<T> opt = with_params(th);
    std::vector<T> vals(cfg.val_tasks);
    detail::run_parallel(cfg.val_tasks, cfg.threads, [&](int v) {
      vals[v] = inner_train(task_cfg, kValTaskBase + static_cast<std::uint64_t>(v), opt).objective;
    });
    T sum{0};
    for (T v : vals) sum += v;
    return sum / static_cast<T>(cfg.val_tasks);
  };

  MetaResult<T> result;
  result.best_theta = theta;
  result.best_val = validate(theta);
  result.val_history.emplace_back(-1, result.best_val);

  Adam<T> adam;
  adam.lr = cfg.lr;
  const int pairs = cfg.particles / 2;
  for (int step = 0; step < cfg.meta_steps; ++step) {
    Rng es_rng = Rng(cfg.seed).split("es").split(static_cast<std::uint64_t>(step));
    auto objective = [&](const std::vector<T>& th, int pair) {
      std::uint64_t task_seed = Rng(cfg.seed)
                                    .split("task")
                                    .split(static_cast<std::uint64_t>(step))
                                    .split(static_cast<std::uint64_t>(pair))
                                    .next_u64();
      InnerRun<T> run = inner_train(task_cfg, task_seed, with_params(th));
      return std::pair<T, bool>(run.objective, run.diverged);
    };
    EsEstimate<T> es = es_gradient(theta, pairs, cfg.sigma, es_rng, objective, cfg.threads);
    if (es.healthy_evals == 0) {
      throw NumericalError("meta_train: all " + std::to_string(es.evals) +
                           " particles diverged at meta-step " + std::to_string(step));
    }
    clip_by_global_norm(es.grad, cfg.clip);
    adam.step(theta, es.grad);
    result.history.emplace_back(step, es.mean_objective);
    if ((step + 1) % cfg.val_interval == 0 || step + 1 == cfg.meta_steps) {
      T val = validate(theta);
      result.val_history.emplace_back(step, val);
      if (val < result.best_val) {
        result.best_val = val;
        result.best_theta = theta;
        result.best_step = step;
      }
    }
  }
  result.final_theta = theta;
  result.best = with_params(result.best_theta);
  return result;
}

// ---------------------------------------------------------------------------
// Held-out evaluation.

template <class T = double>
struct EvalRun {
  std::uint64_t task_seed{};
  std::vector<T> losses;
  T final_loss{};
  bool diverged = false;
};

template <class T = double>
std::vector<EvalRun<T>> evaluate_optimizer(const BlobsTaskConfig& cfg, const Optimizer<T>& opt,
                                           int num_tasks = 5, int threads = 1) {
  std::vector<EvalRun<T>> runs(num_tasks);
  detail::run_parallel(num_tasks, threads, [&](int k) {
    std::uint64_t seed = kEvalTaskBase + static_cast<std::uint64_t>(k);
    InnerRun<T> r = inner_train(cfg, seed, opt);
    runs[k] = EvalRun<T>{seed, std::move(r.losses), r.final_loss, r.diverged};
  });
  return runs;
}

template <class T>
T mean_final_loss(const std::vector<EvalRun<T>>& runs) {
  T sum{0};
  for (const auto& r : runs) sum += r.final_loss;
  return sum / static_cast<T>(runs.size());
}

}  // namespace unf
