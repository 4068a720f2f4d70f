#pragma once

// Weight-space declarations. A WeightSpaceSpec names every tensor of a
// weight space and tags each axis with the permutation that moves it;
// it is purely symbolic. Concrete extents live in DimSizes, concrete
// multi-channel data in WeightValues.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "unf/errors.hpp"
#include "unf/ndarray.hpp"
#include "unf/rng.hpp"

namespace unf {

using json = nlohmann::ordered_json;

struct TensorDecl {
  std::string id;                  // "/"-joined document path
  std::vector<std::string> dims;   // axis permutation names, outermost first

  friend bool operator==(const TensorDecl&, const TensorDecl&) = default;
};

using DimSizes = std::map<std::string, std::int64_t>;

class WeightSpaceSpec {
 public:
  WeightSpaceSpec() = default;

  explicit WeightSpaceSpec(std::vector<TensorDecl> tensors) : tensors_(std::move(tensors)) {
    std::set<std::string> seen;
    for (const auto& t : tensors_) {
      if (t.id.empty()) throw ParseError("spec: empty tensor id");
      if (!seen.insert(t.id).second) throw ParseError("spec: duplicate tensor id '" + t.id + "'");
      if (t.dims.empty()) throw ParseError("spec: tensor '" + t.id + "' has no dimensions");
      for (const auto& d : t.dims) {
        if (d.empty()) throw ParseError("spec: tensor '" + t.id + "' has an empty dimension name");
      }
    }
  }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<TensorDecl>& tensors() const { return tensors_; }
  const TensorDecl& tensor(std::size_t i) const { return tensors_.at(i); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].id == id) return i;
    }
    throw ParseError("spec: unknown tensor id '" + id + "'");
  }
  bool contains(const std::string& id) const {
    for (const auto& t : tensors_) {
      if (t.id == id) return true;
    }
    return false;
  }

  std::set<std::string> dim_names() const {
    std::set<std::string> names;
    for (const auto& t : tensors_) names.insert(t.dims.begin(), t.dims.end());
    return names;
  }

  friend bool operator==(const WeightSpaceSpec&, const WeightSpaceSpec&) = default;

 private:
  std::vector<TensorDecl> tensors_;
};

namespace detail {

inline void flatten_spec_node(const json& node, const std::string& path,
                              std::vector<TensorDecl>& out) {
  if (node.is_object()) {
    if (node.empty()) throw ParseError("spec: empty mapping at '" + path + "'");
    for (const auto& [key, child] : node.items()) {
      if (key.empty()) throw ParseError("spec: empty key under '" + path + "'");
      flatten_spec_node(child, path.empty() ? key : path + "/" + key, out);
    }
    return;
  }
  if (node.is_array()) {
    if (node.empty()) throw ParseError("spec: empty dims list at '" + path + "'");
    TensorDecl decl;
    decl.id = path;
    for (const auto& entry : node) {
      if (entry.is_string()) {
        decl.dims.push_back(entry.get<std::string>());
      } else if (entry.is_number_integer()) {
        // Integer dimension names are normalized to decimal strings.
        decl.dims.push_back(std::to_string(entry.get<std::int64_t>()));
      } else {
        throw ParseError("spec: dimension name at '" + path + "' must be a string or integer");
      }
    }
    out.push_back(std::move(decl));
    return;
  }
  throw ParseError("spec: expected mapping or dims list at '" + path + "'");
}

}  // namespace detail

// Flattens a nested document into tensor declarations; depth-first document
// order fixes the tensor indices.
inline WeightSpaceSpec parse_spec_document(const json& document) {
  if (!document.is_object()) throw ParseError("spec: top level must be a mapping");
  std::vector<TensorDecl> tensors;
  detail::flatten_spec_node(document, "", tensors);
  return WeightSpaceSpec(std::move(tensors));
}

inline WeightSpaceSpec parse_spec(const std::string& text) {
  json document = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (document.is_discarded()) throw ParseError("spec: invalid JSON");
  return parse_spec_document(document);
}

inline json serialize_spec_document(const WeightSpaceSpec& spec) {
  json root = json::object();
  for (const auto& t : spec.tensors()) {
    json* node = &root;
    std::string rest = t.id;
    for (std::size_t pos = rest.find('/'); pos != std::string::npos; pos = rest.find('/')) {
      node = &(*node)[rest.substr(0, pos)];
      rest = rest.substr(pos + 1);
    }
    (*node)[rest] = t.dims;
  }
  return root;
}

inline std::string serialize_spec(const WeightSpaceSpec& spec) {
  return serialize_spec_document(spec).dump(2);
}

// ---------------------------------------------------------------------------
// Presets for the three stock architectures.

enum class PresetKind { mlp, rnn, cnn1d };

inline PresetKind preset_kind_from_string(const std::string& s) {
  if (s == "mlp") return PresetKind::mlp;
  if (s == "rnn") return PresetKind::rnn;
  if (s == "cnn1d") return PresetKind::cnn1d;
  throw ParseError("unknown preset kind '" + s + "'");
}

// `widths` lists the neuron counts n_1..n_{depth+1}; the returned spec is
// symbolic and only uses the corresponding names. mlp: per-layer weight
// (n_{l+1}, n_l) and bias (n_{l+1}). rnn: feedforward weight (n_{l+1}, n_l)
// plus recurrent weight (n_{l+1}, n_{l+1}) whose two axes share one name;
// no biases. cnn1d: rank-3 filters (n_{l+1}, n_l, k_l) with a distinct
// spatial name per layer; all three axes permute.
inline WeightSpaceSpec preset_spec(PresetKind kind, int depth, std::span<const std::int64_t> widths) {
  if (depth < 1) throw ParseError("preset: depth must be >= 1");
  if (static_cast<int>(widths.size()) != depth + 1) {
    throw ParseError("preset: expected " + std::to_string(depth + 1) + " widths, got " +
                     std::to_string(widths.size()));
  }
  auto n = [](int i) { return "n" + std::to_string(i); };
  std::vector<TensorDecl> tensors;
  for (int l = 1; l <= depth; ++l) {
    switch (kind) {
      case PresetKind::mlp:
        tensors.push_back({"layer" + std::to_string(l) + "/weight", {n(l + 1), n(l)}});
        tensors.push_back({"layer" + std::to_string(l) + "/bias", {n(l + 1)}});
        break;
      case PresetKind::rnn:
        tensors.push_back({"w_ff" + std::to_string(l), {n(l + 1), n(l)}});
        tensors.push_back({"w_rec" + std::to_string(l + 1), {n(l + 1), n(l + 1)}});
        break;
      case PresetKind::cnn1d:
        tensors.push_back({"conv" + std::to_string(l),
                           {n(l + 1), n(l), "k" + std::to_string(l)}});
        break;
    }
  }
  return WeightSpaceSpec(std::move(tensors));
}

// Concrete sizes matching preset_spec's names. cnn1d spatial names all get
// `kernel_size`.
inline DimSizes preset_sizes(PresetKind kind, int depth, std::span<const std::int64_t> widths,
                             std::int64_t kernel_size = 3) {
  if (static_cast<int>(widths.size()) != depth + 1) {
    throw ParseError("preset: expected " + std::to_string(depth + 1) + " widths, got " +
                     std::to_string(widths.size()));
  }
  DimSizes sizes;
  for (int i = 0; i <= depth; ++i) sizes["n" + std::to_string(i + 1)] = widths[i];
  if (kind == PresetKind::cnn1d) {
    for (int l = 1; l <= depth; ++l) sizes["k" + std::to_string(l)] = kernel_size;
  }
  return sizes;
}

inline void validate_sizes(const WeightSpaceSpec& spec, const DimSizes& sizes) {
  for (const auto& name : spec.dim_names()) {
    auto it = sizes.find(name);
    if (it == sizes.end()) throw ParseError("sizes: missing entry for dimension '" + name + "'");
    if (it->second < 1) throw ParseError("sizes: dimension '" + name + "' must be >= 1");
  }
}

inline std::vector<std::int64_t> tensor_shape(const TensorDecl& decl, const DimSizes& sizes) {
  std::vector<std::int64_t> shape;
  shape.reserve(decl.dims.size());
  for (const auto& d : decl.dims) shape.push_back(sizes.at(d));
  return shape;
}

// ---------------------------------------------------------------------------
// Concrete multi-channel data for a weight space.

template <class T>
const char* dtype_name();
template <>
inline const char* dtype_name<double>() { return "float64"; }
template <>
inline const char* dtype_name<float>() { return "float32"; }

// Dense per-tensor arrays of shape (channels, n_{d_1}, ..., n_{d_D}).
// Value-semantic: copies are independent; the symbolic spec is shared.
template <class T = double>
class WeightValues {
 public:
  WeightValues() = default;

  WeightValues(std::shared_ptr<const WeightSpaceSpec> spec, DimSizes sizes, std::int64_t channels)
      : spec_(std::move(spec)), sizes_(std::move(sizes)), channels_(channels) {
    if (channels_ < 1) throw ShapeError("WeightValues: channels must be >= 1");
    validate_sizes(*spec_, sizes_);
    tensors_.reserve(spec_->size());
    for (const auto& decl : spec_->tensors()) {
      std::vector<std::int64_t> shape = tensor_shape(decl, sizes_);
      shape.insert(shape.begin(), channels_);
      tensors_.emplace_back(std::move(shape));
    }
  }

  const WeightSpaceSpec& spec() const { return *spec_; }
  std::shared_ptr<const WeightSpaceSpec> spec_ptr() const { return spec_; }
  const DimSizes& sizes() const { return sizes_; }
  std::int64_t channels() const { return channels_; }
  std::size_t tensor_count() const { return tensors_.size(); }

  NdArray<T>& tensor(std::size_t i) { return tensors_.at(i); }
  const NdArray<T>& tensor(std::size_t i) const { return tensors_.at(i); }

  // Per-tensor entry count without the channel axis.
  std::int64_t entry_count(std::size_t i) const { return tensors_.at(i).size() / channels_; }
  std::int64_t total_entries() const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < tensors_.size(); ++i) n += entry_count(i);
    return n;
  }

  // Contiguous single-channel slice (the channel axis leads).
  T* channel_data(std::size_t i, std::int64_t k) {
    return tensors_.at(i).data() + k * entry_count(i);
  }
  const T* channel_data(std::size_t i, std::int64_t k) const {
    return tensors_.at(i).data() + k * entry_count(i);
  }

  bool same_layout(const WeightValues& other) const {
    return channels_ == other.channels_ && sizes_ == other.sizes_ && spec() == other.spec();
  }

  friend bool operator==(const WeightValues& a, const WeightValues& b) {
    return a.channels_ == b.channels_ && a.sizes_ == b.sizes_ && a.spec() == b.spec() &&
           a.tensors_ == b.tensors_;
  }

 private:
  std::shared_ptr<const WeightSpaceSpec> spec_;
  DimSizes sizes_;
  std::int64_t channels_ = 0;
  std::vector<NdArray<T>> tensors_;
};

template <class T = double>
WeightValues<T> zeros_like(std::shared_ptr<const WeightSpaceSpec> spec, DimSizes sizes,
                           std::int64_t channels) {
  return WeightValues<T>(std::move(spec), std::move(sizes), channels);
}

template <class T = double>
WeightValues<T> random_values(std::shared_ptr<const WeightSpaceSpec> spec, DimSizes sizes,
                              std::int64_t channels, std::uint64_t seed) {
  WeightValues<T> w(std::move(spec), std::move(sizes), channels);
  Rng rng(seed);
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    for (auto& v : w.tensor(i).values()) v = static_cast<T>(rng.normal());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Elementwise helpers used throughout layers and the learned optimizer.

template <class T>
void wv_fill(WeightValues<T>& w, T v) {
  for (std::size_t i = 0; i < w.tensor_count(); ++i) w.tensor(i).fill(v);
}

// y += a * x
template <class T>
void wv_axpy(T a, const WeightValues<T>& x, WeightValues<T>& y) {
  if (!x.same_layout(y)) throw ShapeError("wv_axpy: layout mismatch");
  for (std::size_t i = 0; i < x.tensor_count(); ++i) axpy(a, x.tensor(i), y.tensor(i));
}

// y = a*y + x
template <class T>
void wv_decay_add(T a, WeightValues<T>& y, const WeightValues<T>& x) {
  if (!x.same_layout(y)) throw ShapeError("wv_decay_add: layout mismatch");
  for (std::size_t i = 0; i < y.tensor_count(); ++i) {
    T* ys = y.tensor(i).data();
    const T* xs = x.tensor(i).data();
    for (std::int64_t j = 0, n = y.tensor(i).size(); j < n; ++j) ys[j] = a * ys[j] + xs[j];
  }
}

template <class T>
T wv_max_abs_diff(const WeightValues<T>& a, const WeightValues<T>& b) {
  if (!a.same_layout(b)) throw ShapeError("wv_max_abs_diff: layout mismatch");
  T m{0};
  for (std::size_t i = 0; i < a.tensor_count(); ++i) {
    const T* as = a.tensor(i).data();
    const T* bs = b.tensor(i).data();
    for (std::int64_t j = 0, n = a.tensor(i).size(); j < n; ++j) {
      T d = std::abs(as[j] - bs[j]);
      if (d > m) m = d;
    }
  }
  return m;
}

template <class T>
bool wv_all_finite(const WeightValues<T>& w) {
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    for (const T& v : w.tensor(i).values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// All entries, tensors in spec order, each tensor channel-major.
template <class T>
std::vector<T> wv_flatten(const WeightValues<T>& w) {
  std::vector<T> flat;
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    const auto& vals = w.tensor(i).values();
    flat.insert(flat.end(), vals.begin(), vals.end());
  }
  return flat;
}

template <class T>
void wv_unflatten(const std::vector<T>& flat, WeightValues<T>& w) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    auto& vals = w.tensor(i).values();
    if (pos + vals.size() > flat.size()) throw ShapeError("wv_unflatten: too few values");
    std::copy(flat.begin() + pos, flat.begin() + pos + vals.size(), vals.begin());
    pos += vals.size();
  }
  if (pos != flat.size()) throw ShapeError("wv_unflatten: too many values");
}

}  // namespace unf
