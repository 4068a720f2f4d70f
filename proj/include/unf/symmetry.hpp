#pragma once

// Neuron-permutation group elements and their action on weight values.
// An element is one permutation per named dimension; it acts on a tensor
// by permuting every axis labeled with that name simultaneously.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "unf/errors.hpp"
#include "unf/rng.hpp"
#include "unf/wspec.hpp"

namespace unf {

struct NeuronPermutation {
  // image[i] = σ(i) for each named dimension
  std::map<std::string, std::vector<std::int64_t>> images;

  friend bool operator==(const NeuronPermutation&, const NeuronPermutation&) = default;
};

inline void validate_permutation(const NeuronPermutation& sigma, const DimSizes& sizes) {
  if (sigma.images.size() != sizes.size()) {
    throw ShapeError("permutation: name set does not match sizes");
  }
  for (const auto& [name, n] : sizes) {
    auto it = sigma.images.find(name);
    if (it == sigma.images.end()) throw ShapeError("permutation: missing name '" + name + "'");
    const auto& image = it->second;
    if (static_cast<std::int64_t>(image.size()) != n) {
      throw ShapeError("permutation: wrong length for '" + name + "'");
    }
    std::vector<bool> seen(image.size(), false);
    for (std::int64_t v : image) {
      if (v < 0 || v >= n || seen[v]) throw ShapeError("permutation: '" + name + "' is not a bijection");
      seen[v] = true;
    }
  }
}

inline NeuronPermutation identity_permutation(const DimSizes& sizes) {
  NeuronPermutation sigma;
  for (const auto& [name, n] : sizes) {
    std::vector<std::int64_t> image(n);
    std::iota(image.begin(), image.end(), 0);
    sigma.images[name] = std::move(image);
  }
  return sigma;
}

inline NeuronPermutation random_permutation(const DimSizes& sizes, Rng& rng) {
  NeuronPermutation sigma = identity_permutation(sizes);
  for (auto& [name, image] : sigma.images) rng.shuffle(image);
  return sigma;
}

inline NeuronPermutation random_permutation(const DimSizes& sizes, std::uint64_t seed) {
  Rng rng(seed);
  return random_permutation(sizes, rng);
}

// compose(s1, s2) acts as s1 after s2: image c[i] = s1[s2[i]].
inline NeuronPermutation compose(const NeuronPermutation& s1, const NeuronPermutation& s2) {
  if (s1.images.size() != s2.images.size()) throw ShapeError("compose: name-set mismatch");
  NeuronPermutation out;
  for (const auto& [name, img2] : s2.images) {
    auto it = s1.images.find(name);
    if (it == s1.images.end() || it->second.size() != img2.size()) {
      throw ShapeError("compose: name-set mismatch at '" + name + "'");
    }
    const auto& img1 = it->second;
    std::vector<std::int64_t> c(img2.size());
    for (std::size_t i = 0; i < img2.size(); ++i) c[i] = img1[img2[i]];
    out.images[name] = std::move(c);
  }
  return out;
}

inline NeuronPermutation inverse(const NeuronPermutation& s) {
  NeuronPermutation out;
  for (const auto& [name, image] : s.images) {
    std::vector<std::int64_t> inv(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) inv[image[i]] = static_cast<std::int64_t>(i);
    out.images[name] = std::move(inv);
  }
  return out;
}

// output[c][σ(ī)] = input[c][ī] for every tensor and channel.
template <class T>
WeightValues<T> apply_permutation(const NeuronPermutation& sigma, const WeightValues<T>& w) {
  validate_permutation(sigma, w.sizes());
  WeightValues<T> out(w.spec_ptr(), w.sizes(), w.channels());
  for (std::size_t t = 0; t < w.tensor_count(); ++t) {
    const TensorDecl& decl = w.spec().tensor(t);
    const auto& src = w.tensor(t);
    auto& dst = out.tensor(t);
    const std::size_t rank = decl.dims.size();

    // Per-axis output offsets: axis a maps input index i to σ_a(i)·stride_a.
    std::vector<std::int64_t> entry_shape(rank);
    for (std::size_t a = 0; a < rank; ++a) entry_shape[a] = src.shape()[a + 1];
    std::vector<std::int64_t> entry_strides = row_major_strides(entry_shape);
    std::vector<std::vector<std::int64_t>> mapped(rank);
    for (std::size_t a = 0; a < rank; ++a) {
      const auto& image = sigma.images.at(decl.dims[a]);
      mapped[a].resize(entry_shape[a]);
      for (std::int64_t i = 0; i < entry_shape[a]; ++i) mapped[a][i] = image[i] * entry_strides[a];
    }

    const std::int64_t entries = shape_size(entry_shape);
    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t c = 0; c < w.channels(); ++c) {
      const T* in = src.data() + c * entries;
      T* outp = dst.data() + c * entries;
      std::fill(idx.begin(), idx.end(), 0);
      std::int64_t off = 0;
      for (std::size_t a = 0; a < rank; ++a) off += mapped[a][0];
      for (std::int64_t j = 0;; ++j) {
        outp[off] = in[j];
        std::size_t a = rank;
        while (a > 0) {
          --a;
          off -= mapped[a][idx[a]];
          if (++idx[a] < entry_shape[a]) {
            off += mapped[a][idx[a]];
            break;
          }
          idx[a] = 0;
          off += mapped[a][0];
          if (a == 0) goto next_channel;
        }
      }
    next_channel:;
    }
  }
  return out;
}

inline std::int64_t group_order(const DimSizes& sizes, std::int64_t cap = 10000) {
  std::int64_t order = 1;
  for (const auto& [name, n] : sizes) {
    for (std::int64_t k = 2; k <= n; ++k) {
      order *= k;
      if (order > cap) {
        throw CapError("group order exceeds cap " + std::to_string(cap));
      }
    }
  }
  return order;
}

// All ∏ n_d! group elements, each exactly once, in a stable order.
inline std::vector<NeuronPermutation> enumerate_group(const DimSizes& sizes,
                                                      std::int64_t cap = 10000) {
  std::int64_t order = group_order(sizes, cap);
  std::vector<std::string> names;
  std::vector<std::vector<std::vector<std::int64_t>>> per_name;
  for (const auto& [name, n] : sizes) {
    names.push_back(name);
    std::vector<std::int64_t> image(n);
    std::iota(image.begin(), image.end(), 0);
    std::vector<std::vector<std::int64_t>> perms;
    do {
      perms.push_back(image);
    } while (std::next_permutation(image.begin(), image.end()));
    per_name.push_back(std::move(perms));
  }
  std::vector<NeuronPermutation> group;
  group.reserve(order);
  std::vector<std::size_t> pick(names.size(), 0);
  for (;;) {
    NeuronPermutation sigma;
    for (std::size_t k = 0; k < names.size(); ++k) sigma.images[names[k]] = per_name[k][pick[k]];
    group.push_back(std::move(sigma));
    std::size_t k = names.size();
    while (k > 0) {
      --k;
      if (++pick[k] < per_name[k].size()) break;
      pick[k] = 0;
      if (k == 0) return group;
    }
    if (names.empty()) return group;
  }
}

inline json permutation_to_json(const NeuronPermutation& sigma) {
  json doc = json::object();
  for (const auto& [name, image] : sigma.images) doc[name] = image;
  return doc;
}

inline NeuronPermutation permutation_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("permutation: expected a mapping");
  NeuronPermutation sigma;
  for (const auto& [name, image] : doc.items()) {
    if (!image.is_array()) throw ParseError("permutation: '" + name + "' must be a list");
    sigma.images[name] = image.get<std::vector<std::int64_t>>();
  }
  return sigma;
}

}  // namespace unf
