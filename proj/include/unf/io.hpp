#pragma once

// WeightValues serialization: a JSON manifest next to a raw little-endian
// blob. The blob holds each tensor's values in spec order, row-major with
// the channel axis first.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "unf/errors.hpp"
#include "unf/wspec.hpp"

namespace unf {

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; big-endian hosts are unsupported");

template <class T>
json weight_values_manifest(const WeightValues<T>& w, const std::string& blob_name) {
  json manifest;
  manifest["format"] = "weight-values";
  manifest["version"] = 1;
  manifest["dtype"] = dtype_name<T>();
  manifest["channels"] = w.channels();
  manifest["sizes"] = json::object();
  for (const auto& [name, n] : w.sizes()) manifest["sizes"][name] = n;
  manifest["spec"] = serialize_spec_document(w.spec());
  manifest["blob"] = blob_name;
  json tensors = json::array();
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    const auto& arr = w.tensor(i);
    std::int64_t bytes = arr.size() * static_cast<std::int64_t>(sizeof(T));
    json entry;
    entry["id"] = w.spec().tensor(i).id;
    entry["shape"] = arr.shape();
    entry["byte_offset"] = offset;
    entry["byte_length"] = bytes;
    tensors.push_back(std::move(entry));
    offset += bytes;
  }
  manifest["tensors"] = std::move(tensors);
  manifest["blob_bytes"] = offset;
  return manifest;
}

template <class T>
void save_weight_values(const WeightValues<T>& w, const std::string& manifest_path,
                        const std::string& blob_path) {
  std::string blob_name = blob_path;
  if (auto pos = blob_name.find_last_of('/'); pos != std::string::npos) {
    blob_name = blob_name.substr(pos + 1);
  }
  json manifest = weight_values_manifest(w, blob_name);
  std::ofstream mf(manifest_path);
  if (!mf) throw ParseError("cannot open '" + manifest_path + "' for writing");
  mf << manifest.dump(2) << "\n";
  if (!mf) throw ParseError("failed writing '" + manifest_path + "'");

  std::ofstream bf(blob_path, std::ios::binary);
  if (!bf) throw ParseError("cannot open '" + blob_path + "' for writing");
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    const auto& arr = w.tensor(i);
    bf.write(reinterpret_cast<const char*>(arr.data()),
             arr.size() * static_cast<std::streamsize>(sizeof(T)));
  }
  if (!bf) throw ParseError("failed writing '" + blob_path + "'");
}

template <class T = double>
WeightValues<T> load_weight_values(const std::string& manifest_path, const std::string& blob_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw ParseError("cannot open '" + manifest_path + "'");
  json manifest = json::parse(mf, nullptr, /*allow_exceptions=*/false);
  if (manifest.is_discarded()) throw ParseError("manifest: invalid JSON in '" + manifest_path + "'");
  if (manifest.value("format", "") != "weight-values") {
    throw ParseError("manifest: unexpected format tag");
  }
  if (manifest.value("dtype", "") != dtype_name<T>()) {
    throw ParseError("manifest: dtype mismatch, expected " + std::string(dtype_name<T>()));
  }
  auto spec = std::make_shared<WeightSpaceSpec>(parse_spec_document(manifest.at("spec")));
  DimSizes sizes;
  for (const auto& [name, n] : manifest.at("sizes").items()) {
    sizes[name] = n.template get<std::int64_t>();
  }
  std::int64_t channels = manifest.at("channels").get<std::int64_t>();
  WeightValues<T> w(std::move(spec), std::move(sizes), channels);

  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw ParseError("cannot open '" + blob_path + "'");
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != w.tensor_count()) throw ParseError("manifest: tensor count mismatch");
  for (std::size_t i = 0; i < w.tensor_count(); ++i) {
    const json& entry = tensors.at(i);
    if (entry.at("id").get<std::string>() != w.spec().tensor(i).id) {
      throw ParseError("manifest: tensor order mismatch at index " + std::to_string(i));
    }
    auto& arr = w.tensor(i);
    std::int64_t bytes = arr.size() * static_cast<std::int64_t>(sizeof(T));
    if (entry.at("byte_length").get<std::int64_t>() != bytes) {
      throw ParseError("manifest: byte length mismatch for '" + w.spec().tensor(i).id + "'");
    }
    bf.seekg(entry.at("byte_offset").get<std::int64_t>());
    bf.read(reinterpret_cast<char*>(arr.data()), bytes);
    if (!bf) throw ParseError("blob: short read for '" + w.spec().tensor(i).id + "'");
  }
  return w;
}

// Flat parameter vectors reuse the same scheme through a one-tensor spec.
inline std::shared_ptr<const WeightSpaceSpec> flat_vector_spec() {
  static auto spec = std::make_shared<const WeightSpaceSpec>(
      std::vector<TensorDecl>{{"params", {"p"}}});
  return spec;
}

template <class T>
void save_flat_vector(const std::vector<T>& v, const std::string& manifest_path,
                      const std::string& blob_path) {
  DimSizes sizes{{"p", static_cast<std::int64_t>(v.size())}};
  WeightValues<T> w(flat_vector_spec(), std::move(sizes), 1);
  std::copy(v.begin(), v.end(), w.tensor(0).data());
  save_weight_values(w, manifest_path, blob_path);
}

template <class T = double>
std::vector<T> load_flat_vector(const std::string& manifest_path, const std::string& blob_path) {
  WeightValues<T> w = load_weight_values<T>(manifest_path, blob_path);
  if (w.tensor_count() != 1 || w.channels() != 1) throw ParseError("manifest: not a flat vector");
  return w.tensor(0).values();
}

}  // namespace unf
