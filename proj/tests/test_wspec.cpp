#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "helpers.hpp"

using namespace unf;

namespace {
std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("nested documents flatten depth-first with slash-joined ids", "[wspec]") {
  auto spec = parse_spec(R"({
    "layer1": {"weight": ["n2", "n1"], "bias": ["n2"]},
    "layer2": {"weight": ["n3", "n2"], "bias": ["n3"]}
  })");
  REQUIRE(spec.size() == 4);
  CHECK(spec.tensor(0).id == "layer1/weight");
  CHECK(spec.tensor(0).dims == std::vector<std::string>{"n2", "n1"});
  CHECK(spec.tensor(1).id == "layer1/bias");
  CHECK(spec.tensor(2).id == "layer2/weight");
  CHECK(spec.tensor(3).id == "layer2/bias");
  CHECK(spec.tensor(3).dims == std::vector<std::string>{"n3"});
}

TEST_CASE("minimal single-tensor spec parses", "[wspec]") {
  auto spec = parse_spec(R"({"w": ["a"]})");
  REQUIRE(spec.size() == 1);
  CHECK(spec.tensor(0).id == "w");
  CHECK(spec.tensor(0).dims == std::vector<std::string>{"a"});
}

TEST_CASE("integer dimension names normalize to decimal strings", "[wspec]") {
  auto spec = parse_spec(R"({"w": [1, 2]})");
  CHECK(spec.tensor(0).dims == std::vector<std::string>{"1", "2"});
}

TEST_CASE("malformed spec documents are rejected with parse errors", "[wspec]") {
  CHECK_THROWS_AS(parse_spec(R"({"w": []})"), ParseError);
  CHECK_THROWS_AS(parse_spec(R"({"w": [1.5]})"), ParseError);
  CHECK_THROWS_AS(parse_spec(R"({"w": [true]})"), ParseError);
  CHECK_THROWS_AS(parse_spec(R"({"w": {"x": {}}})"), ParseError);
  CHECK_THROWS_AS(parse_spec(R"({"a": {"b": ["x"]}, "a/b": ["y"]})"), ParseError);
  CHECK_THROWS_AS(parse_spec("not json"), ParseError);
  CHECK_THROWS_AS(parse_spec(R"(["w"])"), ParseError);
}

TEST_CASE("specs round-trip through serialization", "[wspec]") {
  std::vector<std::string> docs = {
      R"({"layer1": {"weight": ["n2", "n1"], "bias": ["n2"]}, "layer2": {"weight": ["n3", "n2"], "bias": ["n3"]}})",
      R"({"w": ["a"]})",
      R"({"enc": {"rnn": {"w_ff": ["h", "x"], "w_rec": ["h", "h"]}}, "head": ["h"]})",
  };
  for (const auto& doc : docs) {
    WeightSpaceSpec spec = parse_spec(doc);
    CHECK(parse_spec(serialize_spec(spec)) == spec);
  }
  for (PresetKind kind : {PresetKind::mlp, PresetKind::rnn, PresetKind::cnn1d}) {
    std::vector<std::int64_t> widths{3, 2, 2};
    WeightSpaceSpec spec = preset_spec(kind, 2, widths);
    CHECK(parse_spec(serialize_spec(spec)) == spec);
  }
}

TEST_CASE("mlp preset matches the stock layout", "[wspec]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  WeightSpaceSpec spec = preset_spec(PresetKind::mlp, 2, widths);
  REQUIRE(spec.size() == 4);
  CHECK(spec.tensor(0).id == "layer1/weight");
  CHECK(spec.tensor(0).dims == std::vector<std::string>{"n2", "n1"});
  CHECK(spec.tensor(1).id == "layer1/bias");
  CHECK(spec.tensor(1).dims == std::vector<std::string>{"n2"});
  CHECK(spec.tensor(2).dims == std::vector<std::string>{"n3", "n2"});

  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);
  CHECK(sizes == DimSizes{{"n1", 3}, {"n2", 2}, {"n3", 2}});
}

TEST_CASE("rnn preset ties the recurrent tensor to the next layer's name", "[wspec]") {
  std::vector<std::int64_t> widths{4, 3};
  WeightSpaceSpec spec = preset_spec(PresetKind::rnn, 1, widths);
  REQUIRE(spec.size() == 2);
  CHECK(spec.tensor(0).id == "w_ff1");
  CHECK(spec.tensor(0).dims == std::vector<std::string>{"n2", "n1"});
  CHECK(spec.tensor(1).id == "w_rec2");
  CHECK(spec.tensor(1).dims == std::vector<std::string>{"n2", "n2"});
}

TEST_CASE("cnn1d preset emits rank-3 tensors with distinct spatial names", "[wspec]") {
  std::vector<std::int64_t> widths{2, 2};
  WeightSpaceSpec spec = preset_spec(PresetKind::cnn1d, 1, widths);
  REQUIRE(spec.size() == 1);
  CHECK(spec.tensor(0).id == "conv1");
  CHECK(spec.tensor(0).dims == std::vector<std::string>{"n2", "n1", "k1"});
  DimSizes sizes = preset_sizes(PresetKind::cnn1d, 1, widths, 5);
  CHECK(sizes.at("k1") == 5);
}

TEST_CASE("preset argument validation", "[wspec]") {
  std::vector<std::int64_t> widths{3, 2};
  CHECK_THROWS_AS(preset_spec(PresetKind::mlp, 2, widths), ParseError);
  CHECK_THROWS_AS(preset_spec(PresetKind::mlp, 0, widths), ParseError);
  CHECK_THROWS_AS(preset_kind_from_string("transformer"), ParseError);
}

TEST_CASE("weight values carry channel-first shapes", "[wspec]") {
  auto spec = test::spec_from_text(R"({"w": ["a", "b"], "b": ["a"]})");
  DimSizes sizes{{"a", 3}, {"b", 2}};
  WeightValues<double> w(spec, sizes, 19);
  CHECK(w.channels() == 19);
  CHECK(shape_equal(w.tensor(0).shape(), std::vector<std::int64_t>{19, 3, 2}));
  CHECK(shape_equal(w.tensor(1).shape(), std::vector<std::int64_t>{19, 3}));
  CHECK(w.entry_count(0) == 6);
  CHECK(w.total_entries() == 9);
  CHECK(w.channel_data(0, 1) - w.channel_data(0, 0) == 6);
}

TEST_CASE("zeros and seeded random values", "[wspec]") {
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, std::vector<std::int64_t>{3, 2, 2}));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, std::vector<std::int64_t>{3, 2, 2});
  WeightValues<double> z = zeros_like<double>(spec, sizes, 1);
  for (std::size_t i = 0; i < z.tensor_count(); ++i) {
    for (double v : z.tensor(i).values()) CHECK(v == 0.0);
  }
  WeightValues<double> r1 = random_values<double>(spec, sizes, 2, 42);
  WeightValues<double> r2 = random_values<double>(spec, sizes, 2, 42);
  WeightValues<double> r3 = random_values<double>(spec, sizes, 2, 43);
  CHECK(r1 == r2);
  CHECK_FALSE(r1 == r3);
  CHECK(wv_all_finite(r1));
}

TEST_CASE("missing or invalid sizes are rejected", "[wspec]") {
  auto spec = test::spec_from_text(R"({"w": ["a", "b"]})");
  CHECK_THROWS_AS(WeightValues<double>(spec, DimSizes{{"a", 3}}, 1), ParseError);
  CHECK_THROWS_AS(WeightValues<double>(spec, DimSizes{{"a", 3}, {"b", 0}}, 1), ParseError);
  CHECK_THROWS_AS(WeightValues<double>(spec, DimSizes{{"a", 3}, {"b", 2}}, 0), ShapeError);
}

TEST_CASE("weight values round-trip through the manifest and blob", "[wspec]") {
  auto spec = test::shared_spec(preset_spec(PresetKind::rnn, 1, std::vector<std::int64_t>{4, 3}));
  DimSizes sizes = preset_sizes(PresetKind::rnn, 1, std::vector<std::int64_t>{4, 3});
  WeightValues<double> w = random_values<double>(spec, sizes, 2, 7);
  std::string mpath = temp_path("unf_wv_manifest.json");
  std::string bpath = temp_path("unf_wv_blob.bin");
  save_weight_values(w, mpath, bpath);
  WeightValues<double> back = load_weight_values<double>(mpath, bpath);
  CHECK(back == w);

  WeightValues<float> wf = random_values<float>(spec, sizes, 3, 9);
  save_weight_values(wf, mpath, bpath);
  WeightValues<float> backf = load_weight_values<float>(mpath, bpath);
  CHECK(backf == wf);
  CHECK_THROWS_AS(load_weight_values<double>(mpath, bpath), ParseError);
}

TEST_CASE("corrupt manifests are rejected", "[wspec]") {
  std::string mpath = temp_path("unf_wv_bad_manifest.json");
  std::string bpath = temp_path("unf_wv_bad_blob.bin");
  {
    std::ofstream m(mpath);
    m << R"({"format": "something-else"})";
    std::ofstream b(bpath, std::ios::binary);
    b << "xxxx";
  }
  CHECK_THROWS_AS(load_weight_values<double>(mpath, bpath), ParseError);
}

TEST_CASE("flat vectors reuse the manifest scheme", "[wspec]") {
  std::vector<double> v{1.5, -2.25, 0.0, 1e-17};
  std::string mpath = temp_path("unf_flat_manifest.json");
  std::string bpath = temp_path("unf_flat_blob.bin");
  save_flat_vector(v, mpath, bpath);
  CHECK(load_flat_vector<double>(mpath, bpath) == v);
}

TEST_CASE("elementwise helpers", "[wspec]") {
  auto spec = test::spec_from_text(R"({"w": ["a"]})");
  DimSizes sizes{{"a", 4}};
  WeightValues<double> x = random_values<double>(spec, sizes, 1, 1);
  WeightValues<double> y = random_values<double>(spec, sizes, 1, 2);
  WeightValues<double> y0 = y;
  wv_axpy(2.0, x, y);
  for (std::int64_t j = 0; j < 4; ++j) {
    CHECK(y.tensor(0).data()[j] == y0.tensor(0).data()[j] + 2.0 * x.tensor(0).data()[j]);
  }
  wv_decay_add(0.5, y, x);
  CHECK(wv_max_abs_diff(x, x) == 0.0);
  WeightValues<double> bad(test::spec_from_text(R"({"w": ["a"]})"), DimSizes{{"a", 5}}, 1);
  CHECK_THROWS_AS(wv_axpy(1.0, x, bad), ShapeError);
  x.tensor(0).data()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(wv_all_finite(x));
}
