#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "helpers.hpp"

using namespace unf;

namespace {

template <class T>
EquivariantLayer<T> random_layer(std::shared_ptr<const WeightSpaceSpec> spec,
                                 const DimSizes& sizes, std::int64_t c_in, std::int64_t c_out,
                                 bool bias, std::uint64_t seed) {
  EquivariantLayer<T> layer(std::move(spec), sizes, c_in, c_out, bias);
  Rng rng(seed);
  layer.init(InitScheme::scaled_normal, rng);
  if (bias) {
    for (std::size_t l = 0; l < layer.spec().size(); ++l) {
      for (std::int64_t k = 0; k < c_out; ++k) {
        layer.params()[layer.bias_index(l, k)] = static_cast<T>(rng.normal());
      }
    }
  }
  return layer;
}

// Pre-activation magnitudes at relu blocks decide whether finite differences
// are trustworthy; seeds whose trace grazes a kink are skipped.
bool trace_clears_kinks(const UNFModel<double>& model, const WeightValues<double>& w,
                        double margin = 1e-4) {
  auto trace = model.forward_trace(w);
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    if (!std::holds_alternative<ReluBlock>(model.blocks()[i])) continue;
    const auto& v = trace[i];
    if (std::holds_alternative<WeightValues<double>>(v)) {
      const auto& wv = std::get<WeightValues<double>>(v);
      for (std::size_t l = 0; l < wv.tensor_count(); ++l) {
        for (double e : wv.tensor(l).values()) {
          if (std::abs(e) < margin) return false;
        }
      }
    } else {
      for (double e : std::get<std::vector<double>>(v)) {
        if (std::abs(e) < margin) return false;
      }
    }
  }
  return true;
}

double value_dot(const ModelValue<double>& v, const ModelValue<double>& g) {
  if (std::holds_alternative<WeightValues<double>>(v)) {
    const auto& a = std::get<WeightValues<double>>(v);
    const auto& b = std::get<WeightValues<double>>(g);
    double s = 0;
    for (std::size_t l = 0; l < a.tensor_count(); ++l) {
      for (std::int64_t e = 0; e < a.tensor(l).size(); ++e) s += a.tensor(l)[e] * b.tensor(l)[e];
    }
    return s;
  }
  const auto& a = std::get<std::vector<double>>(v);
  const auto& b = std::get<std::vector<double>>(g);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_model_gradients(UNFModel<double>& model, const ModelValue<double>& cotangent,
                           std::uint64_t seed) {
  Rng rng(seed);
  WeightValues<double> w;
  for (int attempt = 0;; ++attempt) {
    REQUIRE(attempt < 50);
    w = random_values<double>(model.spec_ptr(), model.sizes(), 1, rng.next_u64());
    if (trace_clears_kinks(model, w)) break;
  }

  std::vector<double> grad_params;
  WeightValues<double> grad_in = model.backward(w, cotangent, grad_params);

  std::vector<double> theta0 = model.get_params();
  auto param_obj = [&](const std::vector<double>& theta) {
    model.set_params(theta);
    double val = value_dot(model.forward(w), cotangent);
    model.set_params(theta0);
    return val;
  };
  std::vector<double> pdir = test::random_direction(theta0.size(), rng);
  double fd = test::directional_fd(param_obj, theta0, pdir);
  double an = 0;
  for (std::size_t i = 0; i < pdir.size(); ++i) an += grad_params[i] * pdir[i];
  CHECK(test::rel_err(fd, an) < 1e-6);

  std::vector<double> w0 = wv_flatten(w);
  auto input_obj = [&](const std::vector<double>& flat) {
    WeightValues<double> wx = w;
    wv_unflatten(flat, wx);
    return value_dot(model.forward(wx), cotangent);
  };
  std::vector<double> wdir = test::random_direction(w0.size(), rng);
  double fdw = test::directional_fd(input_obj, w0, wdir);
  std::vector<double> gflat = wv_flatten(grad_in);
  double anw = 0;
  for (std::size_t i = 0; i < wdir.size(); ++i) anw += gflat[i] * wdir[i];
  CHECK(test::rel_err(fdw, anw) < 1e-6);
}

}  // namespace

TEST_CASE("equivariant layers commute with neuron permutations", "[layers]") {
  struct Case {
    PresetKind kind;
    int depth;
    std::vector<std::int64_t> widths;
  };
  const Case cases[] = {
      {PresetKind::mlp, 2, {3, 2, 2}},
      {PresetKind::rnn, 1, {4, 3}},
      {PresetKind::cnn1d, 2, {3, 2, 2}},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    auto spec = test::shared_spec(preset_spec(c.kind, c.depth, c.widths));
    DimSizes sizes = preset_sizes(c.kind, c.depth, c.widths);
    auto layer = random_layer<double>(spec, sizes, 3, 2, true, seed++);
    auto report = check_equivariance<double>(
        [&](const WeightValues<double>& w) { return layer.apply(w); }, spec, sizes, 3, 5, seed++,
        1e-12);
    INFO("preset " << static_cast<int>(c.kind) << " max error " << report.max_error);
    CHECK(report.pass);
  }
}

TEST_CASE("equivariance holds in single precision at looser tolerance", "[layers]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);
  auto layer = random_layer<float>(spec, sizes, 3, 2, true, 5);
  auto report = check_equivariance<float>(
      [&](const WeightValues<float>& w) { return layer.apply(w); }, spec, sizes, 3, 5, 6, 1e-5);
  CHECK(report.pass);
  CHECK(report.max_error > 0.0);
}

TEST_CASE("deep-set layer computes lambda x + gamma mean + bias entrywise", "[layers]") {
  auto spec = test::spec_from_text(R"({"w": ["a", "b"], "b": ["a"]})");
  DimSizes sizes{{"a", 2}, {"b", 2}};
  DeepSetLayer<double> ds(spec, sizes, 2, 1);
  ds.params()[ds.lambda_index(0, 0)] = 2.0;
  ds.params()[ds.lambda_index(0, 1)] = -1.0;
  ds.params()[ds.gamma_index(0, 0)] = 3.0;
  ds.params()[ds.gamma_index(0, 1)] = 0.5;
  ds.params()[ds.bias_index(0)] = 0.25;

  WeightValues<double> w(spec, sizes, 2);
  std::vector<double> c0{1, 2, 3, 4, 5, 6};
  std::vector<double> c1{-1, 0, 1, 2, -2, 3};
  for (std::size_t l = 0, i = 0; l < 2; ++l) {
    for (std::int64_t e = 0; e < w.entry_count(l); ++e, ++i) {
      w.channel_data(l, 0)[e] = c0[i];
      w.channel_data(l, 1)[e] = c1[i];
    }
  }
  double mean0 = 21.0 / 6.0;
  double mean1 = 3.0 / 6.0;
  double base = 3.0 * mean0 + 0.5 * mean1 + 0.25;

  auto out = ds.apply(w);
  REQUIRE(out.channels() == 1);
  for (std::size_t l = 0, i = 0; l < 2; ++l) {
    for (std::int64_t e = 0; e < out.entry_count(l); ++e, ++i) {
      CHECK(out.channel_data(l, 0)[e] ==
            Catch::Approx(2.0 * c0[i] - 1.0 * c1[i] + base).epsilon(1e-12));
    }
  }
}

TEST_CASE("deep-set layers are equivariant", "[layers]") {
  std::vector<std::int64_t> widths{4, 3};
  auto spec = test::shared_spec(preset_spec(PresetKind::rnn, 1, widths));
  DimSizes sizes = preset_sizes(PresetKind::rnn, 1, widths);
  DeepSetLayer<double> ds(spec, sizes, 3, 2);
  Rng rng(9);
  ds.init(InitScheme::scaled_normal, rng);
  for (std::int64_t k = 0; k < 2; ++k) ds.params()[ds.bias_index(k)] = rng.normal();
  auto report = check_equivariance<double>(
      [&](const WeightValues<double>& w) { return ds.apply(w); }, spec, sizes, 3, 5, 10, 1e-12);
  CHECK(report.pass);
}

TEST_CASE("invariant pooling and order statistics ignore permutations", "[layers]") {
  auto spec = test::spec_from_text(R"({"t": ["a"]})");
  DimSizes sizes{{"a", 4}};
  WeightValues<double> w(spec, sizes, 1);
  for (std::int64_t e = 0; e < 4; ++e) w.channel_data(0, 0)[e] = static_cast<double>(e + 1);

  auto pooled = invariant_pool(w);
  REQUIRE(pooled.size() == 1);
  CHECK(pooled[0] == Catch::Approx(10.0));

  auto stats = statnn_features(w);
  REQUIRE(stats.size() == 7);
  CHECK(stats[0] == Catch::Approx(2.5));
  CHECK(stats[1] == Catch::Approx(1.25));
  CHECK(stats[2] == Catch::Approx(1.0));
  CHECK(stats[3] == Catch::Approx(1.75));
  CHECK(stats[4] == Catch::Approx(2.5));
  CHECK(stats[5] == Catch::Approx(3.25));
  CHECK(stats[6] == Catch::Approx(4.0));

  std::vector<std::int64_t> widths{3, 2, 2};
  auto mspec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes msizes = preset_sizes(PresetKind::mlp, 2, widths);
  auto pool_report = check_invariance<double>(
      [](const WeightValues<double>& x) { return invariant_pool(x); }, mspec, msizes, 2, 5, 11,
      1e-12);
  CHECK(pool_report.pass);
  auto stat_report = check_invariance<double>(
      [](const WeightValues<double>& x) { return statnn_features(x); }, mspec, msizes, 2, 5, 12,
      1e-12);
  CHECK(stat_report.pass);
}

TEST_CASE("model gradients match finite differences", "[layers]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);

  SECTION("equivariant / relu / deep-set / relu / equivariant") {
    UNFModel<double> model(spec, sizes);
    model.add_equivariant(1, 3);
    model.add_relu();
    model.add_deepset(3, 3);
    model.add_relu();
    model.add_equivariant(3, 2);
    Rng rng(21);
    model.init(InitScheme::scaled_normal, rng);
    auto g = random_values<double>(spec, sizes, 2, 77);
    check_model_gradients(model, ModelValue<double>(g), 22);
  }

  SECTION("equivariant / relu / pool / dense") {
    UNFModel<double> model(spec, sizes);
    model.add_equivariant(1, 3);
    model.add_relu();
    model.add_pool();
    model.add_dense(static_cast<std::int64_t>(spec->size()) * 3, 2);
    Rng rng(31);
    model.init(InitScheme::scaled_normal, rng);
    check_model_gradients(model, ModelValue<double>(std::vector<double>{0.7, -1.3}), 32);
  }
}

TEST_CASE("scaled init keeps per-tensor output variance moderate", "[layers]") {
  std::vector<std::int64_t> widths{3, 3, 3};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);
  EquivariantLayer<double> layer(spec, sizes, 4, 3, true);
  Rng rng(55);
  std::vector<double> sum(spec->size(), 0.0);
  std::vector<double> sq(spec->size(), 0.0);
  std::vector<std::int64_t> n(spec->size(), 0);
  for (int draw = 0; draw < 1000; ++draw) {
    layer.init(InitScheme::scaled_normal, rng);
    auto w = random_values<double>(spec, sizes, 4, rng.next_u64());
    auto out = layer.apply(w);
    for (std::size_t l = 0; l < out.tensor_count(); ++l) {
      for (double e : out.tensor(l).values()) {
        sum[l] += e;
        sq[l] += e * e;
        ++n[l];
      }
    }
  }
  for (std::size_t l = 0; l < spec->size(); ++l) {
    INFO(spec->tensor(l).id);
    double mean = sum[l] / n[l];
    double var = sq[l] / n[l] - mean * mean;
    CHECK(var > 0.1);
    CHECK(var < 10.0);
  }
}

TEST_CASE("parameter layout, counts, and the zeroed final block", "[layers]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);

  EquivariantLayer<double> eq(spec, sizes, 3, 2, true);
  CHECK(eq.param_count() == 32 * 2 * 3 + 4 * 2);

  DeepSetLayer<double> ds(spec, sizes, 3, 2);
  CHECK(ds.param_count() == 2 * 2 * 3 + 2);

  DenseBlock<double> dense(5, 7);
  CHECK(dense.param_count() == 5 * 7 + 7);

  UNFModel<double> model(spec, sizes);
  model.add_equivariant(1, 4);
  model.add_relu();
  model.add_deepset(4, 4);
  model.add_relu();
  model.add_equivariant(4, 1);

  auto counts = count_parameters(model);
  CHECK(counts.total == model.param_count());
  REQUIRE(counts.blocks.size() == 5);
  CHECK(counts.blocks[0].kind == "equivariant");
  CHECK(counts.blocks[1].kind == "relu");
  CHECK(counts.blocks[2].kind == "deepset");
  CHECK(counts.blocks[4].kind == "equivariant");
  CHECK(counts.blocks[0].pair_basis.size() == 16);
  std::int64_t basis_total = 0;
  for (const auto& [out_id, in_id, nb] : counts.blocks[0].pair_basis) basis_total += nb;
  CHECK(basis_total == 32);

  Rng rng(77);
  model.init(InitScheme::scaled_normal, rng);
  auto theta = model.get_params();
  REQUIRE(static_cast<std::int64_t>(theta.size()) == model.param_count());
  theta[3] += 1.5;
  model.set_params(theta);
  CHECK(model.get_params() == theta);
  std::vector<double> wrong(theta.size() + 1, 0.0);
  CHECK_THROWS_AS(model.set_params(wrong), ShapeError);

  model.zero_final_block();
  auto w = random_values<double>(spec, sizes, 1, 78);
  auto out = std::get<WeightValues<double>>(model.forward(w));
  for (std::size_t l = 0; l < out.tensor_count(); ++l) {
    for (double e : out.tensor(l).values()) REQUIRE(e == 0.0);
  }
}

TEST_CASE("layers reject mismatched inputs", "[layers]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);
  EquivariantLayer<double> eq(spec, sizes, 3, 2, true);
  auto wrong_channels = random_values<double>(spec, sizes, 2, 5);
  CHECK_THROWS_AS(eq.apply(wrong_channels), ShapeError);

  auto other = test::spec_from_text(R"({"t": ["a"]})");
  DimSizes osizes{{"a", 3}};
  auto other_w = random_values<double>(other, osizes, 3, 6);
  CHECK_THROWS_AS(eq.apply(other_w), ShapeError);

  CHECK_THROWS_AS(EquivariantLayer<double>(spec, sizes, 0, 2, true), ShapeError);
  CHECK_THROWS_AS(DeepSetLayer<double>(spec, sizes, 2, 0), ShapeError);
  CHECK_THROWS_AS(DenseBlock<double>(0, 3), ShapeError);

  UNFModel<double> model(spec, sizes);
  model.add_dense(4, 2);
  auto w = random_values<double>(spec, sizes, 1, 7);
  CHECK_THROWS_AS(model.forward(w), ShapeError);
}
