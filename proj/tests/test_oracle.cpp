#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "helpers.hpp"

using namespace unf;

TEST_CASE("matrix pair: enumeration, rank, and fixed subspace all give four", "[oracle]") {
  DimSizes sizes{{"n2", 3}, {"n1", 2}};
  auto cert = certify_pair({"n2", "n1"}, {"n2", "n1"}, sizes);
  CHECK(cert.enumerated == 4);
  CHECK(cert.rank == 4);
  CHECK(cert.fixed_dim == 4);
  CHECK(cert.equal);
}

TEST_CASE("shared-name pair with four slots certifies at fifteen", "[oracle]") {
  DimSizes sizes{{"a", 5}};
  auto cert = certify_pair({"a", "a"}, {"a", "a"}, sizes);
  CHECK(cert.enumerated == 15);
  CHECK(cert.rank == 15);
  CHECK(cert.fixed_dim == 15);
  CHECK(cert.equal);
}

TEST_CASE("every preset pair agrees three ways", "[oracle]") {
  struct Case {
    PresetKind kind;
    int depth;
    std::vector<std::int64_t> widths;
  };
  const Case cases[] = {
      {PresetKind::mlp, 2, {3, 2, 2}},
      {PresetKind::rnn, 1, {3, 4}},
      {PresetKind::cnn1d, 1, {3, 2}},
  };
  for (const auto& c : cases) {
    auto spec = preset_spec(c.kind, c.depth, c.widths);
    DimSizes sizes = preset_sizes(c.kind, c.depth, c.widths);
    auto certs = certify_spec(spec, sizes);
    CHECK(certs.size() == spec.size() * spec.size());
    for (const auto& [pair, cert] : certs) {
      INFO(pair.first << " <- " << pair.second);
      CHECK(cert.equal);
      CHECK(cert.enumerated ==
            partition_count(spec.tensor(spec.index_of(pair.first)).dims,
                            spec.tensor(spec.index_of(pair.second)).dims));
    }
  }
}

TEST_CASE("dropping or duplicating a basis element changes rank as expected", "[oracle]") {
  DimSizes sizes{{"n2", 3}, {"n1", 2}};
  auto basis = pair_basis_dims({"n2", "n1"}, {"n2", "n1"});
  REQUIRE(basis.size() == 4);

  std::vector<BasisDescriptor> missing(basis.begin(), basis.end() - 1);
  CHECK(basis_rank(missing, sizes) == 3);
  CHECK(fixed_subspace_dimension({"n2", "n1"}, {"n2", "n1"}, sizes) == 4);

  std::vector<BasisDescriptor> padded = basis;
  padded.push_back(basis.front());
  CHECK(basis_rank(padded, sizes) == 4);
}

TEST_CASE("materialized matrices match the executed maps", "[oracle]") {
  DimSizes sizes{{"n2", 3}, {"n1", 2}};
  Rng rng(404);
  for (const auto& d : pair_basis_dims({"n2", "n1"}, {"n2", "n1"})) {
    Eigen::MatrixXd m = materialize_basis_matrix(d, sizes);
    NdArray<double> x({3, 2});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    auto y = apply_basis(d, sizes, x);
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size());
    Eigen::VectorXd ym = m * xv;
    for (std::int64_t i = 0; i < y.size(); ++i) {
      REQUIRE(y[i] == Catch::Approx(ym(i)).margin(1e-12));
    }
  }
}

TEST_CASE("equivariance checker flags a position-dependent map", "[oracle]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);
  auto broken = [](const WeightValues<double>& w) {
    WeightValues<double> out = w;
    out.channel_data(0, 0)[0] += 1.0;
    return out;
  };
  auto report = check_equivariance<double>(broken, spec, sizes, 2, 8, 99, 1e-12);
  CHECK_FALSE(report.pass);
  CHECK(report.max_error >= 1.0 - 1e-9);

  auto id = [](const WeightValues<double>& w) { return w; };
  CHECK(check_equivariance<double>(id, spec, sizes, 2, 8, 99, 1e-12).pass);
}

TEST_CASE("invariance checker flags an entry readout", "[oracle]") {
  std::vector<std::int64_t> widths{3, 2, 2};
  auto spec = test::shared_spec(preset_spec(PresetKind::mlp, 2, widths));
  DimSizes sizes = preset_sizes(PresetKind::mlp, 2, widths);
  auto readout = [](const WeightValues<double>& w) {
    return std::vector<double>{w.channel_data(0, 0)[0]};
  };
  CHECK_FALSE(check_invariance<double>(readout, spec, sizes, 1, 8, 7, 1e-12).pass);
}

TEST_CASE("oracle caps fail loudly instead of silently truncating", "[oracle]") {
  DimSizes big{{"a", 9}};
  CHECK_THROWS_AS(fixed_subspace_dimension({"a"}, {"a"}, big, 10000), CapError);
  DimSizes sizes{{"n2", 6}, {"n1", 6}};
  CHECK_THROWS_AS(fixed_subspace_dimension({"n2", "n1"}, {"n2", "n1"}, sizes, 10000000, 1000),
                  CapError);
  auto basis = pair_basis_dims({"n2", "n1"}, {"n2", "n1"});
  CHECK_THROWS_AS(basis_rank(basis, sizes, 100), CapError);
  CHECK_THROWS_AS(certify_pair({"a", "a"}, {"a", "a"}, DimSizes{{"a", 2}}, 10000, 1000000, 10),
                  CapError);
}
