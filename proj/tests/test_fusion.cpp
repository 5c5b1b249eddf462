#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "lsm/error.hpp"
#include "lsm/fusion.hpp"
#include "lsm/gradcheck.hpp"

using namespace lsm;

namespace {

FeatureGrid random_grid(int res, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  VoxelGridSpec spec;
  spec.resolution = res;
  FeatureGrid g(spec, c);
  for (double& v : g.values) v = d(rng);
  return g;
}

FeatureGrid constant_grid(int res, int c, double value) {
  VoxelGridSpec spec;
  spec.resolution = res;
  return FeatureGrid(spec, c, value);
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("pointwise fusion") {
  std::mt19937_64 rng(1);
  std::vector<FeatureGrid> grids{random_grid(4, 3, rng), random_grid(4, 3, rng),
                                 random_grid(4, 3, rng), random_grid(4, 3, rng)};
  for (auto mode : {fusion::PointwiseMode::kMean, fusion::PointwiseMode::kMax}) {
    auto single = fusion::fuse_pointwise(std::span(grids.data(), 1), mode);
    CHECK(single.values == grids[0].values);

    const auto ref = fusion::fuse_pointwise(grids, mode);
    std::vector<int> order{0, 1, 2, 3};
    while (std::next_permutation(order.begin(), order.end())) {
      std::vector<FeatureGrid> p;
      for (int i : order) p.push_back(grids[i]);
      CHECK(fusion::fuse_pointwise(p, mode).values == ref.values);
    }
  }
  std::vector<FeatureGrid> c{constant_grid(3, 2, 1.0), constant_grid(3, 2, 3.0)};
  for (double v : fusion::fuse_pointwise(c, fusion::PointwiseMode::kMean).values) CHECK(v == 2.0);
  for (double v : fusion::fuse_pointwise(c, fusion::PointwiseMode::kMax).values) CHECK(v == 3.0);

  std::vector<FeatureGrid> mismatched{constant_grid(3, 2, 0.0), constant_grid(4, 2, 0.0)};
  CHECK_THROWS_AS(fusion::fuse_pointwise(mismatched, fusion::PointwiseMode::kMean), InvalidArgument);
  CHECK_THROWS_AS(fusion::fuse_pointwise({}, fusion::PointwiseMode::kMean), InvalidArgument);
}

TEST_CASE("gru with zero weights halves the state") {
  std::mt19937_64 rng(2);
  auto p = fusion::GruCellParams::zeros(2, 3);
  const auto h = random_grid(4, 3, rng);
  const auto x = constant_grid(4, 2, 0.0);
  const auto out = fusion::gru_step(h, x, p);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    CHECK(out.values[i] == doctest::Approx(0.5 * h.values[i]).epsilon(1e-12));
  }
  std::vector<FeatureGrid> one{random_grid(4, 2, rng)};
  for (double v : fusion::fuse_recurrent(one, p).values) CHECK(v == 0.0);
}

TEST_CASE("gru gate limits") {
  std::mt19937_64 rng(3);
  auto p = fusion::GruCellParams::random(2, 3, 3, 17, 0.5);
  // The update gate is normalised, so it is forced through the LN shift.
  p.norm_shift[fusion::GruCellParams::kUpdate].value.data.assign(3, -50.0);
  const auto h = random_grid(4, 3, rng);
  const auto x = random_grid(4, 2, rng);
  const auto frozen = fusion::gru_step(h, x, p);
  for (std::size_t i = 0; i < h.values.size(); ++i) CHECK(std::abs(frozen.values[i] - h.values[i]) < 1e-12);

  // z = 1 with no recurrent kernels: the last view alone decides the state.
  p.norm_shift[fusion::GruCellParams::kUpdate].value.data.assign(3, 50.0);
  for (auto& k : p.hidden_kernel) std::fill(k.value.data.begin(), k.value.data.end(), 0.0);
  std::vector<FeatureGrid> views{random_grid(4, 2, rng), random_grid(4, 2, rng), random_grid(4, 2, rng)};
  const auto all = fusion::fuse_recurrent(views, p);
  const auto last = fusion::fuse_recurrent(std::span(views.data() + 2, 1), p);
  for (std::size_t i = 0; i < all.values.size(); ++i) CHECK(std::abs(all.values[i] - last.values[i]) < 1e-12);
}

TEST_CASE("gru outputs stay finite and ordering deviation is reported") {
  std::mt19937_64 rng(4);
  auto p = fusion::GruCellParams::random(2, 4, 3, 5, 2.0);
  std::vector<FeatureGrid> views;
  for (int i = 0; i < 5; ++i) views.push_back(random_grid(4, 2, rng, 1e6));
  const auto out = fusion::fuse_recurrent(views, p);
  for (double v : out.values) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.0 + 1e-12);
  }
  const double dev = fusion::ordering_deviation(views, p, 5, 9);
  CHECK(std::isfinite(dev));
  CHECK(dev >= 0.0);
  CHECK(fusion::ordering_deviation(views, p, 1, 9) == 0.0);
}

TEST_CASE("gru gradients match finite differences") {
  const auto r = check::run_gradcheck("gru", 2, 21);
  REQUIRE(r.size() == 1);
  CHECK(r[0].max_rel_error < 1e-4);
}

TEST_CASE("gru shape errors") {
  auto p = fusion::GruCellParams::zeros(2, 3);
  CHECK_THROWS_AS(fusion::gru_step(constant_grid(4, 3, 0), constant_grid(4, 3, 0), p), InvalidArgument);
  CHECK_THROWS_AS(fusion::gru_step(constant_grid(4, 3, 0), constant_grid(3, 2, 0), p), InvalidArgument);
}

}
