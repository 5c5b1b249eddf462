#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "lsm/error.hpp"
#include "lsm/gradcheck.hpp"
#include "lsm/nn/layers.hpp"
#include "lsm/nn/optim.hpp"
#include "lsm/nn/toy_model.hpp"
#include "lsm/synthgen.hpp"

using namespace lsm;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data) v = d(rng);
  return t;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("tape accumulates fan-out") {
  Tape t;
  Var x = t.leaf(Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  Var y = nn::sum(t, nn::add(t, nn::mul(t, x, x), x));
  t.backward(y);
  const auto& g = t.grad(x);
  CHECK(g.data[0] == doctest::Approx(3.0));
  CHECK(g.data[1] == doctest::Approx(-3.0));
  CHECK(g.data[2] == doctest::Approx(2.0));
  CHECK(t.last_visit_count() >= 3);

  Tape c;
  Var k = c.constant(Tensor({2}, 1.0));
  Var s = nn::sum(c, nn::affine(c, k, 2.0, 1.0));
  CHECK_FALSE(c.requires_grad(s));
  CHECK(c.value(s).item() == 6.0);
}

TEST_CASE("parameters receive gradients") {
  nn::Parameter p("w", Tensor({2}, std::vector<double>{2.0, 3.0}));
  Tape t;
  Var w = t.param(p);
  t.backward(nn::dot_const(t, w, Tensor({2}, std::vector<double>{5.0, -1.0})));
  CHECK(p.grad.data == std::vector<double>{5.0, -1.0});
}

TEST_CASE("conv examples") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({5, 4, 3}, rng);
  Tensor eye({1, 1, 3, 3});
  for (int c = 0; c < 3; ++c) eye.data[c * 3 + c] = 1.0;
  Tape t;
  Var y = nn::conv2d(t, t.constant(x), t.constant(eye), t.constant(Tensor({3})));
  CHECK(t.value(y).data == x.data);

  Tensor ones({6, 7, 1}, 2.0);
  Tensor avg({3, 3, 1, 1}, 1.0 / 9.0);
  Var a = nn::conv2d(t, t.constant(ones), t.constant(avg), t.constant(Tensor({1})));
  const auto& out = t.value(a);
  CHECK(out.shape == std::vector<int>{6, 7, 1});
  for (int v = 1; v < 5; ++v) {
    for (int u = 1; u < 6; ++u) CHECK(out.data[v * 7 + u] == doctest::Approx(2.0));
  }
  CHECK(out.data[0] == doctest::Approx(2.0 * 4.0 / 9.0));

  Var s = nn::conv2d(t, t.constant(ones), t.constant(avg), t.constant(Tensor({1})), 2);
  CHECK(t.value(s).shape == std::vector<int>{3, 4, 1});
  Var v = nn::conv2d(t, t.constant(ones), t.constant(avg), t.constant(Tensor({1})), 1,
                     nn::Padding::kValid);
  CHECK(t.value(v).shape == std::vector<int>{4, 5, 1});

  Tensor cube({4, 4, 4, 1}, 1.0);
  Tensor k3({3, 3, 3, 1, 2}, 1.0 / 27.0);
  Var c3 = nn::conv3d(t, t.constant(cube), t.constant(k3), t.constant(Tensor({2})));
  CHECK(t.value(c3).shape == std::vector<int>{4, 4, 4, 2});
  CHECK(t.value(c3).data[(((1 * 4 + 1) * 4) + 2) * 2 + 1] == doctest::Approx(1.0));

  CHECK_THROWS_AS(nn::conv2d(t, t.constant(x), t.constant(avg), t.constant(Tensor({1}))),
                  InvalidArgument);
}

TEST_CASE("normalization examples") {
  Tape t;
  Tensor flat({3, 4, 2}, 5.0);
  Var gain = t.constant(Tensor({2}, 1.0)), shift = t.constant(Tensor({2}));
  for (double v : t.value(nn::instance_norm(t, t.constant(flat), gain, shift)).data) CHECK(v == 0.0);

  std::mt19937_64 rng(2);
  Tensor x = random_tensor({6, 5, 2}, rng, -10.0, 10.0);
  const auto& y = t.value(nn::instance_norm(t, t.constant(x), gain, shift));
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (int p = 0; p < 30; ++p) mean += y.data[p * 2 + c] / 30.0;
    for (int p = 0; p < 30; ++p) var += std::pow(y.data[p * 2 + c] - mean, 2) / 30.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }

  Tensor z = random_tensor({4, 8}, rng, -10.0, 10.0);
  const auto& ln = t.value(nn::layer_norm(t, t.constant(z), t.constant(Tensor({8}, 1.0)),
                                          t.constant(Tensor({8}))));
  for (int p = 0; p < 4; ++p) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 8; ++c) mean += ln.data[p * 8 + c] / 8.0;
    for (int c = 0; c < 8; ++c) var += std::pow(ln.data[p * 8 + c] - mean, 2) / 8.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("ray reduce head selecting one plane block emits its depth") {
  const int planes = 32;
  const auto plan = nn::RayReduceHead::channel_plan(planes);
  CHECK(plan == std::vector<int>{32, 16, 8, 1});
  const std::vector<double> depths = [&] {
    std::vector<double> z(planes);
    for (int k = 0; k < planes; ++k) z[k] = 1.5 + (k + 0.5) / planes;
    return z;
  }();
  for (int chosen : {0, 11, 31}) {
    nn::RayReduceHead head;
    head.init(planes, 3);
    for (std::size_t l = 0; l < head.kernels.size(); ++l) {
      auto& k = head.kernels[l].value;
      std::fill(k.data.begin(), k.data.end(), 0.0);
      std::fill(head.biases[l].value.data.begin(), head.biases[l].value.data.end(), 0.0);
      const int cout = k.shape[3];
      if (l == 0) {
        k.data[chosen * cout + 0] = depths[chosen];
      } else {
        k.data[0] = 1.0;
      }
    }
    Tensor x({3, 4, planes}, 1.0);
    Tape t;
    const auto& out = t.value(head.forward(t, t.constant(x)));
    CHECK(out.shape == std::vector<int>{3, 4, 1});
    for (double v : out.data) CHECK(v == doctest::Approx(depths[chosen]));
  }
}

TEST_CASE("ray reduce head is pointwise along rays") {
  std::mt19937_64 rng(4);
  nn::RayReduceHead head;
  head.init(12, 9);
  Tensor x = random_tensor({2, 3, 12}, rng);
  Tensor swapped = x;
  for (int c = 0; c < 12; ++c) std::swap(swapped.data[0 * 12 + c], swapped.data[5 * 12 + c]);
  Tape t;
  const auto a = t.value(head.forward(t, t.constant(x)));
  const auto b = t.value(head.forward(t, t.constant(swapped)));
  CHECK(a.data[0] == b.data[5]);
  CHECK(a.data[5] == b.data[0]);
  for (int i = 1; i < 5; ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("softmax occupancy") {
  Tape t;
  Tensor equal({2, 2}, std::vector<double>{0.3, 0.3, -4.0, -4.0});
  for (double p : t.value(nn::softmax2_occupancy(t, t.constant(equal))).data) CHECK(p == doctest::Approx(0.5));
  double prev = 0.0;
  for (double d : {0.0, 1.0, 5.0, 20.0, 40.0}) {
    Tensor l({1, 2}, std::vector<double>{0.0, d});
    const double p = t.value(nn::softmax2_occupancy(t, t.constant(l))).item();
    CHECK(p >= prev);
    prev = p;
  }
  CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("losses") {
  Tape t;
  Tensor half({4, 2}, 0.5);
  Tensor y({4, 2}, std::vector<double>{0, 1, 1, 0, 1, 1, 0, 0});
  CHECK(std::abs(t.value(nn::bce_loss(t, t.constant(half), y)).item() - std::log(2.0)) < 1e-9);
  CHECK(t.value(nn::bce_loss(t, t.constant(y), y)).item() <= 1e-6);

  Tensor gt({3, 3, 1}, 2.0), mask({3, 3, 1}, 1.0);
  CHECK(t.value(nn::l1_loss(t, t.constant(gt), gt, mask)).item() == 0.0);
  Tensor off({3, 3, 1}, 2.1);
  CHECK(t.value(nn::l1_loss(t, t.constant(off), gt, mask)).item() == doctest::Approx(0.1));
  mask.data[4] = 0.0;
  off.data[4] = 100.0;
  CHECK(t.value(nn::l1_loss(t, t.constant(off), gt, mask)).item() == doctest::Approx(0.1));
}

TEST_CASE("layer gradients match finite differences") {
  for (const auto& r : check::run_gradcheck("layers", 1, 5)) {
    INFO(r.op);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("adam") {
  nn::Parameter p("p", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  nn::Adam opt({&p});
  opt.step();
  CHECK(p.value.data == std::vector<double>{1.0, -2.0, 0.5});

  nn::Parameter q("q", Tensor({2}, std::vector<double>{1.0, 1.0}));
  nn::Adam o2({&q}, nn::AdamConfig{0.01});
  q.grad.data = {3.0, -0.2};
  o2.step();
  CHECK(q.value.data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(q.value.data[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
  CHECK(q.grad.data == std::vector<double>{0.0, 0.0});
  CHECK(o2.steps() == 1);

  auto run = [] {
    nn::Parameter r("r", Tensor({4}, 0.3));
    nn::Adam o({&r});
    for (int i = 0; i < 10; ++i) {
      for (std::size_t k = 0; k < 4; ++k) r.grad.data[k] = std::sin(double(i * 4 + k)) * r.value.data[k];
      o.step();
    }
    return r.value.data;
  };
  CHECK(run() == run());
}

TEST_CASE("toy model training contract") {
  synth::DatasetOptions o;
  o.scenes = 2;
  o.views = 3;
  o.resolution = 8;
  o.width = o.height = 16;
  o.seed = 4;
  const auto scenes = synth::make_scenes(o);

  nn::ToyModelConfig cfg;
  cfg.encoder_channels = {3, 4, 4};
  cfg.reasoner_channels = {4, 2};
  cfg.image_width = cfg.image_height = 16;
  cfg.grid_resolution = 8;
  cfg.views_per_step = 2;
  cfg.n_planes = 4;
  cfg.seed = 7;

  for (const std::string head : {"voxel", "depth"}) {
    cfg.head = head;
    nn::ToyModel a(cfg), b(cfg);
    const auto r0 = nn::train_toy(a, scenes, 0);
    CHECK(r0.loss_curve.size() == 1);
    CHECK(r0.loss_curve[0] == r0.initial_eval_loss);
    const auto ra = nn::train_toy(a, scenes, 3);
    const auto rb = nn::train_toy(b, scenes, 3);
    CHECK(ra.loss_curve.size() == 4);
    CHECK(ra.loss_curve == rb.loss_curve);
  }
}

TEST_CASE("toy model checkpoint round trip") {
  synth::DatasetOptions o;
  o.scenes = 1;
  o.views = 2;
  o.resolution = 8;
  o.width = o.height = 16;
  const auto scenes = synth::make_scenes(o);
  nn::ToyModelConfig cfg;
  cfg.encoder_channels = {3, 4, 4};
  cfg.reasoner_channels = {4, 2};
  cfg.image_width = cfg.image_height = 16;
  cfg.grid_resolution = 8;
  cfg.views_per_step = 2;
  cfg.seed = 1;
  nn::ToyModel a(cfg);
  nn::train_toy(a, scenes, 2);
  const auto dir = std::filesystem::temp_directory_path() / "lsm_test_ckpt";
  std::filesystem::remove_all(dir);
  a.save_checkpoint(dir);
  cfg.seed = 99;
  nn::ToyModel b(cfg);
  b.load_checkpoint(dir);
  const std::vector<int> views{0, 1};
  const auto pa = a.predict_occupancy(scenes[0], views);
  const auto pb = b.predict_occupancy(scenes[0], views);
  for (std::size_t i = 0; i < pa.values.size(); ++i) {
    CHECK(std::abs(pb.values[i] - pa.values[i]) < 1e-5);
  }
}

TEST_CASE("toy config validation") {
  nn::ToyModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.feature_stride() == 4);
  auto j = cfg.to_json();
  CHECK(nn::ToyModelConfig::from_json(j).to_json() == j);
  cfg.head = "mesh";
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

}
