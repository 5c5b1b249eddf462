#include "lsm/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <random>

#include "lsm/diffops.hpp"
#include "lsm/error.hpp"
#include "lsm/fusion.hpp"
#include "lsm/nn/convert.hpp"
#include "lsm/nn/layers.hpp"
#include "lsm/nn/toy_model.hpp"
#include "lsm/synthgen.hpp"

namespace lsm::check {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

using Rng = std::mt19937_64;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data) v = d(rng);
  return t;
}

/// Uniform in [-hi, -lo] U [lo, hi]: keeps inputs away from kinks at zero.
Tensor away_from_zero(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t = random_tensor(std::move(shape), rng, lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data) v = sign(rng) ? v : -v;
  return t;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Probe over tape inputs and (optionally) parameters whose values are
/// appended after the plain inputs.
Probe tape_probe(std::string name, std::vector<Tensor> inputs, std::vector<Parameter*> params,
                 TapeFn fn, Rng& rng) {
  const std::size_t n_plain = inputs.size();
  for (Parameter* p : params) inputs.push_back(p->value);
  // Output cotangent is fixed once the output shape is known.
  auto weights = std::make_shared<Tensor>();
  auto seed = std::make_shared<std::uint64_t>(rng());
  auto run = [=](const std::vector<Tensor>& x, bool with_grad, std::vector<Tensor>* grads) {
    Tape t;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < n_plain; ++i) vars.push_back(t.leaf(x[i]));
    for (std::size_t j = 0; j < params.size(); ++j) {
      params[j]->value = x[n_plain + j];
      params[j]->zero_grad();
    }
    Var out = fn(t, vars);
    if (weights->data.empty()) {
      Rng wr(*seed);
      *weights = random_tensor(t.value(out).shape, wr);
    }
    Var l = nn::dot_const(t, out, *weights);
    const double value = t.value(l).item();
    if (with_grad) {
      t.backward(l);
      grads->clear();
      for (std::size_t i = 0; i < n_plain; ++i) {
        grads->push_back(t.has_grad(vars[i]) ? t.grad(vars[i]) : Tensor(x[i].shape));
      }
      for (Parameter* p : params) grads->push_back(p->grad);
    }
    return value;
  };
  Probe p;
  p.name = std::move(name);
  p.inputs = std::move(inputs);
  p.value = [run](const std::vector<Tensor>& x) { return run(x, false, nullptr); };
  p.gradient = [run](const std::vector<Tensor>& x) {
    std::vector<Tensor> g;
    run(x, true, &g);
    return g;
  };
  return p;
}

Camera random_camera(int width, int height, Rng& rng) {
  std::uniform_real_distribution<double> az(0.0, 360.0), el(-20.0, 30.0), rad(1.8, 2.4);
  return Camera{synth::default_intrinsics(width, height),
                synth::pose_on_sphere(az(rng), el(rng), rad(rng))};
}

// ---- probes -------------------------------------------------------------

Probe bilinear_probe(Rng& rng) {
  const int h = 6, w = 7, c = 3;
  Tensor map = random_tensor({h, w, c}, rng);
  std::uniform_real_distribution<double> du(-1.0, w), dv(-1.0, h);
  std::vector<ops::PixelCoord> pts(24);
  for (auto& p : pts) p = {du(rng), dv(rng)};
  Tensor weights = random_tensor({int(pts.size()), c}, rng);
  Probe p;
  p.name = "bilinear";
  p.inputs = {map};
  p.value = [=](const std::vector<Tensor>& x) {
    const auto r = ops::bilinear_sample(nn::to_map(x[0]), pts);
    return dot(r.values, weights.data);
  };
  p.gradient = [=](const std::vector<Tensor>& x) {
    const auto g = ops::bilinear_sample_vjp(nn::to_map(x[0]), pts, weights.data);
    return std::vector<Tensor>{nn::to_tensor(g)};
  };
  return p;
}

Probe unproject_probe(Rng& rng) {
  const Camera cam = random_camera(6, 5, rng);
  VoxelGridSpec spec;
  spec.resolution = 5;
  auto plan = std::make_shared<const ops::UnprojectPlan>(
      ops::make_unproject_plan(cam.intrinsics, cam.pose, spec, ops::GeomFeatureConfig{true, true}));
  return tape_probe("unproject", {random_tensor({5, 6, 3}, rng)}, {},
                    [plan](Tape& t, const std::vector<Var>& v) { return nn::unproject(t, v[0], plan); },
                    rng);
}

Probe project_probe(Rng& rng, bool trilinear) {
  const Camera cam = random_camera(6, 6, rng);
  VoxelGridSpec spec;
  spec.resolution = 5;
  auto plan = std::make_shared<const ops::ProjectPlan>(ops::make_project_plan(
      spec, cam.intrinsics, cam.pose, 6,
      trilinear ? ops::Interp::kTrilinear : ops::Interp::kNearest));
  return tape_probe(trilinear ? "project-trilinear" : "project-nearest",
                    {random_tensor({5, 5, 5, 2}, rng)}, {},
                    [plan](Tape& t, const std::vector<Var>& v) { return nn::project(t, v[0], plan); },
                    rng);
}

Probe gru_probe(Rng& rng, std::shared_ptr<fusion::GruCellParams> cell) {
  const int hidden = 16;
  *cell = fusion::GruCellParams::random(2, hidden, 3, rng(), 0.5);
  for (int g = 0; g < 3; ++g) {
    cell->bias[g].value = random_tensor({hidden}, rng, -0.3, 0.3);
    cell->norm_gain[g].value = random_tensor({hidden}, rng, 0.5, 1.5);
    cell->norm_shift[g].value = random_tensor({hidden}, rng, -0.3, 0.3);
  }
  return tape_probe("gru",
                    {random_tensor({3, 3, 3, hidden}, rng), random_tensor({3, 3, 3, 2}, rng)},
                    cell->parameters(),
                    [cell](Tape& t, const std::vector<Var>& v) {
                      return fusion::gru_step(t, v[0], v[1], *cell);
                    },
                    rng);
}

double relu_margin(const nn::RayReduceHead& head, const Tensor& x) {
  Tape t;
  Var v = t.leaf(x);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < head.kernels.size(); ++l) {
    v = nn::conv2d(t, v, t.constant(head.kernels[l].value), t.constant(head.biases[l].value), 1,
                   nn::Padding::kValid);
    for (double a : t.value(v).data) margin = std::min(margin, std::abs(a));
    v = nn::relu(t, v);
  }
  return margin;
}

using ProbeBuilder = std::function<Probe(Rng&)>;

std::vector<std::pair<std::string, ProbeBuilder>> layer_builders() {
  std::vector<std::pair<std::string, ProbeBuilder>> b;
  auto conv = [](int dims, int stride, nn::Padding pad) {
    return [=](Rng& rng) {
      std::vector<int> xs = dims == 2 ? std::vector<int>{5, 6, 3} : std::vector<int>{4, 5, 4, 2};
      std::vector<int> ks = dims == 2 ? std::vector<int>{3, 3, 3, 2} : std::vector<int>{3, 3, 3, 2, 3};
      const int cout = ks.back();
      std::string name = std::string(dims == 2 ? "conv2d" : "conv3d") +
                         (stride > 1 ? "-stride2" : "") + (pad == nn::Padding::kValid ? "-valid" : "");
      return tape_probe(name, {random_tensor(xs, rng), random_tensor(ks, rng), random_tensor({cout}, rng)}, {},
                        [=](Tape& t, const std::vector<Var>& v) {
                          return dims == 2 ? nn::conv2d(t, v[0], v[1], v[2], stride, pad)
                                           : nn::conv3d(t, v[0], v[1], v[2], stride, pad);
                        },
                        rng);
    };
  };
  b.emplace_back("conv2d", conv(2, 1, nn::Padding::kSame));
  b.emplace_back("conv2d-stride2", conv(2, 2, nn::Padding::kSame));
  b.emplace_back("conv2d-valid", conv(2, 1, nn::Padding::kValid));
  b.emplace_back("conv3d", conv(3, 1, nn::Padding::kSame));
  b.emplace_back("conv3d-stride2", conv(3, 2, nn::Padding::kSame));
  b.emplace_back("instance_norm", [](Rng& rng) {
    return tape_probe("instance_norm",
                      {random_tensor({4, 5, 3}, rng), random_tensor({3}, rng, 0.5, 1.5),
                       random_tensor({3}, rng)},
                      {},
                      [](Tape& t, const std::vector<Var>& v) {
                        return nn::instance_norm(t, v[0], v[1], v[2]);
                      },
                      rng);
  });
  b.emplace_back("layer_norm", [](Rng& rng) {
    return tape_probe("layer_norm",
                      {random_tensor({3, 4, 5}, rng), random_tensor({5}, rng, 0.5, 1.5),
                       random_tensor({5}, rng)},
                      {},
                      [](Tape& t, const std::vector<Var>& v) {
                        return nn::layer_norm(t, v[0], v[1], v[2]);
                      },
                      rng);
  });
  auto unary = [](std::string name, Var (*f)(Tape&, Var), bool avoid_zero) {
    return [=](Rng& rng) {
      Tensor x = avoid_zero ? away_from_zero({4, 3, 2}, rng, 0.05, 1.5)
                            : random_tensor({4, 3, 2}, rng, -2.0, 2.0);
      return tape_probe(name, {x}, {}, [f](Tape& t, const std::vector<Var>& v) { return f(t, v[0]); },
                        rng);
    };
  };
  b.emplace_back("relu", unary("relu", nn::relu, true));
  b.emplace_back("sigmoid", unary("sigmoid", nn::sigmoid, false));
  b.emplace_back("tanh", unary("tanh", nn::tanh, false));
  b.emplace_back("elementwise", [](Rng& rng) {
    return tape_probe("elementwise",
                      {random_tensor({3, 4, 2}, rng), random_tensor({3, 4, 2}, rng),
                       random_tensor({2}, rng)},
                      {},
                      [](Tape& t, const std::vector<Var>& v) {
                        Var a = nn::mul(t, v[0], v[1]);
                        Var s = nn::sub(t, nn::add(t, a, v[0]), v[1]);
                        return nn::add_channel_bias(t, nn::affine(t, s, 1.5, 0.2), v[2]);
                      },
                      rng);
  });
  b.emplace_back("concat_upsample", [](Rng& rng) {
    return tape_probe("concat_upsample", {random_tensor({3, 2, 2}, rng), random_tensor({3, 2, 3}, rng)},
                      {},
                      [](Tape& t, const std::vector<Var>& v) {
                        return nn::upsample_nearest2d(t, nn::concat_channels(t, {v[0], v[1]}), 2);
                      },
                      rng);
  });
  b.emplace_back("mean_max", [](Rng& rng) {
    // Per element the three inputs differ by >= 0.1 so the max never ties.
    std::vector<Tensor> xs(3, Tensor({2, 3, 2}));
    std::uniform_real_distribution<double> base(-1.0, 1.0), jitter(0.0, 0.05);
    for (std::size_t e = 0; e < xs[0].size(); ++e) {
      std::array<int, 3> order{0, 1, 2};
      std::shuffle(order.begin(), order.end(), rng);
      const double b0 = base(rng);
      for (int k = 0; k < 3; ++k) xs[order[k]].data[e] = b0 + 0.15 * k + jitter(rng);
    }
    return tape_probe("mean_max", xs, {},
                      [](Tape& t, const std::vector<Var>& v) {
                        return nn::concat_channels(t, {nn::mean_of(t, v), nn::max_of(t, v)});
                      },
                      rng);
  });
  b.emplace_back("softmax2", [](Rng& rng) {
    return tape_probe("softmax2", {random_tensor({3, 4, 2}, rng, -3.0, 3.0)}, {},
                      [](Tape& t, const std::vector<Var>& v) {
                        return nn::softmax2_occupancy(t, v[0]);
                      },
                      rng);
  });
  b.emplace_back("ray_reduce_head", [](Rng& rng) {
    auto head = std::make_shared<nn::RayReduceHead>();
    head->init(20, rng());
    for (auto* p : head->parameters()) {
      if (p->value.rank() == 1) p->value = random_tensor(p->value.shape, rng, -0.2, 0.2);
    }
    // Resample until every hidden pre-activation is clear of the relu kink.
    Tensor x;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      x = random_tensor({3, 3, 20}, rng);
      if (relu_margin(*head, x) > 0.02) break;
    }
    return tape_probe("ray_reduce_head", {x}, head->parameters(),
                      [head](Tape& t, const std::vector<Var>& v) { return head->forward(t, v[0]); },
                      rng);
  });
  b.emplace_back("voxel_head", [](Rng& rng) {
    auto head = std::make_shared<nn::VoxelHead>();
    head->init(4, rng());
    head->bias.value = random_tensor({2}, rng, -0.3, 0.3);
    return tape_probe("voxel_head", {random_tensor({3, 3, 3, 4}, rng)}, head->parameters(),
                      [head](Tape& t, const std::vector<Var>& v) { return head->forward(t, v[0]); },
                      rng);
  });
  b.emplace_back("bce_loss", [](Rng& rng) {
    Tensor target = random_tensor({3, 3, 3}, rng, 0.0, 1.0);
    for (double& y : target.data) y = y < 0.5 ? 0.0 : 1.0;
    return tape_probe("bce_loss", {random_tensor({3, 3, 3}, rng, 0.1, 0.9)}, {},
                      [target](Tape& t, const std::vector<Var>& v) {
                        return nn::bce_loss(t, v[0], target);
                      },
                      rng);
  });
  b.emplace_back("l1_loss", [](Rng& rng) {
    Tensor gt = random_tensor({4, 4, 1}, rng, 1.0, 3.0);
    Tensor pred = away_from_zero({4, 4, 1}, rng, 0.05, 0.5);
    for (std::size_t i = 0; i < pred.size(); ++i) pred.data[i] += gt.data[i];
    Tensor mask = random_tensor({4, 4, 1}, rng, 0.0, 1.0);
    for (double& m : mask.data) m = m < 0.3 ? 0.0 : 1.0;
    mask.data[0] = 1.0;
    return tape_probe("l1_loss", {pred}, {},
                      [gt, mask](Tape& t, const std::vector<Var>& v) {
                        return nn::l1_loss(t, v[0], gt, mask);
                      },
                      rng);
  });
  return b;
}

std::vector<std::pair<std::string, ProbeBuilder>> group_builders(const std::string& group) {
  std::vector<std::pair<std::string, ProbeBuilder>> b;
  if (group == "bilinear" || group == "all") b.emplace_back("bilinear", bilinear_probe);
  if (group == "unproject" || group == "all") b.emplace_back("unproject", unproject_probe);
  if (group == "project" || group == "all") {
    b.emplace_back("project-trilinear", [](Rng& r) { return project_probe(r, true); });
    b.emplace_back("project-nearest", [](Rng& r) { return project_probe(r, false); });
  }
  if (group == "gru" || group == "all") {
    b.emplace_back("gru", [](Rng& r) {
      return gru_probe(r, std::make_shared<fusion::GruCellParams>());
    });
  }
  if (group == "layers" || group == "all") {
    for (auto& l : layer_builders()) b.push_back(std::move(l));
  }
  return b;
}

}  // namespace

ProbeError compare_gradient(const Probe& probe, std::size_t max_entries, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> x = probe.inputs;
  const std::vector<Tensor> analytic = probe.gradient(x);
  if (analytic.size() != x.size()) {
    throw Error("gradcheck " + probe.name + ": gradient count mismatch");
  }
  const double h = kFiniteDiffStep;
  ProbeError err;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!analytic[i].same_shape(x[i])) {
      throw Error("gradcheck " + probe.name + ": gradient shape mismatch for input " +
                  std::to_string(i));
    }
    std::vector<std::size_t> idx(x[i].size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
      std::sort(idx.begin(), idx.end());
    }
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t e : idx) {
      const double orig = x[i].data[e];
      x[i].data[e] = orig + h;
      const double fp = probe.value(x);
      x[i].data[e] = orig - h;
      const double fm = probe.value(x);
      x[i].data[e] = orig;
      pairs.emplace_back(analytic[i].data[e], (fp - fm) / (2.0 * h));
    }
    double max_a = 0.0, max_n = 0.0, max_diff = 0.0;
    for (const auto& [a, n] : pairs) {
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(n));
      max_diff = std::max(max_diff, std::abs(a - n));
    }
    const double scale = std::max(max_a, max_n);
    if (scale > 1e-12) err.max_rel_error = std::max(err.max_rel_error, max_diff / scale);
    for (const auto& [a, n] : pairs) {
      const double denom = std::max({std::abs(a), std::abs(n), 1e-3 * max_n, 1e-12});
      err.max_entry_rel_error = std::max(err.max_entry_rel_error, std::abs(a - n) / denom);
    }
    err.entries += pairs.size();
  }
  return err;
}

const std::vector<std::string>& gradcheck_groups() {
  static const std::vector<std::string> g{"bilinear", "unproject", "project", "gru", "layers"};
  return g;
}

std::vector<GradcheckResult> run_gradcheck(const std::string& group, int trials,
                                           std::uint64_t seed) {
  if (group != "all" &&
      std::find(gradcheck_groups().begin(), gradcheck_groups().end(), group) ==
          gradcheck_groups().end()) {
    throw InvalidArgument("gradcheck: unknown op '" + group + "'");
  }
  if (trials < 1) throw InvalidArgument("gradcheck: trials must be >= 1");
  std::vector<GradcheckResult> out;
  const auto builders = group_builders(group);
  for (std::size_t b = 0; b < builders.size(); ++b) {
    GradcheckResult r;
    r.op = builders[b].first;
    r.trials = trials;
    const auto start = std::chrono::steady_clock::now();
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(synth::mix_seed(seed, b * 1000 + trial));
      const Probe probe = builders[b].second(rng);
      const auto e = compare_gradient(probe, 48, rng());
      r.max_rel_error = std::max(r.max_rel_error, e.max_rel_error);
      r.max_entry_rel_error = std::max(r.max_entry_rel_error, e.max_entry_rel_error);
      r.entries += e.entries;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(r);
  }
  return out;
}

namespace {

AdjointResult finish(std::string name, double fwd, double adj) {
  AdjointResult r;
  r.name = std::move(name);
  r.forward_side = fwd;
  r.adjoint_side = adj;
  r.rel_error = std::abs(fwd - adj) / std::max({std::abs(fwd), std::abs(adj), 1e-300});
  return r;
}

}  // namespace

AdjointResult unproject_adjoint(int resolution, int channels, std::uint64_t seed) {
  Rng rng(seed);
  const Camera cam = random_camera(4 * resolution, 3 * resolution, rng);
  VoxelGridSpec spec;
  spec.resolution = resolution;
  const auto plan = ops::make_unproject_plan(cam.intrinsics, cam.pose, spec, {});
  const Tensor x = random_tensor({cam.intrinsics.height, cam.intrinsics.width, channels}, rng);
  const Tensor y = random_tensor({resolution, resolution, resolution, channels}, rng);
  const FeatureGrid ax = ops::apply_unproject(plan, nn::to_map(x));
  const FeatureMap aty = ops::apply_unproject_vjp(plan, channels, nn::to_grid(y, spec));
  return finish("unproject", dot(ax.values, y.data), dot(x.data, aty.values));
}

AdjointResult project_adjoint(int resolution, int channels, bool trilinear, std::uint64_t seed) {
  Rng rng(seed);
  const Camera cam = random_camera(2 * resolution, 2 * resolution, rng);
  VoxelGridSpec spec;
  spec.resolution = resolution;
  const auto plan =
      ops::make_project_plan(spec, cam.intrinsics, cam.pose, resolution,
                             trilinear ? ops::Interp::kTrilinear : ops::Interp::kNearest);
  const Tensor x = random_tensor({resolution, resolution, resolution, channels}, rng);
  const Tensor y = random_tensor({cam.intrinsics.height, cam.intrinsics.width, resolution * channels}, rng);
  const FeatureMap ax = ops::apply_project(plan, nn::to_grid(x, spec));
  const FeatureGrid aty = ops::apply_project_vjp(plan, channels, nn::to_map(y));
  return finish(trilinear ? "project-trilinear" : "project-nearest", dot(ax.values, y.data),
                dot(x.data, aty.values));
}

AdjointResult model_adjoint(const std::string& head, std::uint64_t seed) {
  nn::ToyModelConfig cfg;
  cfg.encoder_channels = {3, 4, 4};
  cfg.reasoner_channels = {4, 2};
  cfg.head = head;
  cfg.n_planes = 4;
  cfg.image_width = cfg.image_height = 16;
  cfg.grid_resolution = 8;
  cfg.views_per_step = 2;
  cfg.seed = seed;
  nn::ToyModel model(cfg);

  synth::DatasetOptions opts;
  opts.views = 2;
  opts.resolution = 8;
  opts.width = opts.height = 16;
  opts.seed = seed;
  opts.family = "composite";
  const auto scene = synth::make_scene(opts, 0);
  const std::vector<int> views{0, 1};

  auto params = model.parameters();
  Rng rng(synth::mix_seed(seed, 77));
  std::vector<Tensor> dir;
  for (auto* p : params) dir.push_back(random_tensor(p->value.shape, rng));

  auto outputs = [&](Tape& t) {
    if (head == "voxel") return std::vector<Var>{model.forward_voxel(t, scene, views)};
    return model.forward_depth(t, scene, views);
  };
  std::vector<Tensor> weights;
  {
    Tape t;
    for (Var v : outputs(t)) weights.push_back(random_tensor(t.value(v).shape, rng));
  }
  auto objective = [&]() {
    Tape t;
    const auto out = outputs(t);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += dot(t.value(out[i]).data, weights[i].data);
    return s;
  };

  // <x, A^T y>: reverse pass seeded with the output cotangents.
  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    const auto out = outputs(t);
    Var total = nn::dot_const(t, out[0], weights[0]);
    for (std::size_t i = 1; i < out.size(); ++i) {
      total = nn::add(t, total, nn::dot_const(t, out[i], weights[i]));
    }
    t.backward(total);
  }
  double adjoint_side = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) adjoint_side += dot(params[i]->grad.data, dir[i].data);

  // <A x, y>: directional derivative along `dir` by central differences.
  const double h = 1e-5;
  std::vector<Tensor> base;
  for (auto* p : params) base.push_back(p->value);
  auto shift = [&](double s) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t e = 0; e < base[i].size(); ++e) {
        params[i]->value.data[e] = base[i].data[e] + s * dir[i].data[e];
      }
    }
  };
  shift(h);
  const double fp = objective();
  shift(-h);
  const double fm = objective();
  shift(0.0);
  return finish("model-" + head, (fp - fm) / (2.0 * h), adjoint_side);
}

}  // namespace lsm::check
