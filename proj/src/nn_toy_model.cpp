#include "lsm/nn/toy_model.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "lsm/error.hpp"
#include "lsm/nn/convert.hpp"
#include "lsm/synthgen.hpp"
#include "lsm/tensorio.hpp"

namespace lsm::nn {

namespace {

constexpr int kEncoderKernel = 3;
constexpr int kReasonerKernel = 3;

int encoder_stride(std::size_t layer) { return layer < 2 ? 2 : 1; }

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
  return synth::mix_seed(seed, stream);
}

std::string camera_key(const Camera& c, const VoxelGridSpec& g, const char* kind, int extra) {
  char buf[512];
  const auto& k = c.intrinsics;
  const auto& r = c.pose.rotation;
  const auto& t = c.pose.translation;
  std::snprintf(buf, sizeof buf,
                "%s|%d|%a %a %a %a %d %d|%a %a %a %a %a %a %a %a %a|%a %a %a|%d %a %a %a %a",
                kind, extra, k.fx, k.fy, k.cx, k.cy, k.width, k.height, r(0, 0), r(0, 1),
                r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2), t.x(), t.y(),
                t.z(), g.resolution, g.center.x(), g.center.y(), g.center.z(), g.side);
  return buf;
}

Tensor image_tensor(const FeatureMap& image) {
  if (image.channels != 3) throw InvalidArgument("toy model: images must have 3 channels");
  return to_tensor(image);
}

}  // namespace

void ToyModelConfig::validate() const {
  auto positive = [](const std::vector<int>& v, const char* what) {
    if (v.empty()) throw InvalidArgument(std::string("toy model: ") + what + " must not be empty");
    for (int c : v) {
      if (c < 1) throw InvalidArgument(std::string("toy model: ") + what + " must be positive");
    }
  };
  positive(encoder_channels, "encoder widths");
  positive(reasoner_channels, "reasoner widths");
  if (encoder_channels.size() < 2) {
    throw InvalidArgument("toy model: encoder needs at least two layers");
  }
  if (fusion != "pointwise" && fusion != "gru") {
    throw InvalidArgument("toy model: fusion must be pointwise or gru");
  }
  if (pointwise_mode != "mean" && pointwise_mode != "max") {
    throw InvalidArgument("toy model: pointwise mode must be mean or max");
  }
  if (head != "voxel" && head != "depth") {
    throw InvalidArgument("toy model: head must be voxel or depth");
  }
  if (gru_hidden < 1 || n_planes < 1 || grid_resolution < 1) {
    throw InvalidArgument("toy model: sizes must be positive");
  }
  if (views_per_step < 1) throw InvalidArgument("toy model: views per step must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("toy model: learning rate must be > 0");
  const int s = feature_stride();
  if (image_width < s || image_height < s || image_width % s || image_height % s) {
    throw InvalidArgument("toy model: image size must be a multiple of " + std::to_string(s));
  }
}

int ToyModelConfig::feature_stride() const {
  int s = 1;
  for (std::size_t l = 0; l < encoder_channels.size(); ++l) s *= encoder_stride(l);
  return s;
}

nlohmann::json ToyModelConfig::to_json() const {
  return {{"encoder_channels", encoder_channels},
          {"reasoner_channels", reasoner_channels},
          {"fusion", fusion},
          {"pointwise_mode", pointwise_mode},
          {"gru_hidden", gru_hidden},
          {"head", head},
          {"n_planes", n_planes},
          {"image_width", image_width},
          {"image_height", image_height},
          {"grid_resolution", grid_resolution},
          {"views_per_step", views_per_step},
          {"learning_rate", learning_rate},
          {"seed", seed}};
}

ToyModelConfig ToyModelConfig::from_json(const nlohmann::json& j) {
  ToyModelConfig c;
  try {
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.reasoner_channels = j.value("reasoner_channels", c.reasoner_channels);
    c.fusion = j.value("fusion", c.fusion);
    c.pointwise_mode = j.value("pointwise_mode", c.pointwise_mode);
    c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
    c.head = j.value("head", c.head);
    c.n_planes = j.value("n_planes", c.n_planes);
    c.image_width = j.value("image_width", c.image_width);
    c.image_height = j.value("image_height", c.image_height);
    c.grid_resolution = j.value("grid_resolution", c.grid_resolution);
    c.views_per_step = j.value("views_per_step", c.views_per_step);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("toy model config: ") + e.what());
  }
  c.validate();
  return c;
}

ToyModel::ToyModel(ToyModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::uint64_t seed = cfg_.seed;
  int cin = 3;
  for (std::size_t l = 0; l < cfg_.encoder_channels.size(); ++l) {
    const int cout = cfg_.encoder_channels[l];
    const std::string id = "encoder." + std::to_string(l);
    Layer layer;
    layer.kernel = Parameter(id + ".kernel",
                             he_normal({kEncoderKernel, kEncoderKernel, cin, cout},
                                       sub_seed(seed, 100 + l)));
    layer.bias = Parameter(id + ".bias", Tensor({cout}));
    layer.gain = Parameter(id + ".norm_gain", Tensor({cout}, 1.0));
    layer.shift = Parameter(id + ".norm_shift", Tensor({cout}));
    layer.stride = encoder_stride(l);
    encoder_.push_back(std::move(layer));
    cin = cout;
  }
  const ops::GeomFeatureConfig geom{true, true};
  int grid_channels = cin + geom.extra_channels();
  if (cfg_.fusion == "gru") {
    gru_ = fusion::GruCellParams::random(grid_channels, cfg_.gru_hidden, 3, sub_seed(seed, 200));
    grid_channels = cfg_.gru_hidden;
  }
  for (std::size_t l = 0; l < cfg_.reasoner_channels.size(); ++l) {
    const int cout = cfg_.reasoner_channels[l];
    const std::string id = "reasoner." + std::to_string(l);
    Layer layer;
    layer.kernel = Parameter(
        id + ".kernel", he_normal({kReasonerKernel, kReasonerKernel, kReasonerKernel,
                                   grid_channels, cout},
                                  sub_seed(seed, 300 + l)));
    layer.bias = Parameter(id + ".bias", Tensor({cout}));
    layer.gain = Parameter(id + ".norm_gain", Tensor({cout}, 1.0));
    layer.shift = Parameter(id + ".norm_shift", Tensor({cout}));
    reasoner_.push_back(std::move(layer));
    grid_channels = cout;
  }
  if (cfg_.head == "voxel") {
    voxel_head_.init(grid_channels, sub_seed(seed, 400));
  } else {
    ray_head_.init(cfg_.n_planes * grid_channels, sub_seed(seed, 500));
    const int skip = cfg_.encoder_channels[0];
    Tensor k = he_normal({3, 3, skip + 1, 1}, sub_seed(seed, 600));
    for (double& v : k.data) v *= 0.1;
    refine_kernel_ = Parameter("depth_refine.kernel", std::move(k));
    refine_bias_ = Parameter("depth_refine.bias", Tensor({1}));
  }
}

std::vector<Parameter*> ToyModel::parameters() {
  std::vector<Parameter*> out;
  for (auto* group : {&encoder_, &reasoner_}) {
    if (group == &reasoner_ && cfg_.fusion == "gru") {
      for (auto* p : gru_.parameters()) out.push_back(p);
    }
    for (auto& l : *group) {
      out.push_back(&l.kernel);
      out.push_back(&l.bias);
      out.push_back(&l.gain);
      out.push_back(&l.shift);
    }
  }
  if (cfg_.head == "voxel") {
    for (auto* p : voxel_head_.parameters()) out.push_back(p);
  } else {
    for (auto* p : ray_head_.parameters()) out.push_back(p);
    out.push_back(&refine_kernel_);
    out.push_back(&refine_bias_);
  }
  return out;
}

void ToyModel::check_scene(const data::SceneRecord& scene, std::span<const int> views) const {
  if (views.empty()) throw InvalidArgument("toy model: no views given for " + scene.name);
  if (scene.grid.resolution != cfg_.grid_resolution) {
    throw InvalidArgument("toy model: scene " + scene.name + " has grid resolution " +
                          std::to_string(scene.grid.resolution) + ", model expects " +
                          std::to_string(cfg_.grid_resolution));
  }
  for (int v : views) {
    if (v < 0 || v >= static_cast<int>(scene.views.size())) {
      throw InvalidArgument("toy model: view " + std::to_string(v) + " out of range for " +
                            scene.name);
    }
    const auto& img = scene.views[v].image;
    if (img.width != cfg_.image_width || img.height != cfg_.image_height) {
      throw InvalidArgument("toy model: scene " + scene.name + " has " +
                            std::to_string(img.height) + "x" + std::to_string(img.width) +
                            " images, model expects " + std::to_string(cfg_.image_height) +
                            "x" + std::to_string(cfg_.image_width));
    }
  }
}

Var ToyModel::conv_block(Tape& t, Var x, Layer& l, bool is3d) {
  Var k = t.param(l.kernel);
  Var b = t.param(l.bias);
  Var y = is3d ? conv3d(t, x, k, b, l.stride) : conv2d(t, x, k, b, l.stride);
  y = instance_norm(t, y, t.param(l.gain), t.param(l.shift));
  return relu(t, y);
}

Var ToyModel::encode(Tape& t, const FeatureMap& image, Var* skip) {
  Var x = affine(t, t.constant(image_tensor(image)), 1.0, -0.5);
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    x = conv_block(t, x, encoder_[l], false);
    if (l == 0 && skip) *skip = x;
  }
  return x;
}

std::shared_ptr<const ops::UnprojectPlan> ToyModel::unproject_plan(const Camera& cam,
                                                                   const VoxelGridSpec& spec) {
  const std::string key = camera_key(cam, spec, "u", 0);
  auto it = unproject_cache_.find(key);
  if (it != unproject_cache_.end()) return it->second;
  auto plan = std::make_shared<const ops::UnprojectPlan>(
      ops::make_unproject_plan(cam.intrinsics, cam.pose, spec, ops::GeomFeatureConfig{true, true}));
  unproject_cache_.emplace(key, plan);
  return plan;
}

std::shared_ptr<const ops::ProjectPlan> ToyModel::project_plan(const Camera& cam,
                                                               const VoxelGridSpec& spec) {
  const std::string key = camera_key(cam, spec, "p", cfg_.n_planes);
  auto it = project_cache_.find(key);
  if (it != project_cache_.end()) return it->second;
  auto plan = std::make_shared<const ops::ProjectPlan>(ops::make_project_plan(
      spec, cam.intrinsics, cam.pose, cfg_.n_planes, ops::Interp::kNearest));
  project_cache_.emplace(key, plan);
  return plan;
}

Var ToyModel::forward_grid(Tape& t, const data::SceneRecord& scene, std::span<const int> views) {
  check_scene(scene, views);
  const int stride = cfg_.feature_stride();
  std::vector<Var> grids;
  for (int v : views) {
    const auto& rec = scene.views[v];
    Var features = encode(t, rec.image, nullptr);
    Camera fcam{rec.camera.intrinsics.downscaled(stride), rec.camera.pose};
    grids.push_back(unproject(t, features, unproject_plan(fcam, scene.grid)));
  }
  Var fused;
  if (cfg_.fusion == "gru") {
    const int r = scene.grid.resolution;
    fused = fusion::fuse_recurrent(t, grids, gru_, t.constant(Tensor({r, r, r, cfg_.gru_hidden})));
  } else if (cfg_.pointwise_mode == "max") {
    fused = max_of(t, grids);
  } else {
    fused = mean_of(t, grids);
  }
  for (auto& l : reasoner_) fused = conv_block(t, fused, l, true);
  return fused;
}

Var ToyModel::forward_voxel(Tape& t, const data::SceneRecord& scene, std::span<const int> views) {
  if (cfg_.head != "voxel") throw InvalidArgument("toy model: not a voxel model");
  return voxel_head_.forward(t, forward_grid(t, scene, views));
}

std::vector<Var> ToyModel::forward_depth(Tape& t, const data::SceneRecord& scene,
                                         std::span<const int> views) {
  if (cfg_.head != "depth") throw InvalidArgument("toy model: not a depth model");
  Var grid = forward_grid(t, scene, views);
  const int stride = cfg_.feature_stride();
  const int skip_stride = encoder_stride(0);
  std::vector<Var> out;
  for (int v : views) {
    const auto& rec = scene.views[v];
    Var skip{};
    encode(t, rec.image, &skip);
    Camera fcam{rec.camera.intrinsics.downscaled(stride), rec.camera.pose};
    auto plan = project_plan(fcam, scene.grid);
    Var rays = project(t, grid, plan);
    // The head predicts depth relative to the middle of the grid's depth range.
    const double mid =
        std::accumulate(plan->depths.begin(), plan->depths.end(), 0.0) / plan->depths.size();
    Var coarse = affine(t, ray_head_.forward(t, rays), 1.0, mid);
    coarse = upsample_nearest2d(t, coarse, stride);
    Var skip_up = upsample_nearest2d(t, skip, stride / skip_stride);
    Var residual = conv2d(t, concat_channels(t, {coarse, skip_up}), t.param(refine_kernel_),
                          t.param(refine_bias_));
    out.push_back(add(t, coarse, residual));
  }
  return out;
}

Var ToyModel::loss(Tape& t, const data::SceneRecord& scene, std::span<const int> views) {
  if (cfg_.head == "voxel") {
    Var p = forward_voxel(t, scene, views);
    const int r = scene.grid.resolution;
    Tensor target({r, r, r});
    for (std::size_t i = 0; i < target.size(); ++i) target.data[i] = scene.occupancy[i];
    return bce_loss(t, p, target);
  }
  const auto depths = forward_depth(t, scene, views);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const auto& gt = scene.views[views[i]].depth;
    Tensor g({gt.height, gt.width, 1}, gt.values);
    Tensor mask({gt.height, gt.width, 1});
    bool any = false;
    for (std::size_t p = 0; p < g.size(); ++p) {
      mask.data[p] = g.data[p] > 0.0 ? 1.0 : 0.0;
      any = any || g.data[p] > 0.0;
    }
    if (any) terms.push_back(l1_loss(t, depths[i], g, mask));
  }
  if (terms.empty()) {
    throw InvalidArgument("toy model: scene " + scene.name + " has no foreground depth");
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(t, total, terms[i]);
  return affine(t, total, 1.0 / double(terms.size()), 0.0);
}

FeatureGrid ToyModel::predict_occupancy(const data::SceneRecord& scene,
                                        std::span<const int> views) {
  Tape t;
  Var p = forward_voxel(t, scene, views);
  return to_grid(t.value(p), scene.grid);
}

std::vector<FeatureMap> ToyModel::predict_depth(const data::SceneRecord& scene,
                                                std::span<const int> views) {
  Tape t;
  std::vector<FeatureMap> out;
  for (Var d : forward_depth(t, scene, views)) out.push_back(to_map(t.value(d)));
  return out;
}

void ToyModel::save_checkpoint(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json params = nlohmann::json::array();
  std::set<std::string> seen;
  for (Parameter* p : parameters()) {
    if (!seen.insert(p->id).second) throw Error("checkpoint: duplicate parameter id " + p->id);
    std::vector<std::uint32_t> dims(p->value.shape.begin(), p->value.shape.end());
    std::vector<float> values(p->value.data.begin(), p->value.data.end());
    const std::string file = p->id + ".lsmt";
    io::write_tensor(dir / file, dims, values);
    params.push_back({{"id", p->id}, {"file", file}, {"shape", p->value.shape}});
  }
  nlohmann::json manifest{{"config", cfg_.to_json()}, {"parameters", params}};
  io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void ToyModel::load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json", 0, e.what());
  }
  std::map<std::string, Parameter*> by_id;
  for (Parameter* p : parameters()) by_id[p->id] = p;
  std::size_t loaded = 0;
  for (const auto& entry : manifest.at("parameters")) {
    const std::string id = entry.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("checkpoint: unknown parameter " + id);
    const io::TensorFile tf = io::read_tensor(dir / entry.at("file").get<std::string>());
    std::vector<int> shape(tf.dims.begin(), tf.dims.end());
    if (shape != it->second->value.shape || tf.dtype != io::DType::kFloat32) {
      throw InvalidArgument("checkpoint: parameter " + id + " has shape " +
                            shape_string(shape) + ", expected " +
                            shape_string(it->second->value.shape));
    }
    std::copy(tf.f32.begin(), tf.f32.end(), it->second->value.data.begin());
    ++loaded;
  }
  if (loaded != by_id.size()) throw InvalidArgument("checkpoint: missing parameters");
}

double eval_loss(ToyModel& model, std::span<const data::SceneRecord> scenes) {
  if (scenes.empty()) throw InvalidArgument("eval loss: no scenes");
  double total = 0.0;
  for (const auto& s : scenes) {
    const int k = std::min<int>(model.config().views_per_step, static_cast<int>(s.views.size()));
    std::vector<int> views(k);
    std::iota(views.begin(), views.end(), 0);
    Tape t;
    total += t.value(model.loss(t, s, views)).item();
  }
  return total / double(scenes.size());
}

TrainResult train_toy(ToyModel& model, std::span<const data::SceneRecord> scenes, int iters,
                      const TrainProgress& progress) {
  if (iters < 0) throw InvalidArgument("train: iterations must be >= 0");
  if (scenes.empty()) throw InvalidArgument("train: no scenes");
  const auto& cfg = model.config();
  TrainResult result;
  result.initial_eval_loss = eval_loss(model, scenes);
  result.loss_curve.push_back(result.initial_eval_loss);
  if (progress) progress(0, result.initial_eval_loss);

  auto params = model.parameters();
  Adam adam(params, AdamConfig{cfg.learning_rate});
  adam.zero_grad();
  std::mt19937_64 rng(sub_seed(cfg.seed, 0x5eed));
  std::vector<int> scene_order(scenes.size());
  std::size_t cursor = scene_order.size();
  for (int it = 1; it <= iters; ++it) {
    if (cursor == scene_order.size()) {
      std::iota(scene_order.begin(), scene_order.end(), 0);
      std::shuffle(scene_order.begin(), scene_order.end(), rng);
      cursor = 0;
    }
    const auto& scene = scenes[scene_order[cursor++]];
    std::vector<int> views(scene.views.size());
    std::iota(views.begin(), views.end(), 0);
    std::shuffle(views.begin(), views.end(), rng);
    views.resize(std::min<std::size_t>(views.size(), std::size_t(cfg.views_per_step)));

    Tape t;
    Var l = model.loss(t, scene, views);
    const double value = t.value(l).item();
    t.backward(l);
    adam.step();
    result.loss_curve.push_back(value);
    if (progress) progress(it, value);
  }
  result.final_eval_loss = iters == 0 ? result.initial_eval_loss : eval_loss(model, scenes);
  return result;
}

}  // namespace lsm::nn
