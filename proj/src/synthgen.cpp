#include "lsm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lsm/dataset.hpp"
#include "lsm/error.hpp"
#include "lsm/tensorio.hpp"

namespace lsm::synth {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double sdf_primitive(const Primitive& p, const Vec3& x) {
  switch (p.kind) {
    case PrimitiveKind::kSphere:
      return (x - p.center).norm() - p.radius;
    case PrimitiveKind::kBox: {
      const Vec3 q = (x - p.center).cwiseAbs() - p.half_extents;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case PrimitiveKind::kCylinder: {
      const Vec3 d = x - p.center;
      const double along = d.dot(p.axis);
      const double radial = (d - along * p.axis).norm();
      const double qx = radial - p.radius;
      const double qy = std::abs(along) - 0.5 * p.height;
      return std::min(std::max(qx, qy), 0.0) +
             std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
    }
  }
  return 0.0;
}

// Conservative axis-aligned bounds of one primitive.
void primitive_bounds(const Primitive& p, Vec3& lo, Vec3& hi) {
  Vec3 ext;
  switch (p.kind) {
    case PrimitiveKind::kSphere:
      ext = Vec3::Constant(p.radius);
      break;
    case PrimitiveKind::kBox:
      ext = p.half_extents;
      break;
    case PrimitiveKind::kCylinder:
      for (int a = 0; a < 3; ++a) {
        const double c = std::abs(p.axis[a]);
        ext[a] = 0.5 * p.height * c + p.radius * std::sqrt(std::max(0.0, 1.0 - c * c));
      }
      break;
  }
  lo = p.center - ext;
  hi = p.center + ext;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice_value(std::int64_t i, std::int64_t j, std::int64_t k, std::uint64_t seed) {
  std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i) * 0x8da6b343ULL ^
                                              splitmix(static_cast<std::uint64_t>(j) * 0xd8163841ULL ^
                                                       static_cast<std::uint64_t>(k) * 0xcb1ab31fULL)));
  return double(h >> 11) * 0x1.0p-53;
}

double value_noise(const Vec3& x, std::uint64_t seed) {
  const Vec3 f(std::floor(x.x()), std::floor(x.y()), std::floor(x.z()));
  const Vec3 a = x - f;
  const auto i0 = static_cast<std::int64_t>(f.x());
  const auto j0 = static_cast<std::int64_t>(f.y());
  const auto k0 = static_cast<std::int64_t>(f.z());
  double s = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    const double w = (di ? a.x() : 1 - a.x()) * (dj ? a.y() : 1 - a.y()) *
                     (dk ? a.z() : 1 - a.z());
    s += w * lattice_value(i0 + di, j0 + dj, k0 + dk, seed);
  }
  return s;
}

Vec3 vec3_from(const nlohmann::json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }
nlohmann::json vec3_to(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

const char* kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::kSphere: return "sphere";
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kCylinder: return "cylinder";
  }
  return "?";
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix(seed ^ splitmix(stream + 0x632be59bd9b4e019ULL));
}

Primitive Primitive::sphere(const Vec3& c, double r, CsgOp op) {
  Primitive p;
  p.kind = PrimitiveKind::kSphere;
  p.op = op;
  p.center = c;
  p.radius = r;
  return p;
}

Primitive Primitive::box(const Vec3& c, const Vec3& half, CsgOp op) {
  Primitive p;
  p.kind = PrimitiveKind::kBox;
  p.op = op;
  p.center = c;
  p.half_extents = half;
  return p;
}

Primitive Primitive::cylinder(const Vec3& c, const Vec3& axis, double r, double h, CsgOp op) {
  Primitive p;
  p.kind = PrimitiveKind::kCylinder;
  p.op = op;
  p.center = c;
  p.axis = axis.normalized();
  p.radius = r;
  p.height = h;
  return p;
}

double sdf_eval(const SceneSpec& scene, const Vec3& x) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& p : scene.primitives) {
    const double dp = sdf_primitive(p, x);
    d = p.op == CsgOp::kUnion ? std::min(d, dp) : std::max(d, -dp);
  }
  return d;
}

Vec3 sdf_normal(const SceneSpec& scene, const Vec3& x) {
  const double h = 1e-5;
  Vec3 n;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    n[a] = sdf_eval(scene, x + e) - sdf_eval(scene, x - e);
  }
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::UnitY();
}

Vec3 albedo(const Texture& tex, const Vec3& x) {
  if (!tex.textured) return 0.5 * (tex.color_a + tex.color_b);
  const double n = 0.65 * value_noise(x * tex.frequency, tex.seed) +
                   0.35 * value_noise(x * (2.0 * tex.frequency), tex.seed + 1);
  const double s = std::clamp((n - 0.5) * 2.2 + 0.5, 0.0, 1.0);
  return (1.0 - s) * tex.color_a + s * tex.color_b;
}

void SceneSpec::validate_inside_unit_cube() const {
  if (primitives.empty()) throw InvalidArgument("scene: no primitives");
  if (primitives.front().op != CsgOp::kUnion) {
    throw InvalidArgument("scene: the first primitive must be a union");
  }
  for (const auto& p : primitives) {
    if (p.op != CsgOp::kUnion) continue;
    Vec3 lo, hi;
    primitive_bounds(p, lo, hi);
    if (lo.minCoeff() < -0.5 || hi.maxCoeff() > 0.5) {
      throw InvalidArgument(std::string("scene: ") + kind_name(p.kind) +
                            " primitive extends outside the unit cube");
    }
  }
  const int n = 12;
  for (int face = 0; face < 6; ++face) {
    const int axis = face / 2;
    const double side = face % 2 ? 0.5 : -0.5;
    for (int a = 0; a <= n; ++a) {
      for (int b = 0; b <= n; ++b) {
        Vec3 x;
        x[axis] = side;
        x[(axis + 1) % 3] = -0.5 + double(a) / n;
        x[(axis + 2) % 3] = -0.5 + double(b) / n;
        if (sdf_eval(*this, x) <= 0.0) {
          throw InvalidArgument("scene: shape touches the unit cube boundary");
        }
      }
    }
  }
}

nlohmann::json SceneSpec::to_json() const {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : primitives) {
    nlohmann::json j{{"kind", kind_name(p.kind)},
                     {"op", p.op == CsgOp::kUnion ? "union" : "subtract"},
                     {"center", vec3_to(p.center)}};
    if (p.kind == PrimitiveKind::kSphere) j["radius"] = p.radius;
    if (p.kind == PrimitiveKind::kBox) j["half_extents"] = vec3_to(p.half_extents);
    if (p.kind == PrimitiveKind::kCylinder) {
      j["axis"] = vec3_to(p.axis);
      j["radius"] = p.radius;
      j["height"] = p.height;
    }
    prims.push_back(std::move(j));
  }
  return {{"family", family},
          {"primitives", prims},
          {"texture",
           {{"textured", texture.textured},
            {"frequency", texture.frequency},
            {"color_a", vec3_to(texture.color_a)},
            {"color_b", vec3_to(texture.color_b)},
            {"seed", texture.seed}}},
          {"light_direction", vec3_to(light_direction)},
          {"light_jitter_deg", light_jitter_deg},
          {"seed", seed}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.family = j.value("family", "custom");
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    const std::string kind = pj.at("kind");
    p.op = pj.at("op") == "union" ? CsgOp::kUnion : CsgOp::kSubtract;
    p.center = vec3_from(pj.at("center"));
    if (kind == "sphere") {
      p.kind = PrimitiveKind::kSphere;
      p.radius = pj.at("radius");
    } else if (kind == "box") {
      p.kind = PrimitiveKind::kBox;
      p.half_extents = vec3_from(pj.at("half_extents"));
    } else if (kind == "cylinder") {
      p.kind = PrimitiveKind::kCylinder;
      p.axis = vec3_from(pj.at("axis"));
      p.radius = pj.at("radius");
      p.height = pj.at("height");
    } else {
      throw InvalidArgument("scene: unknown primitive kind '" + kind + "'");
    }
    s.primitives.push_back(p);
  }
  const auto& t = j.at("texture");
  s.texture.textured = t.at("textured");
  s.texture.frequency = t.at("frequency");
  s.texture.color_a = vec3_from(t.at("color_a"));
  s.texture.color_b = vec3_from(t.at("color_b"));
  s.texture.seed = t.at("seed");
  s.light_direction = vec3_from(j.at("light_direction"));
  s.light_jitter_deg = j.value("light_jitter_deg", 0.0);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

Pose pose_on_sphere(double azimuth_deg, double elevation_deg, double radius) {
  const double az = azimuth_deg * kDeg;
  const double el = elevation_deg * kDeg;
  const Vec3 eye = radius * Vec3(std::cos(el) * std::sin(az), std::sin(el),
                                 std::cos(el) * std::cos(az));
  return Pose::look_at(eye, Vec3::Zero(), Vec3::UnitY());
}

std::vector<ViewAngles> sample_view_angles(const ViewSampler& sampler, int count) {
  std::mt19937_64 rng(sampler.seed);
  std::uniform_real_distribution<double> az(sampler.azimuth_min_deg, sampler.azimuth_max_deg);
  std::uniform_real_distribution<double> el(sampler.elevation_min_deg,
                                            sampler.elevation_max_deg);
  std::vector<ViewAngles> out(count);
  for (auto& a : out) {
    a.azimuth_deg = az(rng);
    a.elevation_deg = el(rng);
  }
  return out;
}

Intrinsics default_intrinsics(int width, int height) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = k.fy = 1.0 * std::min(width, height);
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  return k;
}

RenderResult render_view(const SceneSpec& scene, const Intrinsics& cam, const Pose& pose,
                         const RenderOptions& opts) {
  cam.validate();
  RenderResult r;
  r.image = FeatureMap(cam.height, cam.width, 3, 1.0);
  r.depth = FeatureMap(cam.height, cam.width, 1, 0.0);
  r.mask.assign(r.depth.pixel_count(), 0);
  const Vec3 light = -opts.light_direction.normalized();
  const Vec3 axis = pose.viewing_axis();
  const double bound = 0.5 * std::sqrt(3.0) + 1e-3;
#pragma omp parallel for schedule(static)
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Ray ray = ray_through_pixel(u, v, cam, pose);
      // Clip to the sphere bounding the unit cube.
      const double b = ray.origin.dot(ray.direction);
      const double c = ray.origin.squaredNorm() - bound * bound;
      const double disc = b * b - c;
      if (disc <= 0.0) continue;
      const double sq = std::sqrt(disc);
      double t = std::max(0.0, -b - sq);
      const double t_end = -b + sq;
      bool hit = false;
      for (int step = 0; step < opts.max_steps && t <= t_end; ++step) {
        const double d = sdf_eval(scene, ray.origin + t * ray.direction);
        if (d < opts.hit_tolerance) {
          hit = true;
          break;
        }
        t += d;
      }
      if (!hit) continue;
      const Vec3 x = ray.origin + t * ray.direction;
      const std::size_t pix = std::size_t(v) * cam.width + u;
      r.mask[pix] = 1;
      r.depth.values[pix] = t * ray.direction.dot(axis);
      const Vec3 n = sdf_normal(scene, x);
      const double shade = opts.ambient + (1.0 - opts.ambient) * std::max(0.0, n.dot(light));
      const Vec3 col = albedo(scene.texture, x) * shade;
      for (int ch = 0; ch < 3; ++ch) r.image.values[pix * 3 + ch] = std::clamp(col[ch], 0.0, 1.0);
    }
  }
  return r;
}

std::vector<std::uint8_t> voxelize(const SceneSpec& scene, const VoxelGridSpec& spec) {
  spec.validate();
  std::vector<std::uint8_t> occ(spec.voxel_count(), 0);
  const int n = spec.resolution;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        occ[spec.linear_index(i, j, k)] =
            sdf_eval(scene, spec.voxel_center(i, j, k)) <= 0.0 ? 1 : 0;
  return occ;
}

SceneSpec sphere_scene(double radius, const Vec3& center) {
  SceneSpec s;
  s.family = "sphere";
  s.primitives.push_back(Primitive::sphere(center, radius));
  return s;
}

SceneSpec random_scene(const std::string& family, std::uint64_t seed, bool textured,
                       double texture_frequency) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  SceneSpec s;
  s.family = family;
  s.seed = seed;
  auto& prims = s.primitives;
  if (family == "sphere") {
    const double r = uni(0.25, 0.38);
    const Vec3 c(uni(-0.05, 0.05), uni(-0.05, 0.05), uni(-0.05, 0.05));
    prims.push_back(Primitive::sphere(c, r));
    if (uni(0, 1) < 0.5) {
      const double r2 = uni(0.1, 0.18);
      Vec3 dir(uni(-1, 1), uni(-1, 1), uni(-1, 1));
      dir.normalize();
      Vec3 c2 = c + dir * (r + 0.3 * r2);
      for (int a = 0; a < 3; ++a) c2[a] = std::clamp(c2[a], -0.45 + r2, 0.45 - r2);
      prims.push_back(Primitive::sphere(c2, r2));
    }
  } else if (family == "box") {
    const Vec3 half(uni(0.15, 0.33), uni(0.12, 0.3), uni(0.15, 0.33));
    prims.push_back(Primitive::box(Vec3(uni(-0.03, 0.03), -0.05, uni(-0.03, 0.03)), half));
    if (uni(0, 1) < 0.5) {
      const double r = uni(0.06, 0.12);
      const double h = uni(0.1, 0.18);
      prims.push_back(Primitive::cylinder(Vec3(0, -0.05 + half.y() + 0.5 * h - 0.01, 0),
                                          Vec3::UnitY(), r, h));
    }
  } else if (family == "composite") {
    const int variant = std::uniform_int_distribution<int>(0, 3)(rng);
    if (variant == 0) {
      // Bowl: box with a spherical cavity opening upwards.
      const Vec3 half(uni(0.28, 0.36), uni(0.16, 0.24), uni(0.28, 0.36));
      const Vec3 c(0, -0.08, 0);
      prims.push_back(Primitive::box(c, half));
      const double r = uni(0.2, 0.26);
      prims.push_back(Primitive::sphere(c + Vec3(0, half.y(), 0), r, CsgOp::kSubtract));
    } else if (variant == 1) {
      // Cup: cylinder hollowed from the top.
      const double r = uni(0.24, 0.34);
      const double h = uni(0.5, 0.7);
      prims.push_back(Primitive::cylinder(Vec3(0, -0.05, 0), Vec3::UnitY(), r, h));
      const double wall = uni(0.07, 0.1);
      prims.push_back(Primitive::cylinder(Vec3(0, -0.05 + wall, 0), Vec3::UnitY(),
                                          r - wall, h, CsgOp::kSubtract));
    } else if (variant == 2) {
      // Chair: seat, back, four legs.
      const double w = uni(0.25, 0.32);
      const double seat_y = uni(-0.05, 0.02);
      const double t = 0.05;
      prims.push_back(Primitive::box(Vec3(0, seat_y, 0), Vec3(w, t, w)));
      const double back_h = uni(0.13, 0.18);
      prims.push_back(Primitive::box(Vec3(0, seat_y + t + back_h, -w + t), Vec3(w, back_h, t)));
      const double leg_h = 0.5 * (seat_y - t + 0.45);
      for (int q = 0; q < 4; ++q) {
        const double lx = (q & 1 ? 1 : -1) * (w - 0.05);
        const double lz = (q & 2 ? 1 : -1) * (w - 0.05);
        prims.push_back(Primitive::box(Vec3(lx, seat_y - t - leg_h, lz), Vec3(0.04, leg_h, 0.04)));
      }
    } else {
      // Table: top slab on four legs.
      const Vec3 top(uni(0.3, 0.38), 0.05, uni(0.22, 0.3));
      const double top_y = uni(0.05, 0.15);
      prims.push_back(Primitive::box(Vec3(0, top_y, 0), top));
      const double leg_h = 0.5 * (top_y - top.y() + 0.4);
      for (int q = 0; q < 4; ++q) {
        const double lx = (q & 1 ? 1 : -1) * (top.x() - 0.06);
        const double lz = (q & 2 ? 1 : -1) * (top.z() - 0.06);
        prims.push_back(
            Primitive::box(Vec3(lx, top_y - top.y() - leg_h, lz), Vec3(0.045, leg_h, 0.045)));
      }
    }
  } else {
    throw InvalidArgument("scene: unknown family '" + family + "'");
  }
  s.texture.textured = textured;
  s.texture.frequency = texture_frequency;
  s.texture.seed = mix_seed(seed, 17);
  const double hue = uni(0.0, 1.0);
  s.texture.color_a = Vec3(0.12 + 0.1 * hue, 0.1, 0.18 - 0.1 * hue);
  s.texture.color_b = Vec3(0.95, 0.75 + 0.2 * hue, 0.55 + 0.3 * (1 - hue));
  s.validate_inside_unit_cube();
  return s;
}

namespace {

void validate_options(const DatasetOptions& opts) {
  if (opts.scenes < 1) throw InvalidArgument("gen-data: --scenes must be >= 1");
  if (opts.views < 1) throw InvalidArgument("gen-data: --views must be >= 1");
  if (opts.resolution < 1) throw InvalidArgument("gen-data: --res must be >= 1");
  if (opts.width < 2 || opts.height < 2) throw InvalidArgument("gen-data: image too small");
}

}  // namespace

data::SceneRecord make_scene(const DatasetOptions& opts, int s) {
  validate_options(opts);
  VoxelGridSpec grid;
  grid.resolution = opts.resolution;
  const Intrinsics k = default_intrinsics(opts.width, opts.height);
  const std::uint64_t scene_seed = mix_seed(opts.seed, static_cast<std::uint64_t>(s));
  const std::string family =
      opts.family.empty() ? families()[static_cast<std::size_t>(s) % families().size()]
                          : opts.family;
  SceneSpec scene = random_scene(family, scene_seed, opts.textured, opts.texture_frequency);
  scene.light_jitter_deg = opts.light_jitter_deg;

  ViewSampler sampler;
  sampler.seed = mix_seed(scene_seed, 101);
  const auto angles = sample_view_angles(sampler, opts.views);
  std::mt19937_64 light_rng(mix_seed(scene_seed, 202));
  std::normal_distribution<double> jitter(0.0, 1.0);

  data::SceneRecord rec;
  rec.name = data::scene_dir_name(s);
  rec.family = family;
  rec.grid = grid;
  rec.occupancy = voxelize(scene, grid);
  nlohmann::json angle_json = nlohmann::json::array();
  for (const auto& a : angles) {
    RenderOptions ro;
    ro.light_direction = scene.light_direction.normalized();
    if (opts.light_jitter_deg > 0.0) {
      const Vec3 axis = Vec3(jitter(light_rng), jitter(light_rng), jitter(light_rng)).normalized();
      const double ang = opts.light_jitter_deg * kDeg * jitter(light_rng);
      ro.light_direction = Eigen::AngleAxisd(ang, axis) * ro.light_direction;
    }
    data::ViewRecord view;
    view.camera.intrinsics = k;
    view.camera.pose = pose_on_sphere(a.azimuth_deg, a.elevation_deg, sampler.radius);
    auto rendered = render_view(scene, k, view.camera.pose, ro);
    view.image = std::move(rendered.image);
    view.depth = std::move(rendered.depth);
    view.mask = std::move(rendered.mask);
    rec.views.push_back(std::move(view));
    angle_json.push_back({{"azimuth_deg", a.azimuth_deg}, {"elevation_deg", a.elevation_deg}});
  }
  rec.meta = {{"scene", scene.to_json()},
              {"view_sampler",
               {{"radius", sampler.radius},
                {"azimuth_range_deg", {sampler.azimuth_min_deg, sampler.azimuth_max_deg}},
                {"elevation_range_deg", {sampler.elevation_min_deg, sampler.elevation_max_deg}},
                {"seed", sampler.seed},
                {"angles", angle_json}}},
              {"grid", {{"resolution", grid.resolution},
                        {"center", vec3_to(grid.center)},
                        {"side", grid.side}}},
              {"image", {{"width", opts.width}, {"height", opts.height}}},
              {"family", family},
              {"seed", scene_seed}};
  return rec;
}

std::vector<data::SceneRecord> make_scenes(const DatasetOptions& opts) {
  validate_options(opts);
  std::vector<data::SceneRecord> out;
  for (int s = 0; s < opts.scenes; ++s) out.push_back(make_scene(opts, s));
  return out;
}

void generate_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir) {
  validate_options(opts);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  nlohmann::json manifest{{"scenes", nlohmann::json::array()},
                          {"views", opts.views},
                          {"resolution", opts.resolution},
                          {"width", opts.width},
                          {"height", opts.height},
                          {"textured", opts.textured},
                          {"seed", opts.seed}};
  for (int s = 0; s < opts.scenes; ++s) {
    const data::SceneRecord rec = make_scene(opts, s);
    data::write_scene(out_dir / rec.name, rec);
    manifest["scenes"].push_back(rec.name);
  }
  io::write_text_file(out_dir / "dataset.json", manifest.dump(2) + "\n");
}

}  // namespace lsm::synth
