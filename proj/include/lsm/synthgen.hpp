#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/geometry.hpp"
#include "lsm/raster.hpp"
#include "lsm/dataset.hpp"

namespace lsm::synth {

enum class PrimitiveKind { kSphere, kBox, kCylinder };
enum class CsgOp { kUnion, kSubtract };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  CsgOp op = CsgOp::kUnion;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;                    // sphere, cylinder
  Vec3 half_extents = Vec3::Zero();       // box
  Vec3 axis = Vec3::UnitY();              // cylinder, unit
  double height = 0.0;                    // cylinder, full length along axis

  static Primitive sphere(const Vec3& c, double r, CsgOp op = CsgOp::kUnion);
  static Primitive box(const Vec3& c, const Vec3& half, CsgOp op = CsgOp::kUnion);
  static Primitive cylinder(const Vec3& c, const Vec3& axis, double r, double h,
                            CsgOp op = CsgOp::kUnion);
};

/// Procedural albedo: two octaves of trilinear value noise blending two
/// colours. `textured = false` gives a flat colour.
struct Texture {
  bool textured = true;
  double frequency = 10.0;
  Vec3 color_a{0.15, 0.12, 0.10};
  Vec3 color_b{0.95, 0.85, 0.60};
  std::uint64_t seed = 0;
};

/// Shapes are folded left to right: union -> min, subtract -> max(a, -b).
struct SceneSpec {
  std::string family = "custom";
  std::vector<Primitive> primitives;
  Texture texture;
  Vec3 light_direction{0.35, -0.8, -0.5};  // direction the light travels (world)
  double light_jitter_deg = 0.0;
  std::uint64_t seed = 0;

  /// Throws unless the union primitives' bounds lie inside the unit cube and
  /// the SDF is positive on a sampling of the cube's faces.
  void validate_inside_unit_cube() const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

double sdf_eval(const SceneSpec& scene, const Vec3& x);
Vec3 sdf_normal(const SceneSpec& scene, const Vec3& x);
Vec3 albedo(const Texture& tex, const Vec3& x);

/// Cameras on a sphere around the origin, looking at it with +y up.
struct ViewSampler {
  double radius = 2.0;
  double azimuth_min_deg = 0.0;
  double azimuth_max_deg = 360.0;  // exclusive
  double elevation_min_deg = -20.0;
  double elevation_max_deg = 30.0;
  std::uint64_t seed = 0;
};

struct ViewAngles {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

Pose pose_on_sphere(double azimuth_deg, double elevation_deg, double radius);
std::vector<ViewAngles> sample_view_angles(const ViewSampler& sampler, int count);
/// Square pixels, principal point at the image centre, field of view sized
/// so the unit cube seen from distance 2 fits in frame.
Intrinsics default_intrinsics(int width, int height);

struct RenderOptions {
  int max_steps = 256;
  double hit_tolerance = 1e-5;
  double ambient = 0.35;
  Vec3 light_direction{0.35, -0.8, -0.5};
};

struct RenderResult {
  FeatureMap image;                  // H x W x 3, white background
  FeatureMap depth;                  // H x W x 1, camera-frame z, 0 on miss
  std::vector<std::uint8_t> mask;    // H x W, 1 on hit
};

RenderResult render_view(const SceneSpec& scene, const Intrinsics& cam, const Pose& pose,
                         const RenderOptions& opts = {});

/// Occupied iff sdf(center) <= 0.
std::vector<std::uint8_t> voxelize(const SceneSpec& scene, const VoxelGridSpec& spec);

inline const std::vector<std::string>& families() {
  static const std::vector<std::string> f{"sphere", "box", "composite"};
  return f;
}

/// Random scene of the given family. `composite` shapes are concave
/// (bowls, cups, chairs, tables).
SceneSpec random_scene(const std::string& family, std::uint64_t seed, bool textured = true,
                       double texture_frequency = 10.0);
SceneSpec sphere_scene(double radius, const Vec3& center = Vec3::Zero());

struct DatasetOptions {
  int scenes = 1;
  int views = 4;
  int resolution = 32;
  int width = 64;
  int height = 64;
  bool textured = true;
  double texture_frequency = 10.0;
  double light_jitter_deg = 0.0;
  /// Empty cycles through families(); otherwise every scene uses this family.
  std::string family;
  std::uint64_t seed = 0;
};

/// Scene `index` of the dataset described by `opts`, rendered in memory.
data::SceneRecord make_scene(const DatasetOptions& opts, int index);
std::vector<data::SceneRecord> make_scenes(const DatasetOptions& opts);

/// Writes the dataset layout (see lsm/dataset.hpp) under `out_dir`.
void generate_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lsm::synth
