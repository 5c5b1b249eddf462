#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "lsm/classical.hpp"
#include "lsm/diffops.hpp"
#include "lsm/error.hpp"
#include "lsm/evalkit.hpp"
#include "lsm/synthgen.hpp"

using namespace lsm;

namespace {

struct Views {
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<Camera> cameras;
};

Views render_masks(const synth::SceneSpec& s, int count, int size, std::uint64_t seed) {
  synth::ViewSampler vs;
  vs.seed = seed;
  Views v;
  const auto k = synth::default_intrinsics(size, size);
  for (const auto& a : synth::sample_view_angles(vs, count)) {
    Camera c{k, synth::pose_on_sphere(a.azimuth_deg, a.elevation_deg, 2.0)};
    v.masks.push_back(synth::render_view(s, k, c.pose).mask);
    v.cameras.push_back(c);
  }
  return v;
}

}  // namespace

TEST_SUITE("classical") {

TEST_CASE("zncc") {
  const std::vector<double> a{0.1, 0.5, 0.3, 0.9, 0.2, 0.7};
  CHECK(classical::zncc(a, a).value == doctest::Approx(1.0));
  CHECK(classical::zncc(a, a).valid);
  std::vector<double> b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = 3.0 - a[i];
  CHECK(classical::zncc(a, b).value == doctest::Approx(-1.0));
  const std::vector<double> flat(6, 0.4);
  CHECK_FALSE(classical::zncc(a, flat).valid);
  CHECK_FALSE(classical::zncc(flat, flat).valid);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(25), y(25);
    for (auto& v : x) v = d(rng);
    for (auto& v : y) v = d(rng);
    const auto z = classical::zncc(x, y);
    CHECK(z.valid);
    CHECK(z.value >= -1.0);
    CHECK(z.value <= 1.0);
  }
  CHECK_THROWS_AS(classical::zncc(a, std::vector<double>(5, 1.0)), InvalidArgument);
}

TEST_CASE("grayscale weights") {
  FeatureMap rgb(1, 1, 3);
  rgb.values = {1.0, 0.0, 0.0};
  CHECK(classical::to_grayscale(rgb).values[0] == doctest::Approx(0.299));
  rgb.values = {0.0, 1.0, 1.0};
  CHECK(classical::to_grayscale(rgb).values[0] == doctest::Approx(0.701));
}

TEST_CASE("plane sweep on a textured fronto-parallel plane") {
  synth::SceneSpec s;
  s.primitives = {synth::Primitive::box(Vec3::Zero(), Vec3(0.45, 0.45, 0.02))};
  s.texture.frequency = 20.0;
  const int n = 128;
  const auto k = synth::default_intrinsics(n, n);
  Camera ref{k, synth::pose_on_sphere(180.0, 0.0, 2.0)};  // looks along +z at the front face
  Camera other{k, synth::pose_on_sphere(190.0, 0.0, 2.0)};
  const auto r0 = synth::render_view(s, k, ref.pose);
  const auto r1 = synth::render_view(s, k, other.pose);
  const std::vector<FeatureMap> imgs{r1.image};
  const std::vector<Camera> cams{other};
  const auto ps = classical::plane_sweep_depth(r0.image, ref, imgs, cams);
  CHECK(ps.plane_spacing == doctest::Approx((ps.range.z_far - ps.range.z_near) / 299.0));
  const double z_star = 2.0 - 0.02;
  std::vector<double> err;
  for (std::size_t i = 0; i < ps.valid.size(); ++i) {
    if (!ps.valid[i] || std::abs(r0.depth.values[i] - z_star) > 1e-6) continue;
    err.push_back(std::abs(ps.depth.values[i] - z_star));
  }
  REQUIRE(err.size() > 500);
  CHECK(eval::median(err) < ps.plane_spacing);

  // A common brightness offset does not change the sweep.
  FeatureMap ref_b = r0.image, oth_b = r1.image;
  for (double& v : ref_b.values) v += 0.1;
  for (double& v : oth_b.values) v += 0.1;
  const std::vector<FeatureMap> imgs_b{oth_b};
  const auto pb = classical::plane_sweep_depth(ref_b, ref, imgs_b, cams);
  std::size_t same = 0;
  for (std::size_t i = 0; i < ps.valid.size(); ++i) {
    same += (ps.valid[i] == pb.valid[i] && std::abs(ps.depth.values[i] - pb.depth.values[i]) < 1e-9);
  }
  CHECK(double(same) >= 0.99 * ps.valid.size());
  for (std::size_t i = 0; i < ps.valid.size(); ++i) {
    if (ps.valid[i]) {
      CHECK(ps.score.values[i] >= -1.0);
      CHECK(ps.score.values[i] <= 1.0);
    }
  }
}

TEST_CASE("plane sweep on constant images is invalid everywhere") {
  const auto k = synth::default_intrinsics(24, 24);
  Camera ref{k, synth::pose_on_sphere(0.0, 0.0, 2.0)};
  Camera other{k, synth::pose_on_sphere(10.0, 0.0, 2.0)};
  FeatureMap flat(24, 24, 3, 0.6);
  const std::vector<FeatureMap> imgs{flat};
  const std::vector<Camera> cams{other};
  classical::PlaneSweepConfig cfg;
  cfg.n_planes = 20;
  const auto ps = classical::plane_sweep_depth(flat, ref, imgs, cams, cfg);
  for (auto v : ps.valid) CHECK(v == 0);
  for (double d : ps.depth.values) CHECK(d == 0.0);

  cfg.window = 4;
  CHECK_THROWS_AS(classical::plane_sweep_depth(flat, ref, imgs, cams, cfg), InvalidArgument);
}

TEST_CASE("visual hull of a sphere") {
  VoxelGridSpec spec;
  const auto sphere = synth::sphere_scene(0.4);
  const auto gt = synth::voxelize(sphere, spec);
  const auto views = render_masks(sphere, 8, 64, 5);

  const auto one = classical::visual_hull_occupancy(std::span(views.masks.data(), 1),
                                                    std::span(views.cameras.data(), 1), spec);
  const auto all = classical::visual_hull_occupancy(views.masks, views.cameras, spec);
  const double iou1 = eval::voxel_iou(one.values, gt, 0.5);
  const double iou8 = eval::voxel_iou(all.values, gt, 0.5);
  CHECK(iou1 < 0.6);
  CHECK(iou8 >= 0.85);

  // Superset: any true voxel seen inside every silhouette is kept.
  const auto fraction = classical::visual_hull(views.masks, views.cameras, spec);
  const auto centers = voxel_centers(spec);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (!gt[i]) continue;
    bool inside_all = true;
    for (std::size_t v = 0; v < views.cameras.size(); ++v) {
      const auto& cam = views.cameras[v];
      const auto p = project_point(centers[i], cam.intrinsics, cam.pose);
      const int u = ops::nearest_index(p.u), r = ops::nearest_index(p.v);
      inside_all = inside_all && p.valid && u >= 0 && r >= 0 && u < 64 && r < 64 &&
                   views.masks[v][r * 64 + u];
    }
    if (inside_all) CHECK(all.values[i] == 1.0);
  }
  for (double f : fraction.values) {
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
  classical::HullConfig half;
  half.occupancy_fraction = 0.5;
  const auto loose = classical::carve(fraction, half);
  const auto strict = classical::carve(fraction);
  for (std::size_t i = 0; i < strict.size(); ++i) CHECK(loose[i] >= strict[i]);
}

TEST_CASE("depth to point cloud") {
  const auto k = synth::default_intrinsics(65, 65);
  Pose pose;
  pose.translation = Vec3(0, 0, 2);
  FeatureMap depth(65, 65, 1);
  depth.at(32, 32) = 2.0;
  const auto pts = classical::depth_to_pointcloud(depth, k, pose);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].norm() < 1e-12);

  const auto sphere = synth::sphere_scene(0.4);
  const Pose view = synth::pose_on_sphere(70.0, 15.0, 2.0);
  const auto r = synth::render_view(sphere, k, view);
  const auto cloud = classical::depth_to_pointcloud(r.depth, k, view, r.mask);
  CHECK(cloud.size() > 500);
  for (const auto& p : cloud) CHECK(std::abs(synth::sdf_eval(sphere, p)) < 1e-3);

  const std::vector<std::uint8_t> none(65 * 65, 0);
  CHECK(classical::depth_to_pointcloud(r.depth, k, view, none).empty());
}

}
