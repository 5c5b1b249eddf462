#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "lsm/dataset.hpp"
#include "lsm/error.hpp"
#include "lsm/synthgen.hpp"
#include "lsm/tensorio.hpp"

using namespace lsm;
namespace fs = std::filesystem;

TEST_SUITE("synthgen") {

TEST_CASE("sdf examples") {
  const auto s = synth::sphere_scene(0.4);
  CHECK(synth::sdf_eval(s, Vec3::Zero()) == doctest::Approx(-0.4));
  CHECK(std::abs(synth::sdf_eval(s, Vec3(0.4, 0, 0))) < 1e-12);
  CHECK(std::abs(synth::sdf_eval(s, Vec3(0, 0.24, 0.32))) < 1e-12);

  synth::SceneSpec u;
  u.primitives = {synth::Primitive::sphere(Vec3(-0.1, 0, 0), 0.2),
                  synth::Primitive::box(Vec3(0.15, 0, 0), Vec3(0.1, 0.2, 0.1))};
  synth::SceneSpec a, b;
  a.primitives = {u.primitives[0]};
  b.primitives = {u.primitives[1]};
  for (double x = -0.5; x <= 0.5; x += 0.05) {
    const Vec3 p(x, 0.3 * x, -0.2 * x);
    CHECK(synth::sdf_eval(u, p) <= synth::sdf_eval(a, p));
    CHECK(synth::sdf_eval(u, p) <= synth::sdf_eval(b, p));
  }
}

TEST_CASE("render sphere") {
  const auto s = synth::sphere_scene(0.4);
  const auto k = synth::default_intrinsics(65, 65);
  const Pose pose = synth::pose_on_sphere(0.0, 0.0, 2.0);
  const auto r = synth::render_view(s, k, pose);
  CHECK(r.depth.at(32, 32) == doctest::Approx(1.6).epsilon(1e-4));
  CHECK(r.mask[32 * 65 + 32] == 1);
  CHECK(r.mask[0] == 0);
  CHECK(r.depth.at(0, 0) == 0.0);

  std::size_t prev = 0;
  for (double radius : {0.1, 0.2, 0.3, 0.4}) {
    const auto rr = synth::render_view(synth::sphere_scene(radius), k, pose);
    std::size_t n = 0;
    for (auto m : rr.mask) n += m;
    CHECK(n > prev);
    prev = n;
  }
}

TEST_CASE("rendered depth, mask and surface agree") {
  for (const std::string family : {"sphere", "box", "composite"}) {
    const auto s = synth::random_scene(family, 12);
    const auto k = synth::default_intrinsics(48, 40);
    const Pose pose = synth::pose_on_sphere(40.0, 20.0, 2.0);
    const auto r = synth::render_view(s, k, pose);
    std::size_t hits = 0;
    for (int v = 0; v < 40; ++v) {
      for (int u = 0; u < 48; ++u) {
        const double z = r.depth.at(v, u);
        CHECK((z > 0.0) == (r.mask[v * 48 + u] != 0));
        if (z <= 0.0) continue;
        ++hits;
        const Vec3 xc = z * camera_ray_unnormalized(u, v, k);
        const Vec3 x = pose.rotation.transpose() * (xc - pose.translation);
        CHECK(std::abs(synth::sdf_eval(s, x)) < 1e-3);
      }
    }
    CHECK(hits > 0);
    for (double c : r.image.values) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
}

TEST_CASE("voxelize") {
  VoxelGridSpec spec;
  const auto occ = synth::voxelize(synth::sphere_scene(0.4), spec);
  std::size_t n = 0;
  for (auto o : occ) n += o;
  const double expected = 4.0 / 3.0 * std::numbers::pi * std::pow(0.4, 3) * 32768.0;
  CHECK(std::abs(double(n) - expected) <= 0.02 * expected);

  synth::SceneSpec empty;
  for (auto o : synth::voxelize(empty, spec)) CHECK(o == 0);

  const double h = spec.voxel_size();
  const auto a = synth::voxelize(synth::sphere_scene(0.3, Vec3(0.01, 0.0, 0.0)), spec);
  const auto b = synth::voxelize(synth::sphere_scene(0.3, Vec3(0.01 + h, 0.0, 0.0)), spec);
  for (int i = 0; i + 1 < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      for (int k = 0; k < 32; ++k) {
        CHECK(b[spec.linear_index(i + 1, j, k)] == a[spec.linear_index(i, j, k)]);
      }
    }
  }
}

TEST_CASE("view sampling") {
  synth::ViewSampler vs;
  vs.seed = 3;
  const auto angles = synth::sample_view_angles(vs, 500);
  for (const auto& a : angles) {
    CHECK(a.elevation_deg >= -20.0);
    CHECK(a.elevation_deg <= 30.0);
    CHECK(a.azimuth_deg >= 0.0);
    CHECK(a.azimuth_deg < 360.0);
  }
  const Pose p = synth::pose_on_sphere(30.0, 25.0, 2.0);
  const Vec3 c = p.camera_center();
  CHECK(c.norm() == doctest::Approx(2.0));
  CHECK(std::asin(c.y() / c.norm()) * 180.0 / std::numbers::pi == doctest::Approx(25.0));
  CHECK(project_point(Vec3::Zero(), synth::default_intrinsics(64, 64), p).u == doctest::Approx(31.5));
}

TEST_CASE("random scenes stay inside the cube") {
  VoxelGridSpec spec;
  spec.resolution = 16;
  for (const auto& family : synth::families()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto s = synth::random_scene(family, seed);
      CHECK_NOTHROW(s.validate_inside_unit_cube());
      const auto occ = synth::voxelize(s, spec);
      std::size_t n = 0;
      for (auto o : occ) n += o;
      CHECK(n > 0);
      const auto back = synth::SceneSpec::from_json(s.to_json());
      CHECK(back.to_json() == s.to_json());
    }
  }
  CHECK_THROWS_AS(synth::sphere_scene(0.6).validate_inside_unit_cube(), InvalidArgument);
  CHECK_THROWS_AS(synth::random_scene("teapot", 1), InvalidArgument);
}

TEST_CASE("dataset generation is deterministic") {
  synth::DatasetOptions o;
  o.scenes = 2;
  o.views = 3;
  o.resolution = 16;
  o.width = o.height = 24;
  o.seed = 7;
  const auto base = fs::temp_directory_path() / "lsm_test_gen";
  fs::remove_all(base);
  synth::generate_dataset(o, base / "a");
  synth::generate_dataset(o, base / "b");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), base / "a");
    CHECK(io::read_file_bytes(e.path()) == io::read_file_bytes(base / "b" / rel));
  }
  CHECK(files == 1 + 2 * (3 * 3 + 3));

  const auto roots = data::list_scenes(base / "a");
  REQUIRE(roots.size() == 2);
  const auto scene = data::load_scene(roots[0]);
  CHECK(scene.views.size() == 3);
  CHECK(scene.grid.resolution == 16);
  std::size_t n = 0;
  for (auto v : scene.occupancy) n += v;
  CHECK(n > 0);
  const auto mem = synth::make_scene(o, 0);
  CHECK(mem.occupancy == scene.occupancy);
  CHECK(mem.views[1].camera.pose.rotation.isApprox(scene.views[1].camera.pose.rotation, 1e-12));

  o.views = 0;
  CHECK_THROWS_AS(synth::make_scene(o, 0), InvalidArgument);
  CHECK_THROWS_AS(data::load_scene(base / "missing"), IoError);
}

}
