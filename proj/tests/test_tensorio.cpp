#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "lsm/error.hpp"
#include "lsm/tensorio.hpp"

using namespace lsm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lsm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("tensorio") {

TEST_CASE("float tensor round trip is bit exact") {
  const std::vector<std::uint32_t> dims{2, 3};
  const std::vector<float> vals{1.5f, -0.0f, 3.25e-20f, 7.0f, -1e30f, 0.1f};
  auto bytes = io::encode_tensor(dims, vals);
  CHECK(bytes.size() == 8 + 2 * 4 + 6 * 4);
  auto t = io::decode_tensor(bytes);
  CHECK(t.dims == dims);
  CHECK(t.dtype == io::DType::kFloat32);
  REQUIRE(t.f32.size() == vals.size());
  CHECK(std::memcmp(t.f32.data(), vals.data(), vals.size() * sizeof(float)) == 0);

  const auto dir = temp_dir("tensorio");
  io::write_tensor(dir / "a.lsmt", dims, vals);
  auto r = io::read_tensor(dir / "a.lsmt");
  CHECK(std::memcmp(r.f32.data(), vals.data(), vals.size() * sizeof(float)) == 0);
  CHECK(io::read_file_bytes(dir / "a.lsmt") == bytes);
}

TEST_CASE("u8 tensor round trip") {
  const std::vector<std::uint32_t> dims{2, 2, 2};
  const std::vector<std::uint8_t> vals{0, 1, 2, 3, 250, 251, 254, 255};
  auto t = io::decode_tensor(io::encode_tensor(dims, vals));
  CHECK(t.dtype == io::DType::kUInt8);
  CHECK(t.u8 == vals);
  CHECK(t.element_count() == 8);
}

TEST_CASE("malformed files") {
  const std::vector<std::uint32_t> dims{2, 3};
  const std::vector<float> vals(6, 1.0f);
  auto bytes = io::encode_tensor(dims, vals);

  auto bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  try {
    io::decode_tensor(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad magic at offset 0") != std::string::npos);
    CHECK(e.offset() == 0);
  }

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(io::decode_tensor(truncated), ParseError);

  auto rank0 = bytes;
  rank0[7] = 0;
  CHECK_THROWS_AS(io::decode_tensor(rank0), ParseError);

  auto dtype = bytes;
  dtype[6] = 9;
  CHECK_THROWS_AS(io::decode_tensor(dtype), ParseError);

  CHECK_THROWS_AS(io::encode_tensor(std::vector<std::uint32_t>{}, std::vector<float>{}),
                  InvalidArgument);
  CHECK_THROWS_AS(io::encode_tensor(dims, std::vector<float>(5)), InvalidArgument);
  CHECK_THROWS_AS(io::read_tensor("/nonexistent/file.lsmt"), IoError);
}

TEST_CASE("feature map and grid helpers") {
  const auto dir = temp_dir("tensorio_maps");
  FeatureMap m(3, 4, 2);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = 0.25 * double(i);
  io::write_feature_map(dir / "m.lsmt", m);
  auto back = io::read_feature_map(dir / "m.lsmt");
  CHECK(back.same_shape(m));
  CHECK(back.values == m.values);

  VoxelGridSpec spec;
  spec.resolution = 4;
  FeatureGrid g(spec, 1);
  g.values[5] = 1.0;
  io::write_grid(dir / "g.lsmt", g);
  auto gb = io::read_grid(dir / "g.lsmt");
  CHECK(gb.spec.resolution == 4);
  CHECK(gb.values == g.values);
}

TEST_CASE("camera text round trip") {
  Camera c;
  c.intrinsics.fx = 64.5;
  c.intrinsics.fy = 64.5;
  c.intrinsics.cx = 31.5;
  c.intrinsics.cy = 30.5;
  c.intrinsics.width = 64;
  c.intrinsics.height = 62;
  c.pose = Pose::look_at(Vec3(1.3, 0.4, -1.5), Vec3::Zero());
  auto parsed = io::parse_cameras(io::format_cameras({c, c}));
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].intrinsics.height == 62);
  CHECK(parsed[0].pose.rotation == c.pose.rotation);
  CHECK(parsed[0].pose.translation == c.pose.translation);
  CHECK_THROWS_AS(io::parse_cameras("1 2 3\n"), ParseError);
}

TEST_CASE("ply export") {
  const std::vector<Vec3> one{Vec3::Zero()};
  const auto text = io::format_ply(one);
  CHECK(text.find("element vertex 1\n") != std::string::npos);
  CHECK(text.find("end_header\n") != std::string::npos);
  const auto body = text.substr(text.find("end_header\n") + 11);
  CHECK(std::count(body.begin(), body.end(), '\n') == 1);

  const auto empty = io::format_ply({});
  CHECK(empty.find("element vertex 0\n") != std::string::npos);
  CHECK(empty.substr(empty.size() - 11) == "end_header\n");

  const std::vector<io::Rgb8> colors{{255, 0, 7}};
  const auto colored = io::format_ply(one, colors);
  CHECK(colored.find("property uchar red") != std::string::npos);
  CHECK(colored.find("255 0 7") != std::string::npos);
  CHECK_THROWS_AS(io::format_ply(one, std::vector<io::Rgb8>(2)), InvalidArgument);
}

}
