#include "lsm/dataset.hpp"

#include <algorithm>
#include <cstdio>

#include "lsm/error.hpp"
#include "lsm/tensorio.hpp"

namespace lsm::data {

namespace fs = std::filesystem;

std::string scene_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04d", index);
  return buf;
}

std::string view_file(int view, const char* kind) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "view_%04d.%s.lsmt", view, kind);
  return buf;
}

void write_scene(const fs::path& dir, const SceneRecord& scene) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<Camera> cams;
  for (std::size_t v = 0; v < scene.views.size(); ++v) {
    const auto& view = scene.views[v];
    const int i = static_cast<int>(v);
    io::write_feature_map(dir / view_file(i, "img"), view.image);
    io::write_feature_map(dir / view_file(i, "depth"), view.depth);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(view.depth.height),
                                   static_cast<std::uint32_t>(view.depth.width)};
    io::write_tensor(dir / view_file(i, "mask"), dims, std::span(view.mask));
    cams.push_back(view.camera);
  }
  io::write_cameras(dir / "cameras.txt", cams);
  const auto r = static_cast<std::uint32_t>(scene.grid.resolution);
  const std::uint32_t gdims[3] = {r, r, r};
  io::write_tensor(dir / "occupancy.lsmt", gdims, std::span(scene.occupancy));
  io::write_text_file(dir / "scene.json", scene.meta.dump(2) + "\n");
}

SceneRecord load_scene(const fs::path& dir) {
  SceneRecord rec;
  rec.name = dir.filename().string();
  if (!fs::is_directory(dir)) throw IoError("scene directory not found: " + dir.string());
  try {
    rec.meta = nlohmann::json::parse(io::read_text_file(dir / "scene.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scene.json", 0, dir.string() + "/scene.json: " + e.what());
  }
  rec.family = rec.meta.value("family", "unknown");
  if (rec.meta.contains("grid")) {
    const auto& g = rec.meta["grid"];
    rec.grid.resolution = g.value("resolution", 32);
    rec.grid.side = g.value("side", 1.0);
    if (g.contains("center")) {
      rec.grid.center = Vec3(g["center"][0], g["center"][1], g["center"][2]);
    }
  }
  const auto occ = io::read_tensor(dir / "occupancy.lsmt");
  const auto r = static_cast<std::uint32_t>(rec.grid.resolution);
  if (occ.dtype != io::DType::kUInt8 || occ.dims != std::vector<std::uint32_t>{r, r, r}) {
    throw ParseError("occupancy", 0, dir.string() + "/occupancy.lsmt: expected V^3 u8 with V=" +
                                         std::to_string(r));
  }
  rec.occupancy = occ.u8;
  const auto cams = io::read_cameras(dir / "cameras.txt");
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const int i = static_cast<int>(v);
    ViewRecord view;
    view.camera = cams[v];
    view.image = io::read_feature_map(dir / view_file(i, "img"));
    view.depth = io::read_feature_map(dir / view_file(i, "depth"));
    const auto mask = io::read_tensor(dir / view_file(i, "mask"));
    view.mask = mask.dtype == io::DType::kUInt8
                    ? mask.u8
                    : std::vector<std::uint8_t>(mask.f32.begin(), mask.f32.end());
    const auto& k = view.camera.intrinsics;
    if (view.image.height != k.height || view.image.width != k.width ||
        view.image.channels != 3 || !(view.depth.height == k.height && view.depth.width == k.width) ||
        view.mask.size() != view.depth.pixel_count()) {
      throw ParseError("view", static_cast<std::size_t>(i),
                       dir.string() + ": view " + std::to_string(i) +
                           " rasters do not match its camera");
    }
    if (!rec.views.empty() && (k.width != rec.views[0].camera.intrinsics.width ||
                               k.height != rec.views[0].camera.intrinsics.height)) {
      throw ParseError("view", static_cast<std::size_t>(i),
                       dir.string() + ": views have different image sizes");
    }
    rec.views.push_back(std::move(view));
  }
  if (rec.views.empty()) throw ParseError("cameras", 0, dir.string() + ": scene has no views");
  return rec;
}

std::vector<fs::path> list_scenes(const fs::path& root) {
  std::vector<fs::path> out;
  const fs::path manifest = root / "dataset.json";
  if (fs::exists(manifest)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_text_file(manifest));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset.json", 0, manifest.string() + ": " + e.what());
    }
    for (const auto& s : j.at("scenes")) out.push_back(root / s.get<std::string>());
    return out;
  }
  if (fs::exists(root / "scene.json")) return {root};
  if (!fs::is_directory(root)) throw IoError("dataset not found: " + root.string());
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "scene.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no scenes under " + root.string());
  return out;
}

}  // namespace lsm::data
