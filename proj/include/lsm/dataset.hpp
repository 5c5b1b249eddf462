#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/geometry.hpp"
#include "lsm/raster.hpp"

// On-disk dataset layout:
//   <root>/dataset.json                     manifest (scene list, sizes, seed)
//   <root>/scene_####/view_####.img.lsmt    H x W x 3 float RGB in [0, 1]
//   <root>/scene_####/view_####.depth.lsmt  H x W float, 0 = no surface
//   <root>/scene_####/view_####.mask.lsmt   H x W u8 silhouette
//   <root>/scene_####/cameras.txt           one camera per view
//   <root>/scene_####/occupancy.lsmt        V x V x V u8
//   <root>/scene_####/scene.json            generator parameters and seed
namespace lsm::data {

struct ViewRecord {
  Camera camera;
  FeatureMap image;
  FeatureMap depth;
  std::vector<std::uint8_t> mask;
};

struct SceneRecord {
  std::string name;
  std::string family;
  VoxelGridSpec grid;
  std::vector<std::uint8_t> occupancy;
  std::vector<ViewRecord> views;
  nlohmann::json meta;
};

std::string scene_dir_name(int index);
std::string view_file(int view, const char* kind);

void write_scene(const std::filesystem::path& dir, const SceneRecord& scene);
/// Loads and cross-checks one scene directory (shared image size, V^3 occupancy).
SceneRecord load_scene(const std::filesystem::path& dir);

/// Scene directories of a dataset, in manifest order.
std::vector<std::filesystem::path> list_scenes(const std::filesystem::path& root);

}  // namespace lsm::data
