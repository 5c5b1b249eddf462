#pragma once

#include <cstddef>
#include <vector>

#include "lsm/geometry.hpp"

namespace lsm {

/// Dense H x W x C raster, channel-fastest: index (v * W + u) * C + c.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int v, int u, int c = 0) const {
    return (static_cast<std::size_t>(v) * width + u) * channels + c;
  }
  double& at(int v, int u, int c = 0) { return values[index(v, u, c)]; }
  double at(int v, int u, int c = 0) const { return values[index(v, u, c)]; }
  bool same_shape(const FeatureMap& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Voxel-major grid of feature vectors: index voxel * C + c, voxel in the
/// order of VoxelGridSpec::linear_index.
struct FeatureGrid {
  VoxelGridSpec spec;
  int channels = 0;
  std::vector<double> values;

  FeatureGrid() = default;
  FeatureGrid(const VoxelGridSpec& s, int c, double fill = 0.0)
      : spec(s), channels(c), values(s.voxel_count() * c, fill) {}

  double& at(std::size_t voxel, int c = 0) { return values[voxel * channels + c]; }
  double at(std::size_t voxel, int c = 0) const { return values[voxel * channels + c]; }
  bool same_shape(const FeatureGrid& o) const {
    return spec == o.spec && channels == o.channels;
  }
};

}  // namespace lsm
