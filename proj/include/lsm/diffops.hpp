#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lsm/geometry.hpp"
#include "lsm/raster.hpp"

namespace lsm::ops {

/// Geometric channels appended to each unprojected voxel.
struct GeomFeatureConfig {
  bool append_depth = false;
  bool append_ray_dir = false;

  int extra_channels() const { return (append_depth ? 1 : 0) + (append_ray_dir ? 3 : 0); }
};

enum class Interp { kNearest, kTrilinear };

/// Plane count used when the caller has no preference (one per grid cell).
inline constexpr int kDefaultPlanes = 32;

/// Fixed linear map from `source_count` feature vectors to `row_count` output
/// vectors, stored CSR style. Each row is a weighted sum of source vectors;
/// every channel uses the same weights.
struct SamplingPlan {
  std::size_t source_count = 0;
  std::vector<std::uint32_t> offsets{0};  // row r taps: [offsets[r], offsets[r+1])
  std::vector<std::uint32_t> index;
  std::vector<double> weight;

  std::size_t row_count() const { return offsets.size() - 1; }
  void add_tap(std::uint32_t src, double w) {
    index.push_back(src);
    weight.push_back(w);
  }
  void end_row() { offsets.push_back(static_cast<std::uint32_t>(index.size())); }
};

/// dst[row * dst_stride + c] = sum_taps w * src[idx * channels + c], c < channels.
void gather(const SamplingPlan& plan, std::span<const double> src, int channels,
            std::span<double> dst, int dst_stride);
/// Adjoint of gather: grad_src[idx * channels + c] += w * upstream[row * up_stride + c].
/// Runs in a fixed serial order so results do not depend on thread count.
void scatter_add(const SamplingPlan& plan, std::span<const double> upstream,
                 int up_stride, int channels, std::span<double> grad_src);

/// Continuous pixel coordinate (u = column, v = row).
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

/// Bilinear taps for one point on an H x W lattice. Taps outside the lattice
/// are dropped (zero padding). Returns true iff the point lies inside
/// [0, W-1] x [0, H-1].
bool append_bilinear_taps(SamplingPlan& plan, double u, double v, int width,
                          int height);

/// Nearest voxel index along one axis with round-half-down ties.
inline int nearest_index(double coord) {
  return static_cast<int>(std::ceil(coord - 0.5));
}

struct SampleResult {
  int channels = 0;
  std::vector<double> values;  // N x C
  std::vector<std::uint8_t> valid;
};

SampleResult bilinear_sample(const FeatureMap& map, std::span<const PixelCoord> pts);
/// Gradient w.r.t. the map values; `upstream` is N x C.
FeatureMap bilinear_sample_vjp(const FeatureMap& map, std::span<const PixelCoord> pts,
                               std::span<const double> upstream);

/// Voxel -> image sampling for one camera. Rows are voxels; invalid
/// projections get no taps. Also carries the geometric channels.
struct UnprojectPlan {
  VoxelGridSpec spec;
  int map_height = 0;
  int map_width = 0;
  GeomFeatureConfig geom;
  SamplingPlan taps;
  std::vector<double> geom_values;  // voxel_count x extra_channels
};

UnprojectPlan make_unproject_plan(const Intrinsics& cam, const Pose& pose,
                                  const VoxelGridSpec& spec,
                                  const GeomFeatureConfig& geom);
FeatureGrid apply_unproject(const UnprojectPlan& plan, const FeatureMap& map);
FeatureMap apply_unproject_vjp(const UnprojectPlan& plan, int map_channels,
                               const FeatureGrid& upstream);

FeatureGrid unproject(const FeatureMap& map, const Intrinsics& cam, const Pose& pose,
                      const VoxelGridSpec& spec, const GeomFeatureConfig& geom = {});
FeatureMap unproject_vjp(const FeatureMap& map, const Intrinsics& cam, const Pose& pose,
                         const VoxelGridSpec& spec, const GeomFeatureConfig& geom,
                         const FeatureGrid& upstream);

/// Depths of the sampling planes: bin midpoints of camera_z_range.
std::vector<double> plane_depths(const VoxelGridSpec& spec, const Intrinsics& cam,
                                 const Pose& pose, int n_planes);

/// Pixel x plane -> grid sampling for one camera. Row = pixel * n_planes + plane.
struct ProjectPlan {
  VoxelGridSpec spec;
  int height = 0;
  int width = 0;
  int n_planes = 0;
  Interp interp = Interp::kNearest;
  std::vector<double> depths;
  SamplingPlan taps;
};

ProjectPlan make_project_plan(const VoxelGridSpec& spec, const Intrinsics& cam,
                              const Pose& pose, int n_planes, Interp interp);
/// Output is H x W x (n_planes * C), plane blocks in ascending depth.
FeatureMap apply_project(const ProjectPlan& plan, const FeatureGrid& grid);
FeatureGrid apply_project_vjp(const ProjectPlan& plan, int grid_channels,
                              const FeatureMap& upstream);

FeatureMap project(const FeatureGrid& grid, const Intrinsics& cam, const Pose& pose,
                   int n_planes = kDefaultPlanes, Interp interp = Interp::kNearest);
FeatureGrid project_vjp(const FeatureGrid& grid, const Intrinsics& cam, const Pose& pose,
                        int n_planes, Interp interp, const FeatureMap& upstream);

}  // namespace lsm::ops
