#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lsm/geometry.hpp"
#include "lsm/raster.hpp"

namespace lsm::classical {

inline constexpr double kZnccMinVariance = 1e-12;

struct ZnccScore {
  double value = 0.0;
  bool valid = false;
};

/// Zero-mean normalised cross correlation of two equally sized patches.
/// Invalid when either patch variance is below 1e-12.
ZnccScore zncc(std::span<const double> a, std::span<const double> b);

/// Luminance 0.299 R + 0.587 G + 0.114 B.
FeatureMap to_grayscale(const FeatureMap& rgb);

struct PlaneSweepConfig {
  int window = 5;
  int n_planes = 300;
  /// Reference-camera depth range; defaults to the unit cube's z-range.
  std::optional<DepthRange> range;
  int min_views_for_score = 1;

  void validate() const;
};

struct PlaneSweepResult {
  FeatureMap depth;                 // H x W, 0 where invalid
  FeatureMap score;                 // H x W, best mean ZNCC
  std::vector<std::uint8_t> valid;  // H x W
  DepthRange range;
  double plane_spacing = 0.0;
};

/// Fronto-parallel plane sweep in the reference camera with winner-take-all
/// selection and parabolic refinement around the best plane. Planes are
/// equally spaced over [z_near, z_far] inclusive.
PlaneSweepResult plane_sweep_depth(const FeatureMap& ref_image, const Camera& ref_camera,
                                   std::span<const FeatureMap> other_images,
                                   std::span<const Camera> other_cameras,
                                   const PlaneSweepConfig& cfg = {});

struct HullConfig {
  /// Fraction of views that must see a voxel inside the silhouette for the
  /// binary hull.
  double occupancy_fraction = 1.0;
  /// Threshold applied when the fractional hull is scored as a probability.
  double threshold = 0.75;

  void validate() const;
};

/// Fraction of cameras in which each voxel center projects validly inside
/// the silhouette (nearest pixel). One channel, values in [0, 1].
FeatureGrid visual_hull(std::span<const std::vector<std::uint8_t>> masks,
                        std::span<const Camera> cameras, const VoxelGridSpec& spec);
/// Binary hull: fraction >= cfg.occupancy_fraction.
std::vector<std::uint8_t> carve(const FeatureGrid& fraction, const HullConfig& cfg = {});

/// Hull as a 0/1 occupancy grid (carve of the fractional hull), the form
/// scored against ground truth.
FeatureGrid visual_hull_occupancy(std::span<const std::vector<std::uint8_t>> masks,
                                  std::span<const Camera> cameras, const VoxelGridSpec& spec,
                                  const HullConfig& cfg = {});

/// World points for every pixel with mask != 0 and depth > 0. An empty mask
/// selects all pixels with positive depth.
std::vector<Vec3> depth_to_pointcloud(const FeatureMap& depth, const Intrinsics& cam,
                                      const Pose& pose,
                                      std::span<const std::uint8_t> mask = {});

}  // namespace lsm::classical
