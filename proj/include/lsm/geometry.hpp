#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <vector>

namespace lsm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Depth below which a point counts as behind the camera.
inline constexpr double kZEps = 1e-6;

/// Pinhole intrinsics. Pixel (u, v) = (column, row); integer coordinates sit
/// on sample centers, (0, 0) being the first sample.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  /// Intrinsics of a raster `factor` times coarser (stride-`factor` sampling
  /// of the original pixel lattice starting at pixel 0).
  Intrinsics downscaled(int factor) const;
};

/// World-to-camera rigid transform: x_cam = rotation * x_world + translation.
/// The camera looks down +z, x to the right, y down.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate(double tol = 1e-9) const;
  Vec3 camera_center() const { return -rotation.transpose() * translation; }
  /// World-frame direction of the optical axis.
  Vec3 viewing_axis() const { return rotation.row(2).transpose(); }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

  static Pose look_at(const Vec3& eye, const Vec3& target,
                      const Vec3& up = Vec3::UnitY());
};

struct Camera {
  Intrinsics intrinsics;
  Pose pose;
};

/// Axis-aligned cube split into resolution^3 voxels. Index (i, j, k) maps to
/// (x, y, z); i varies slowest in linear order.
struct VoxelGridSpec {
  int resolution = 32;
  Vec3 center = Vec3::Zero();
  double side = 1.0;

  void validate() const;
  double voxel_size() const { return side / resolution; }
  std::size_t voxel_count() const {
    auto v = static_cast<std::size_t>(resolution);
    return v * v * v;
  }
  std::size_t linear_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * resolution + j) * resolution + k;
  }
  Vec3 voxel_center(int i, int j, int k) const;
  Vec3 min_corner() const { return center - Vec3::Constant(0.5 * side); }
  /// Continuous voxel coordinates: voxel (i, j, k) center maps to (i, j, k).
  Vec3 to_voxel_coords(const Vec3& world) const {
    return (world - min_corner()) / voxel_size() - Vec3::Constant(0.5);
  }
  bool contains(const Vec3& world) const;

  bool operator==(const VoxelGridSpec& o) const {
    return resolution == o.resolution && center == o.center && side == o.side;
  }
};

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
  bool valid = false;
};

PixelProjection project_point(const Vec3& world, const Intrinsics& cam,
                              const Pose& pose);

std::vector<Vec3> voxel_centers(const VoxelGridSpec& spec);

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit norm, world frame
};

Ray ray_through_pixel(double u, double v, const Intrinsics& cam,
                      const Pose& pose);

/// Camera-frame direction (x, y, 1) of the ray through (u, v); scaling it by a
/// depth gives the camera-frame point at that depth.
Vec3 camera_ray_unnormalized(double u, double v, const Intrinsics& cam);

struct DepthRange {
  double z_near = kZEps;
  double z_far = kZEps;
};

/// Camera-frame depth interval spanned by the grid cube's corners.
DepthRange camera_z_range(const VoxelGridSpec& spec, const Intrinsics& cam,
                          const Pose& pose);

}  // namespace lsm
