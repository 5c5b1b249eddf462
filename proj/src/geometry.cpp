#include "lsm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lsm/error.hpp"

namespace lsm {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidArgument("intrinsics: focal lengths must be positive");
  }
  if (width < 1 || height < 1) {
    throw InvalidArgument("intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidArgument("intrinsics: principal point outside the image");
  }
}

Intrinsics Intrinsics::downscaled(int factor) const {
  if (factor < 1) throw InvalidArgument("intrinsics: downscale factor must be >= 1");
  Intrinsics out = *this;
  out.fx = fx / factor;
  out.fy = fy / factor;
  out.cx = cx / factor;
  out.cy = cy / factor;
  out.width = (width + factor - 1) / factor;
  out.height = (height + factor - 1) / factor;
  return out;
}

void Pose::validate(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw InvalidArgument("pose: non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  if (ortho > tol) {
    throw InvalidArgument("pose: rotation is not orthonormal (deviation " +
                          std::to_string(ortho) + ")");
  }
  if (std::abs(rotation.determinant() - 1.0) > tol) {
    throw InvalidArgument("pose: rotation determinant is not 1");
  }
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) {
    // Looking along the up vector; any perpendicular works.
    right = forward.cross(std::abs(forward.x()) < 0.9 ? Vec3::UnitX()
                                                       : Vec3::UnitZ());
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  Pose pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = down.transpose();
  pose.rotation.row(2) = forward.transpose();
  pose.translation = -pose.rotation * eye;
  return pose;
}

void VoxelGridSpec::validate() const {
  if (resolution < 1) throw InvalidArgument("grid: resolution must be >= 1");
  if (!(side > 0.0)) throw InvalidArgument("grid: side must be positive");
}

Vec3 VoxelGridSpec::voxel_center(int i, int j, int k) const {
  const double inv = 1.0 / resolution;
  return center + side * Vec3((i + 0.5) * inv - 0.5, (j + 0.5) * inv - 0.5,
                              (k + 0.5) * inv - 0.5);
}

bool VoxelGridSpec::contains(const Vec3& world) const {
  const Vec3 lo = min_corner();
  for (int a = 0; a < 3; ++a) {
    if (world[a] < lo[a] || world[a] > lo[a] + side) return false;
  }
  return true;
}

PixelProjection project_point(const Vec3& world, const Intrinsics& cam,
                              const Pose& pose) {
  const Vec3 x = pose.to_camera(world);
  PixelProjection p;
  p.z = x.z();
  if (!(p.z > kZEps)) {
    p.u = std::numeric_limits<double>::quiet_NaN();
    p.v = std::numeric_limits<double>::quiet_NaN();
    return p;
  }
  p.u = cam.fx * x.x() / p.z + cam.cx;
  p.v = cam.fy * x.y() / p.z + cam.cy;
  p.valid = p.u >= 0.0 && p.u <= cam.width - 1 && p.v >= 0.0 &&
            p.v <= cam.height - 1;
  return p;
}

std::vector<Vec3> voxel_centers(const VoxelGridSpec& spec) {
  spec.validate();
  std::vector<Vec3> out;
  out.reserve(spec.voxel_count());
  const int n = spec.resolution;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) out.push_back(spec.voxel_center(i, j, k));
  return out;
}

Vec3 camera_ray_unnormalized(double u, double v, const Intrinsics& cam) {
  return Vec3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
}

Ray ray_through_pixel(double u, double v, const Intrinsics& cam,
                      const Pose& pose) {
  Ray r;
  r.origin = pose.camera_center();
  r.direction =
      (pose.rotation.transpose() * camera_ray_unnormalized(u, v, cam))
          .normalized();
  return r;
}

DepthRange camera_z_range(const VoxelGridSpec& spec, const Intrinsics&,
                          const Pose& pose) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const Vec3 base = spec.min_corner();
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner =
        base + spec.side * Vec3(c & 1 ? 1.0 : 0.0, c & 2 ? 1.0 : 0.0,
                                c & 4 ? 1.0 : 0.0);
    const double z = pose.to_camera(corner).z();
    lo = std::min(lo, z);
    hi = std::max(hi, z);
  }
  DepthRange r;
  r.z_near = std::max(kZEps, lo);
  r.z_far = std::max(r.z_near, hi);
  return r;
}

}  // namespace lsm
