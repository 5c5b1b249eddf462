#include "lsm/diffops.hpp"

#include <cmath>

#include "lsm/error.hpp"

namespace lsm::ops {

void gather(const SamplingPlan& plan, std::span<const double> src, int channels,
            std::span<double> dst, int dst_stride) {
  const auto rows = static_cast<std::int64_t>(plan.row_count());
  if (src.size() != plan.source_count * channels ||
      dst.size() < plan.row_count() * dst_stride) {
    throw InvalidArgument("gather: buffer sizes do not match the sampling plan");
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    double* out = dst.data() + r * dst_stride;
    for (int c = 0; c < channels; ++c) out[c] = 0.0;
    for (auto t = plan.offsets[r]; t < plan.offsets[r + 1]; ++t) {
      const double w = plan.weight[t];
      const double* in = src.data() + static_cast<std::size_t>(plan.index[t]) * channels;
      for (int c = 0; c < channels; ++c) out[c] += w * in[c];
    }
  }
}

void scatter_add(const SamplingPlan& plan, std::span<const double> upstream,
                 int up_stride, int channels, std::span<double> grad_src) {
  if (grad_src.size() != plan.source_count * channels ||
      upstream.size() < plan.row_count() * up_stride) {
    throw InvalidArgument("scatter_add: buffer sizes do not match the sampling plan");
  }
  const std::size_t rows = plan.row_count();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* up = upstream.data() + r * up_stride;
    for (auto t = plan.offsets[r]; t < plan.offsets[r + 1]; ++t) {
      const double w = plan.weight[t];
      double* g = grad_src.data() + static_cast<std::size_t>(plan.index[t]) * channels;
      for (int c = 0; c < channels; ++c) g[c] += w * up[c];
    }
  }
}

bool append_bilinear_taps(SamplingPlan& plan, double u, double v, int width,
                          int height) {
  if (!std::isfinite(u) || !std::isfinite(v)) return false;
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  const double au = u - fu;
  const double av = v - fv;
  const int u0 = static_cast<int>(fu);
  const int v0 = static_cast<int>(fv);
  const double wu[2] = {1.0 - au, au};
  const double wv[2] = {1.0 - av, av};
  for (int dv = 0; dv < 2; ++dv) {
    const int vv = v0 + dv;
    if (vv < 0 || vv >= height || wv[dv] == 0.0) continue;
    for (int du = 0; du < 2; ++du) {
      const int uu = u0 + du;
      if (uu < 0 || uu >= width || wu[du] == 0.0) continue;
      plan.add_tap(static_cast<std::uint32_t>(vv * width + uu), wv[dv] * wu[du]);
    }
  }
  return u >= 0.0 && u <= width - 1 && v >= 0.0 && v <= height - 1;
}

namespace {

SamplingPlan bilinear_plan(const FeatureMap& map, std::span<const PixelCoord> pts,
                           std::vector<std::uint8_t>* valid) {
  SamplingPlan plan;
  plan.source_count = map.pixel_count();
  if (valid) valid->resize(pts.size());
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const bool ok = append_bilinear_taps(plan, pts[n].u, pts[n].v, map.width, map.height);
    if (valid) (*valid)[n] = ok ? 1 : 0;
    plan.end_row();
  }
  return plan;
}

}  // namespace

SampleResult bilinear_sample(const FeatureMap& map, std::span<const PixelCoord> pts) {
  SampleResult out;
  out.channels = map.channels;
  const auto plan = bilinear_plan(map, pts, &out.valid);
  out.values.assign(pts.size() * map.channels, 0.0);
  gather(plan, map.values, map.channels, out.values, map.channels);
  return out;
}

FeatureMap bilinear_sample_vjp(const FeatureMap& map, std::span<const PixelCoord> pts,
                               std::span<const double> upstream) {
  if (upstream.size() != pts.size() * map.channels) {
    throw InvalidArgument("bilinear_sample_vjp: upstream must be N x C");
  }
  const auto plan = bilinear_plan(map, pts, nullptr);
  FeatureMap grad(map.height, map.width, map.channels);
  scatter_add(plan, upstream, map.channels, map.channels, grad.values);
  return grad;
}

UnprojectPlan make_unproject_plan(const Intrinsics& cam, const Pose& pose,
                                  const VoxelGridSpec& spec,
                                  const GeomFeatureConfig& geom) {
  spec.validate();
  UnprojectPlan plan;
  plan.spec = spec;
  plan.map_height = cam.height;
  plan.map_width = cam.width;
  plan.geom = geom;
  plan.taps.source_count = static_cast<std::size_t>(cam.height) * cam.width;
  const int extra = geom.extra_channels();
  plan.geom_values.assign(spec.voxel_count() * extra, 0.0);
  const Vec3 eye = pose.camera_center();
  const int n = spec.resolution;
  std::size_t voxel = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k, ++voxel) {
        const Vec3 x = spec.voxel_center(i, j, k);
        const PixelProjection p = project_point(x, cam, pose);
        if (p.valid) append_bilinear_taps(plan.taps, p.u, p.v, cam.width, cam.height);
        plan.taps.end_row();
        double* g = plan.geom_values.data() + voxel * extra;
        if (geom.append_depth) *g++ = p.z;
        if (geom.append_ray_dir) {
          const Vec3 d = (x - eye).normalized();
          *g++ = d.x();
          *g++ = d.y();
          *g++ = d.z();
        }
      }
    }
  }
  return plan;
}

FeatureGrid apply_unproject(const UnprojectPlan& plan, const FeatureMap& map) {
  if (map.height != plan.map_height || map.width != plan.map_width) {
    throw InvalidArgument("unproject: feature map size does not match the camera");
  }
  const int extra = plan.geom.extra_channels();
  const int out_c = map.channels + extra;
  FeatureGrid grid(plan.spec, out_c);
  gather(plan.taps, map.values, map.channels, grid.values, out_c);
  if (extra > 0) {
    const std::size_t nv = plan.spec.voxel_count();
    for (std::size_t v = 0; v < nv; ++v) {
      for (int e = 0; e < extra; ++e) {
        grid.values[v * out_c + map.channels + e] = plan.geom_values[v * extra + e];
      }
    }
  }
  return grid;
}

FeatureMap apply_unproject_vjp(const UnprojectPlan& plan, int map_channels,
                               const FeatureGrid& upstream) {
  const int out_c = map_channels + plan.geom.extra_channels();
  if (upstream.channels != out_c || !(upstream.spec == plan.spec)) {
    throw InvalidArgument("unproject_vjp: upstream grid shape mismatch");
  }
  FeatureMap grad(plan.map_height, plan.map_width, map_channels);
  scatter_add(plan.taps, upstream.values, out_c, map_channels, grad.values);
  return grad;
}

FeatureGrid unproject(const FeatureMap& map, const Intrinsics& cam, const Pose& pose,
                      const VoxelGridSpec& spec, const GeomFeatureConfig& geom) {
  return apply_unproject(make_unproject_plan(cam, pose, spec, geom), map);
}

FeatureMap unproject_vjp(const FeatureMap& map, const Intrinsics& cam, const Pose& pose,
                         const VoxelGridSpec& spec, const GeomFeatureConfig& geom,
                         const FeatureGrid& upstream) {
  return apply_unproject_vjp(make_unproject_plan(cam, pose, spec, geom), map.channels,
                             upstream);
}

std::vector<double> plane_depths(const VoxelGridSpec& spec, const Intrinsics& cam,
                                 const Pose& pose, int n_planes) {
  if (n_planes < 1) throw InvalidArgument("project: n_planes must be >= 1");
  const DepthRange range = camera_z_range(spec, cam, pose);
  const double step = (range.z_far - range.z_near) / n_planes;
  std::vector<double> z(n_planes);
  for (int k = 0; k < n_planes; ++k) z[k] = range.z_near + (k + 0.5) * step;
  return z;
}

ProjectPlan make_project_plan(const VoxelGridSpec& spec, const Intrinsics& cam,
                              const Pose& pose, int n_planes, Interp interp) {
  spec.validate();
  ProjectPlan plan;
  plan.spec = spec;
  plan.height = cam.height;
  plan.width = cam.width;
  plan.n_planes = n_planes;
  plan.interp = interp;
  plan.depths = plane_depths(spec, cam, pose, n_planes);
  plan.taps.source_count = spec.voxel_count();
  const Mat3 rt = pose.rotation.transpose();
  const int n = spec.resolution;
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 ray = camera_ray_unnormalized(u, v, cam);
      for (int k = 0; k < n_planes; ++k) {
        const Vec3 world = rt * (plan.depths[k] * ray - pose.translation);
        if (spec.contains(world)) {
          const Vec3 g = spec.to_voxel_coords(world);
          if (interp == Interp::kNearest) {
            const int i = nearest_index(g.x());
            const int j = nearest_index(g.y());
            const int l = nearest_index(g.z());
            if (i >= 0 && i < n && j >= 0 && j < n && l >= 0 && l < n) {
              plan.taps.add_tap(static_cast<std::uint32_t>(spec.linear_index(i, j, l)), 1.0);
            }
          } else {
            const Vec3 f(std::floor(g.x()), std::floor(g.y()), std::floor(g.z()));
            const Vec3 a = g - f;
            for (int c = 0; c < 8; ++c) {
              const int ii = static_cast<int>(f.x()) + (c & 1);
              const int jj = static_cast<int>(f.y()) + ((c >> 1) & 1);
              const int ll = static_cast<int>(f.z()) + ((c >> 2) & 1);
              if (ii < 0 || ii >= n || jj < 0 || jj >= n || ll < 0 || ll >= n) continue;
              const double w = ((c & 1) ? a.x() : 1.0 - a.x()) *
                               (((c >> 1) & 1) ? a.y() : 1.0 - a.y()) *
                               (((c >> 2) & 1) ? a.z() : 1.0 - a.z());
              if (w == 0.0) continue;
              plan.taps.add_tap(static_cast<std::uint32_t>(spec.linear_index(ii, jj, ll)), w);
            }
          }
        }
        plan.taps.end_row();
      }
    }
  }
  return plan;
}

FeatureMap apply_project(const ProjectPlan& plan, const FeatureGrid& grid) {
  if (!(grid.spec == plan.spec)) {
    throw InvalidArgument("project: grid spec does not match the plan");
  }
  FeatureMap out(plan.height, plan.width, plan.n_planes * grid.channels);
  gather(plan.taps, grid.values, grid.channels, out.values, grid.channels);
  return out;
}

FeatureGrid apply_project_vjp(const ProjectPlan& plan, int grid_channels,
                              const FeatureMap& upstream) {
  if (upstream.height != plan.height || upstream.width != plan.width ||
      upstream.channels != plan.n_planes * grid_channels) {
    throw InvalidArgument("project_vjp: upstream map shape mismatch");
  }
  FeatureGrid grad(plan.spec, grid_channels);
  scatter_add(plan.taps, upstream.values, grid_channels, grid_channels, grad.values);
  return grad;
}

FeatureMap project(const FeatureGrid& grid, const Intrinsics& cam, const Pose& pose,
                   int n_planes, Interp interp) {
  return apply_project(make_project_plan(grid.spec, cam, pose, n_planes, interp), grid);
}

FeatureGrid project_vjp(const FeatureGrid& grid, const Intrinsics& cam, const Pose& pose,
                        int n_planes, Interp interp, const FeatureMap& upstream) {
  return apply_project_vjp(make_project_plan(grid.spec, cam, pose, n_planes, interp),
                           grid.channels, upstream);
}

}  // namespace lsm::ops
