#include "lsm/classical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lsm/error.hpp"

namespace lsm::classical {

ZnccScore zncc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw InvalidArgument("zncc: patches must be non-empty and equally sized");
  }
  const double n = double(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  const double va = saa / n, vb = sbb / n;
  if (va < kZnccMinVariance || vb < kZnccMinVariance) return {};
  return {std::clamp(sab / (n * std::sqrt(va) * std::sqrt(vb)), -1.0, 1.0), true};
}

FeatureMap to_grayscale(const FeatureMap& rgb) {
  if (rgb.channels == 1) return rgb;
  if (rgb.channels != 3) throw InvalidArgument("to_grayscale: expects 1 or 3 channels");
  FeatureMap g(rgb.height, rgb.width, 1);
  for (std::size_t p = 0; p < g.pixel_count(); ++p) {
    g.values[p] = 0.299 * rgb.values[3 * p] + 0.587 * rgb.values[3 * p + 1] +
                  0.114 * rgb.values[3 * p + 2];
  }
  return g;
}

void PlaneSweepConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw InvalidArgument("plane sweep: window must be odd and >= 3");
  if (n_planes < 2) throw InvalidArgument("plane sweep: need at least 2 planes");
  if (min_views_for_score < 1) throw InvalidArgument("plane sweep: min views must be >= 1");
  if (range && !(range->z_far > range->z_near && range->z_near > 0.0)) {
    throw InvalidArgument("plane sweep: invalid depth range");
  }
}

namespace {

// Window sums of `src` (H x W) centred at every pixel; positions whose window
// leaves the image are left at 0. Separable, fixed summation order.
void box_sum(const std::vector<double>& src, int h, int w, int r, std::vector<double>& tmp,
             std::vector<double>& out) {
  std::fill(tmp.begin(), tmp.end(), 0.0);
  std::fill(out.begin(), out.end(), 0.0);
  for (int v = 0; v < h; ++v)
    for (int u = r; u < w - r; ++u) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += src[std::size_t(v) * w + u + d];
      tmp[std::size_t(v) * w + u] = s;
    }
  for (int v = r; v < h - r; ++v)
    for (int u = r; u < w - r; ++u) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += tmp[std::size_t(v + d) * w + u];
      out[std::size_t(v) * w + u] = s;
    }
}

double bilinear_gray(const FeatureMap& g, double u, double v) {
  const int u0 = static_cast<int>(std::floor(u));
  const int v0 = static_cast<int>(std::floor(v));
  const double au = u - u0, av = v - v0;
  const int u1 = std::min(u0 + 1, g.width - 1);
  const int v1 = std::min(v0 + 1, g.height - 1);
  return (1 - av) * ((1 - au) * g.at(v0, u0) + au * g.at(v0, u1)) +
         av * ((1 - au) * g.at(v1, u0) + au * g.at(v1, u1));
}

}  // namespace

PlaneSweepResult plane_sweep_depth(const FeatureMap& ref_image, const Camera& ref_camera,
                                   std::span<const FeatureMap> other_images,
                                   std::span<const Camera> other_cameras,
                                   const PlaneSweepConfig& cfg) {
  cfg.validate();
  if (other_images.empty() || other_images.size() != other_cameras.size()) {
    throw InvalidArgument("plane sweep: need >= 1 other view with a camera each");
  }
  const Intrinsics& k = ref_camera.intrinsics;
  const int h = k.height, w = k.width;
  if (ref_image.height != h || ref_image.width != w) {
    throw InvalidArgument("plane sweep: reference image does not match its camera");
  }
  const FeatureMap ref = to_grayscale(ref_image);
  std::vector<FeatureMap> others;
  for (std::size_t o = 0; o < other_images.size(); ++o) {
    const auto& oc = other_cameras[o].intrinsics;
    if (other_images[o].height != oc.height || other_images[o].width != oc.width) {
      throw InvalidArgument("plane sweep: view image does not match its camera");
    }
    others.push_back(to_grayscale(other_images[o]));
  }

  PlaneSweepResult res;
  res.range = cfg.range ? *cfg.range : camera_z_range(VoxelGridSpec{1}, k, ref_camera.pose);
  const int np = cfg.n_planes;
  res.plane_spacing = (res.range.z_far - res.range.z_near) / (np - 1);
  const int r = cfg.window / 2;
  const double n = double(cfg.window * cfg.window);
  const std::size_t npix = std::size_t(h) * w;

  std::vector<double> tmp(npix);
  std::vector<double> ref_sq(npix), sum_a(npix), sum_aa(npix);
  for (std::size_t p = 0; p < npix; ++p) ref_sq[p] = ref.values[p] * ref.values[p];
  box_sum(ref.values, h, w, r, tmp, sum_a);
  box_sum(ref_sq, h, w, r, tmp, sum_aa);

  std::vector<Vec3> rays(npix);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) rays[std::size_t(v) * w + u] = camera_ray_unnormalized(u, v, k);
  const Mat3 rt = ref_camera.pose.rotation.transpose();

  // scores[plane * npix + pixel]; NaN marks planes without enough views.
  std::vector<double> scores(std::size_t(np) * npix, std::numeric_limits<double>::quiet_NaN());
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < np; ++pl) {
    const double z = res.range.z_near + pl * res.plane_spacing;
    std::vector<double> warped(npix), ok(npix), prod(npix), wsq(npix);
    std::vector<double> sb(npix), sbb(npix), sab(npix), cnt(npix), scratch(npix);
    std::vector<double> total(npix, 0.0);
    std::vector<int> views(npix, 0);
    for (std::size_t o = 0; o < others.size(); ++o) {
      const auto& oc = other_cameras[o];
      for (std::size_t p = 0; p < npix; ++p) {
        const Vec3 world = rt * (z * rays[p] - ref_camera.pose.translation);
        const PixelProjection q = project_point(world, oc.intrinsics, oc.pose);
        if (q.valid) {
          const double s = bilinear_gray(others[o], q.u, q.v);
          warped[p] = s;
          ok[p] = 1.0;
        } else {
          warped[p] = 0.0;
          ok[p] = 0.0;
        }
        prod[p] = warped[p] * ref.values[p];
        wsq[p] = warped[p] * warped[p];
      }
      box_sum(warped, h, w, r, scratch, sb);
      box_sum(wsq, h, w, r, scratch, sbb);
      box_sum(prod, h, w, r, scratch, sab);
      box_sum(ok, h, w, r, scratch, cnt);
      for (int v = r; v < h - r; ++v) {
        for (int u = r; u < w - r; ++u) {
          const std::size_t p = std::size_t(v) * w + u;
          if (cnt[p] < n - 0.5) continue;
          const double ma = sum_a[p] / n, mb = sb[p] / n;
          const double va = sum_aa[p] / n - ma * ma;
          const double vb = sbb[p] / n - mb * mb;
          if (va < kZnccMinVariance || vb < kZnccMinVariance) continue;
          const double c = (sab[p] / n - ma * mb) / (std::sqrt(va) * std::sqrt(vb));
          total[p] += std::clamp(c, -1.0, 1.0);
          ++views[p];
        }
      }
    }
    double* out = scores.data() + std::size_t(pl) * npix;
    for (std::size_t p = 0; p < npix; ++p) {
      if (views[p] >= cfg.min_views_for_score) out[p] = total[p] / views[p];
    }
  }

  res.depth = FeatureMap(h, w, 1);
  res.score = FeatureMap(h, w, 1);
  res.valid.assign(npix, 0);
  for (std::size_t p = 0; p < npix; ++p) {
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int pl = 0; pl < np; ++pl) {
      const double s = scores[std::size_t(pl) * npix + p];
      if (!std::isnan(s) && s > best_score) {
        best_score = s;
        best = pl;
      }
    }
    if (best < 0) continue;
    double offset = 0.0;
    if (best > 0 && best + 1 < np) {
      const double sm = scores[std::size_t(best - 1) * npix + p];
      const double sp = scores[std::size_t(best + 1) * npix + p];
      if (!std::isnan(sm) && !std::isnan(sp)) {
        const double denom = sm - 2.0 * best_score + sp;
        if (denom < 0.0) offset = std::clamp(0.5 * (sm - sp) / denom, -0.5, 0.5);
      }
    }
    res.valid[p] = 1;
    res.score.values[p] = best_score;
    res.depth.values[p] = res.range.z_near + (best + offset) * res.plane_spacing;
  }
  return res;
}

void HullConfig::validate() const {
  if (!(occupancy_fraction > 0.0 && occupancy_fraction <= 1.0)) {
    throw InvalidArgument("visual hull: occupancy fraction must be in (0, 1]");
  }
}

FeatureGrid visual_hull(std::span<const std::vector<std::uint8_t>> masks,
                        std::span<const Camera> cameras, const VoxelGridSpec& spec) {
  if (masks.empty() || masks.size() != cameras.size()) {
    throw InvalidArgument("visual hull: need >= 1 mask with a camera each");
  }
  for (std::size_t c = 0; c < masks.size(); ++c) {
    const auto& k = cameras[c].intrinsics;
    if (masks[c].size() != std::size_t(k.width) * k.height) {
      throw InvalidArgument("visual hull: mask " + std::to_string(c) +
                            " does not match its camera");
    }
  }
  FeatureGrid hull(spec, 1);
  const int n = spec.resolution;
  const double inv = 1.0 / double(masks.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int l = 0; l < n; ++l) {
        const Vec3 x = spec.voxel_center(i, j, l);
        int inside = 0;
        for (std::size_t c = 0; c < masks.size(); ++c) {
          const PixelProjection p = project_point(x, cameras[c].intrinsics, cameras[c].pose);
          if (!p.valid) continue;
          const int u = static_cast<int>(std::lround(p.u));
          const int v = static_cast<int>(std::lround(p.v));
          if (masks[c][std::size_t(v) * cameras[c].intrinsics.width + u]) ++inside;
        }
        hull.values[spec.linear_index(i, j, l)] = inside * inv;
      }
    }
  }
  return hull;
}

std::vector<std::uint8_t> carve(const FeatureGrid& fraction, const HullConfig& cfg) {
  cfg.validate();
  std::vector<std::uint8_t> out(fraction.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fraction.values[i] >= cfg.occupancy_fraction - 1e-12 ? 1 : 0;
  }
  return out;
}

FeatureGrid visual_hull_occupancy(std::span<const std::vector<std::uint8_t>> masks,
                                  std::span<const Camera> cameras, const VoxelGridSpec& spec,
                                  const HullConfig& cfg) {
  FeatureGrid grid = visual_hull(masks, cameras, spec);
  const auto binary = carve(grid, cfg);
  for (std::size_t i = 0; i < binary.size(); ++i) grid.values[i] = binary[i];
  return grid;
}

std::vector<Vec3> depth_to_pointcloud(const FeatureMap& depth, const Intrinsics& cam,
                                      const Pose& pose, std::span<const std::uint8_t> mask) {
  if (depth.height != cam.height || depth.width != cam.width) {
    throw InvalidArgument("depth_to_pointcloud: depth map does not match the camera");
  }
  if (!mask.empty() && mask.size() != depth.pixel_count()) {
    throw InvalidArgument("depth_to_pointcloud: mask size mismatch");
  }
  std::vector<Vec3> pts;
  const Mat3 rt = pose.rotation.transpose();
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const std::size_t p = std::size_t(v) * cam.width + u;
      const double d = depth.values[p * depth.channels];
      if (!(d > 0.0)) continue;
      if (!mask.empty() && !mask[p]) continue;
      pts.push_back(rt * (d * camera_ray_unnormalized(u, v, cam) - pose.translation));
    }
  }
  return pts;
}

}  // namespace lsm::classical
