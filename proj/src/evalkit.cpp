#include "lsm/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "lsm/classical.hpp"
#include "lsm/error.hpp"
#include "lsm/synthgen.hpp"

namespace lsm::eval {

double voxel_iou(std::span<const double> pred, std::span<const std::uint8_t> gt,
                 double threshold) {
  if (pred.size() != gt.size()) throw InvalidArgument("voxel_iou: dimension mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool g = gt[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double voxel_iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw InvalidArgument("voxel_iou: dimension mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += (pred[i] && gt[i]) ? 1 : 0;
    uni += (pred[i] || gt[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

ClassAggregate aggregate_by_class(std::span<const ScoredItem> items) {
  ClassAggregate agg;
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& it : items) {
    auto& a = acc[it.family];
    a.first += it.value;
    a.second += 1;
  }
  for (const auto& [cls, a] : acc) agg.per_class[cls] = a.first / a.second;
  double s = 0.0;
  for (const auto& [cls, m] : agg.per_class) s += m;
  agg.overall = agg.per_class.empty() ? 0.0 : s / double(agg.per_class.size());
  return agg;
}

IoUReport make_iou_report(std::vector<ScoredItem> per_scene, double threshold) {
  IoUReport r;
  r.threshold = threshold;
  r.per_scene = std::move(per_scene);
  auto agg = aggregate_by_class(r.per_scene);
  r.per_class = std::move(agg.per_class);
  r.overall = agg.overall;
  return r;
}

namespace {

std::string fixed(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string IoUReport::to_text() const {
  std::ostringstream os;
  os << "voxel IoU (threshold " << fixed(threshold, 2) << ")\n";
  os << pad("scene", 16) << pad("class", 12) << "iou\n";
  for (const auto& s : per_scene) os << pad(s.scene, 16) << pad(s.family, 12) << fixed(s.value) << "\n";
  for (const auto& [cls, v] : per_class) os << pad("class", 16) << pad(cls, 12) << fixed(v) << "\n";
  os << pad("overall", 28) << fixed(overall) << "\n";
  return os.str();
}

namespace {

std::string kv(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "=%.17g\n", value);
  return key + buf;
}

}  // namespace

std::string IoUReport::to_key_value() const {
  std::string out = kv("threshold", threshold);
  for (const auto& s : per_scene) out += kv("scene." + s.scene + ".iou", s.value);
  for (const auto& [cls, v] : per_class) out += kv("class." + cls + ".iou", v);
  return out + kv("overall.iou", overall);
}

nlohmann::json IoUReport::to_json() const {
  nlohmann::json j{{"threshold", threshold}, {"overall", overall}};
  for (const auto& s : per_scene) {
    j["per_scene"].push_back({{"scene", s.scene}, {"class", s.family}, {"iou", s.value}});
  }
  for (const auto& [cls, v] : per_class) j["per_class"][cls] = v;
  return j;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median: no values");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double hi = values[mid];
  if (values.size() % 2) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

std::optional<double> view_depth_error(const FeatureMap& pred, const FeatureMap& gt,
                                       const Camera& camera) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw InvalidArgument("depth_error: prediction and ground truth differ in size");
  }
  const auto& k = camera.intrinsics;
  if (gt.height != k.height || gt.width != k.width) {
    throw InvalidArgument("depth_error: depth map does not match its camera");
  }
  const double radius = valid_depth_radius();
  const Mat3 rt = camera.pose.rotation.transpose();
  std::vector<double> errs;
  for (int v = 0; v < gt.height; ++v) {
    for (int u = 0; u < gt.width; ++u) {
      const double g = gt.at(v, u, 0);
      const double p = pred.at(v, u, 0);
      if (!(g > 0.0) || !(p > 0.0)) continue;
      const Vec3 x = rt * (g * camera_ray_unnormalized(u, v, k) - camera.pose.translation);
      if (x.norm() > radius) continue;
      errs.push_back(std::abs(p - g));
    }
  }
  if (errs.empty()) return std::nullopt;
  return median(std::move(errs));
}

DepthErrorReport depth_error(std::span<const DepthCase> cases) {
  DepthErrorReport r;
  for (const auto& c : cases) {
    const auto e = view_depth_error(*c.pred, *c.gt, *c.camera);
    if (!e) {
      r.excluded.push_back(c.scene + "/" + std::to_string(c.view));
      continue;
    }
    r.per_view.push_back({c.scene, c.family, c.view, *e});
  }
  auto agg = aggregate_by_class(r.per_view);
  r.per_class = std::move(agg.per_class);
  r.overall = agg.overall;
  return r;
}

std::string DepthErrorReport::to_text() const {
  std::ostringstream os;
  os << "median absolute depth error (surface within " << fixed(valid_radius) << " of origin)\n";
  os << pad("scene", 16) << pad("view", 6) << pad("class", 12) << "error\n";
  for (const auto& s : per_view) {
    os << pad(s.scene, 16) << pad(std::to_string(s.view), 6) << pad(s.family, 12)
       << fixed(s.value, 5) << "\n";
  }
  for (const auto& x : excluded) os << "excluded (no valid pixels): " << x << "\n";
  for (const auto& [cls, v] : per_class) os << pad("class", 22) << pad(cls, 12) << fixed(v, 5) << "\n";
  os << pad("overall", 34) << fixed(overall, 5) << "\n";
  return os.str();
}

std::string DepthErrorReport::to_key_value() const {
  std::string out = kv("valid_radius", valid_radius);
  for (const auto& s : per_view) {
    char view[16];
    std::snprintf(view, sizeof view, "%04d", s.view);
    out += kv("scene." + s.scene + ".view_" + view + ".error", s.value);
  }
  for (const auto& x : excluded) out += "excluded=" + x + "\n";
  for (const auto& [cls, v] : per_class) out += kv("class." + cls + ".error", v);
  return out + kv("overall.error", overall);
}

nlohmann::json DepthErrorReport::to_json() const {
  nlohmann::json j{{"overall", overall}, {"valid_radius", valid_radius}, {"excluded", excluded}};
  for (const auto& s : per_view) {
    j["per_view"].push_back(
        {{"scene", s.scene}, {"view", s.view}, {"class", s.family}, {"error", s.value}});
  }
  for (const auto& [cls, v] : per_class) j["per_class"][cls] = v;
  return j;
}

Pose perturb_pose(const Pose& pose, double max_deg, std::uint64_t seed) {
  if (!(max_deg >= 0.0)) throw InvalidArgument("perturb_pose: max angle must be >= 0");
  if (max_deg == 0.0) return pose;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = unit(rng) * max_deg * std::numbers::pi / 180.0;
  const Vec3 center = pose.camera_center();
  const Vec3 sight = center.norm() > 1e-12 ? Vec3(center.normalized()) : pose.viewing_axis();
  // Random unit axis perpendicular to the line of sight.
  const Vec3 helper = std::abs(sight.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 e1 = sight.cross(helper).normalized();
  const Vec3 e2 = sight.cross(e1);
  const double phi = unit(rng) * 2.0 * std::numbers::pi;
  const Vec3 axis = std::cos(phi) * e1 + std::sin(phi) * e2;
  const Mat3 delta = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  Pose out;
  // Rotating the whole camera rig about the origin: centre -> delta * centre,
  // orientation R -> R * delta^T, translation unchanged.
  out.rotation = pose.rotation * delta.transpose();
  out.translation = pose.translation;
  // Re-orthonormalise to keep the pose invariants tight.
  Eigen::JacobiSVD<Mat3> svd(out.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  return out;
}

double viewing_axis_angle_deg(const Pose& a, const Pose& b) {
  const double c = std::clamp(a.viewing_axis().dot(b.viewing_axis()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

std::string SweepTable::to_text() const {
  std::ostringstream os;
  os << pad(row_label, 12) << "mean_iou\n";
  for (std::size_t i = 0; i < keys.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "%g", keys[i]);
    os << pad(key, 12) << fixed(mean_iou[i]) << "\n";
  }
  return os.str();
}

std::string SweepTable::to_key_value() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%s.%g.mean_iou=%.17g\n", row_label.c_str(), keys[i],
                  mean_iou[i]);
    os << line;
  }
  return os.str();
}

SweepTable view_count_sweep(const Reconstructor& method,
                            std::span<const data::SceneRecord> scenes, int max_views,
                            double threshold) {
  if (scenes.empty()) throw InvalidArgument("view sweep: no scenes");
  if (max_views < 1) throw InvalidArgument("view sweep: max views must be >= 1");
  SweepTable t;
  t.row_label = "views";
  for (int k = 1; k <= max_views; ++k) {
    std::vector<ScoredItem> items;
    std::vector<double> row;
    for (const auto& s : scenes) {
      if (static_cast<int>(s.views.size()) < k) {
        throw InvalidArgument("view sweep: scene " + s.name + " has only " +
                              std::to_string(s.views.size()) + " views");
      }
      std::vector<int> idx(k);
      for (int i = 0; i < k; ++i) idx[i] = i;
      const FeatureGrid pred = method(s, idx);
      const double iou = voxel_iou(pred.values, s.occupancy, threshold);
      items.push_back({s.name, s.family, -1, iou});
      row.push_back(iou);
    }
    t.keys.push_back(k);
    t.mean_iou.push_back(aggregate_by_class(items).overall);
    t.per_scene.push_back(std::move(row));
  }
  return t;
}

SweepTable perturbation_sweep(std::span<const data::SceneRecord> scenes,
                              std::span<const double> thetas_deg, int views, int draws,
                              std::uint64_t seed, double threshold) {
  if (scenes.empty()) throw InvalidArgument("perturbation sweep: no scenes");
  if (draws < 1) throw InvalidArgument("perturbation sweep: draws must be >= 1");
  SweepTable t;
  t.row_label = "theta_deg";
  for (double theta : thetas_deg) {
    std::vector<ScoredItem> items;
    std::vector<double> row;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      const auto& s = scenes[si];
      const int nv = std::min<int>(views, static_cast<int>(s.views.size()));
      std::vector<std::vector<std::uint8_t>> masks;
      for (int v = 0; v < nv; ++v) masks.push_back(s.views[v].mask);
      double acc = 0.0;
      for (int d = 0; d < draws; ++d) {
        std::vector<Camera> cams;
        for (int v = 0; v < nv; ++v) {
          Camera c = s.views[v].camera;
          // Same draw stream for every theta: only the magnitude scales.
          const std::uint64_t stream = (si * 1000003ULL + d) * 64 + v;
          c.pose = perturb_pose(c.pose, theta, synth::mix_seed(seed, stream));
          cams.push_back(c);
        }
        const FeatureGrid hull = classical::visual_hull_occupancy(masks, cams, s.grid);
        acc += voxel_iou(hull.values, s.occupancy, threshold);
      }
      const double iou = acc / draws;
      items.push_back({s.name, s.family, -1, iou});
      row.push_back(iou);
    }
    t.keys.push_back(theta);
    t.mean_iou.push_back(aggregate_by_class(items).overall);
    t.per_scene.push_back(std::move(row));
  }
  return t;
}

}  // namespace lsm::eval
