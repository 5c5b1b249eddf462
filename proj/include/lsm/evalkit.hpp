#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/dataset.hpp"
#include "lsm/geometry.hpp"
#include "lsm/raster.hpp"

namespace lsm::eval {

/// Binarisation thresholds for occupancy probabilities.
inline constexpr double kLearnedThreshold = 0.4;
inline constexpr double kVisualHullThreshold = 0.75;

/// |pred >= threshold AND gt| / |pred >= threshold OR gt|; 1 when both are empty.
double voxel_iou(std::span<const double> pred, std::span<const std::uint8_t> gt,
                 double threshold);
double voxel_iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

struct ScoredItem {
  std::string scene;
  std::string family;
  int view = -1;
  double value = 0.0;
};

/// Per-item scores averaged per class, then the class means averaged.
struct ClassAggregate {
  std::map<std::string, double> per_class;
  double overall = 0.0;
};
ClassAggregate aggregate_by_class(std::span<const ScoredItem> items);

struct IoUReport {
  double threshold = 0.0;
  std::vector<ScoredItem> per_scene;
  std::map<std::string, double> per_class;
  double overall = 0.0;

  std::string to_text() const;
  std::string to_key_value() const;
  nlohmann::json to_json() const;
};
IoUReport make_iou_report(std::vector<ScoredItem> per_scene, double threshold);

double median(std::vector<double> values);

/// Half-diagonal of the unit cube: the largest distance from the origin a
/// surface point may have.
inline double valid_depth_radius() { return 0.5 * std::sqrt(3.0); }

/// Median |pred - gt| over pixels with gt > 0, pred > 0 and the gt surface
/// point within valid_depth_radius() of the origin. nullopt if no such pixel.
std::optional<double> view_depth_error(const FeatureMap& pred, const FeatureMap& gt,
                                       const Camera& camera);

struct DepthErrorReport {
  std::vector<ScoredItem> per_view;
  std::vector<std::string> excluded;  // "scene/view" with no valid pixel
  std::map<std::string, double> per_class;
  double overall = 0.0;
  double valid_radius = valid_depth_radius();

  std::string to_text() const;
  std::string to_key_value() const;
  nlohmann::json to_json() const;
};

struct DepthCase {
  std::string scene;
  std::string family;
  int view = 0;
  const FeatureMap* pred = nullptr;
  const FeatureMap* gt = nullptr;
  const Camera* camera = nullptr;
};
DepthErrorReport depth_error(std::span<const DepthCase> cases);

/// Rotates the camera about the world origin by an angle drawn uniformly in
/// [0, max_deg] around a random axis perpendicular to the line of sight, so a
/// camera aimed at the origin keeps aiming at it.
Pose perturb_pose(const Pose& pose, double max_deg, std::uint64_t seed);
/// Angle between two poses' optical axes, degrees.
double viewing_axis_angle_deg(const Pose& a, const Pose& b);

/// Maps a scene and the view indices to use onto an occupancy probability grid.
using Reconstructor =
    std::function<FeatureGrid(const data::SceneRecord&, std::span<const int> views)>;

struct SweepTable {
  std::string row_label;  // "views" or "theta_deg"
  std::vector<double> keys;
  std::vector<double> mean_iou;  // class-mean IoU per key
  std::vector<std::vector<double>> per_scene;

  std::string to_text() const;
  std::string to_key_value() const;
};

/// Mean IoU (class-averaged) for 1..max_views views; view subsets are the
/// first k views of each scene.
SweepTable view_count_sweep(const Reconstructor& method,
                            std::span<const data::SceneRecord> scenes, int max_views,
                            double threshold);

/// Visual-hull IoU when the carving cameras are perturbed by up to each
/// theta (masks stay rendered from the true poses). Each entry averages
/// `draws` perturbation draws per scene.
SweepTable perturbation_sweep(std::span<const data::SceneRecord> scenes,
                              std::span<const double> thetas_deg, int views, int draws,
                              std::uint64_t seed, double threshold = kVisualHullThreshold);

}  // namespace lsm::eval
