#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/evalkit.hpp"
#include "lsm/gradcheck.hpp"
#include "lsm/nn/toy_model.hpp"
#include "lsm/synthgen.hpp"

// Command-level drivers shared by the C API and the command line. Every
// driver that has an output directory writes run_config.json there.
namespace lsm::cmd {

namespace fs = std::filesystem;

void write_run_config(const fs::path& out_dir, const std::string& command,
                      const nlohmann::json& config);

void gen_data(const synth::DatasetOptions& opts, const fs::path& out);

struct GradcheckArgs {
  std::string op = "all";
  int trials = 3;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  /// Also run the dot-product tests (projection ops and whole model).
  bool adjoint = true;
  std::optional<fs::path> out;
};

struct GradcheckOutcome {
  std::vector<check::GradcheckResult> results;
  std::vector<check::AdjointResult> adjoints;
  double tol = 0.0;
  bool passed = false;
  std::string text;
  std::string kv;
};

GradcheckOutcome gradcheck(const GradcheckArgs& args);

struct VisualHullArgs {
  fs::path data;
  fs::path out;
  int views = 0;  // 0 = all views of each scene
  double occupancy_fraction = 1.0;
  double threshold = eval::kVisualHullThreshold;
};

/// Per scene: hull_fraction.lsmt (fraction of views) and occupancy.lsmt (0/1
/// hull); report.txt / report.kv with IoU at the hull threshold.
eval::IoUReport visual_hull(const VisualHullArgs& args);

struct PlaneSweepArgs {
  fs::path data;
  fs::path out;
  int planes = 300;
  int window = 5;
  int views = 0;      // views used per scene, 0 = all
  int ref_views = 0;  // leading views used as reference, 0 = all used views
  int min_views = 1;
};

struct PlaneSweepOutcome {
  eval::DepthErrorReport report;
  /// Valid pixels with a ground-truth surface within 2 plane spacings.
  double within_two_spacings = 0.0;
  /// Fraction of pixels without a depth estimate.
  double invalid_fraction = 0.0;
};

/// Per scene and reference view: view_####.depth.lsmt, .score.lsmt and
/// .valid.lsmt; report.txt / report.kv with depth errors.
PlaneSweepOutcome plane_sweep(const PlaneSweepArgs& args);

struct TrainArgs {
  fs::path data;
  fs::path out;
  nn::ToyModelConfig config;
  int iters = 200;
  bool verbose = false;
};

/// Writes checkpoint/, loss_curve.txt ("iter loss" per line) and summary.json.
nn::TrainResult train_toy(const TrainArgs& args);

struct EvalArgs {
  fs::path data;
  fs::path out;
  std::optional<fs::path> pred;        // prediction directory
  std::optional<fs::path> checkpoint;  // or a toy-model checkpoint to run
  std::optional<double> threshold;     // default from the prediction's method
  int views = 0;                       // views fed to a checkpoint, 0 = its views_per_step
};

struct EvalOutcome {
  std::string kind;  // voxel | depth
  std::optional<eval::IoUReport> iou;
  std::optional<eval::DepthErrorReport> depth;
};

/// Scores voxel predictions (occupancy.lsmt) with IoU or depth predictions
/// (view_####.depth.lsmt) with the median depth error.
EvalOutcome evaluate(const EvalArgs& args);

struct SweepViewsArgs {
  fs::path data;
  fs::path out;
  std::string method = "visual-hull";  // or a checkpoint directory
  int max_views = 8;
  std::optional<double> threshold;
};

eval::SweepTable sweep_views(const SweepViewsArgs& args);

struct PerturbArgs {
  fs::path data;
  fs::path out;
  std::vector<double> thetas{0.0, 2.5, 5.0, 10.0};
  int views = 0;
  int draws = 3;
  std::uint64_t seed = 0;
  double threshold = eval::kVisualHullThreshold;
};

eval::SweepTable perturb_eval(const PerturbArgs& args);

struct ExportPlyArgs {
  fs::path data;
  fs::path depth;  // directory with scene_####/view_####.depth.lsmt
  fs::path out;
};

struct ExportPlyOutcome {
  std::size_t points = 0;
  /// Median |SDF| of the exported points against each scene's generator.
  double median_abs_sdf = 0.0;
};

/// One <scene>.ply per scene from all its predicted depth maps (pixels with
/// depth > 0), plus ply_report.txt / .kv with the distance to the true surface.
ExportPlyOutcome export_ply(const ExportPlyArgs& args);

}  // namespace lsm::cmd
