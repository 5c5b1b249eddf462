#include "lsm/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "lsm/classical.hpp"
#include "lsm/error.hpp"
#include "lsm/evalkit.hpp"
#include "lsm/tensorio.hpp"

namespace lsm::cmd {

namespace {

using nlohmann::json;

std::vector<data::SceneRecord> load_dataset(const fs::path& root) {
  std::vector<data::SceneRecord> scenes;
  for (const auto& dir : data::list_scenes(root)) scenes.push_back(data::load_scene(dir));
  if (scenes.empty()) throw IoError("no scenes under " + root.string());
  return scenes;
}

int used_views(const data::SceneRecord& s, int requested) {
  const int n = static_cast<int>(s.views.size());
  if (requested < 0) throw InvalidArgument("views must be >= 0");
  if (requested > n) {
    throw InvalidArgument("scene " + s.name + " has " + std::to_string(n) + " views, " +
                          std::to_string(requested) + " requested");
  }
  return requested == 0 ? n : requested;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_reports(const fs::path& out, const std::string& stem, const std::string& text,
                   const std::string& kv) {
  io::write_text_file(out / (stem + ".txt"), text);
  io::write_text_file(out / (stem + ".kv"), kv);
}

void write_prediction_info(const fs::path& out, const std::string& method, const std::string& kind,
                           double threshold) {
  io::write_text_file(out / "pred.json",
                      json{{"method", method}, {"kind", kind}, {"threshold", threshold}}.dump(2) +
                          "\n");
}

void write_mask(const fs::path& path, int h, int w, const std::vector<std::uint8_t>& m) {
  const std::uint32_t dims[2] = {std::uint32_t(h), std::uint32_t(w)};
  io::write_tensor(path, dims, m);
}

std::unique_ptr<nn::ToyModel> load_model(const fs::path& checkpoint) {
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(checkpoint / "manifest.json"));
  } catch (const json::exception& e) {
    throw ParseError("manifest.json", 0, checkpoint.string() + ": " + e.what());
  }
  auto model = std::make_unique<nn::ToyModel>(nn::ToyModelConfig::from_json(manifest.at("config")));
  model->load_checkpoint(checkpoint);
  return model;
}

std::vector<int> first_views(int k) {
  std::vector<int> v(k);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

void write_run_config(const fs::path& out_dir, const std::string& command, const json& config) {
  make_dir(out_dir);
  json j{{"command", command}, {"config", config}};
  io::write_text_file(out_dir / "run_config.json", j.dump(2) + "\n");
}

void gen_data(const synth::DatasetOptions& opts, const fs::path& out) {
  synth::generate_dataset(opts, out);
  write_run_config(out, "gen-data",
                   {{"out", out.string()},
                    {"scenes", opts.scenes},
                    {"views", opts.views},
                    {"res", opts.resolution},
                    {"width", opts.width},
                    {"height", opts.height},
                    {"textured", opts.textured},
                    {"texture_frequency", opts.texture_frequency},
                    {"light_jitter_deg", opts.light_jitter_deg},
                    {"family", opts.family},
                    {"seed", opts.seed}});
}

GradcheckOutcome gradcheck(const GradcheckArgs& args) {
  if (!(args.tol >= 0.0)) throw InvalidArgument("gradcheck: tolerance must be >= 0");
  GradcheckOutcome g;
  g.tol = args.tol;
  g.results = check::run_gradcheck(args.op, args.trials, args.seed);
  constexpr double kAdjointTol = 1e-6;
  if (args.adjoint) {
    if (args.op == "all" || args.op == "unproject") {
      g.adjoints.push_back(check::unproject_adjoint(16, 8, args.seed));
    }
    if (args.op == "all" || args.op == "project") {
      g.adjoints.push_back(check::project_adjoint(16, 8, true, args.seed));
      g.adjoints.push_back(check::project_adjoint(16, 8, false, args.seed));
    }
    if (args.op == "all") {
      g.adjoints.push_back(check::model_adjoint("voxel", args.seed));
      g.adjoints.push_back(check::model_adjoint("depth", args.seed));
    }
  }
  g.passed = true;
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %-14s %-14s %8s  %s\n", "op", "max_rel_error",
                "entry_rel", "entries", "result");
  os << line;
  for (const auto& r : g.results) {
    const bool ok = r.max_rel_error <= args.tol;
    g.passed = g.passed && ok;
    std::snprintf(line, sizeof line, "%-28s %-14.3e %-14.3e %8zu  %s\n", r.op.c_str(),
                  r.max_rel_error, r.max_entry_rel_error, r.entries, ok ? "PASS" : "FAIL");
    os << line;
  }
  for (const auto& a : g.adjoints) {
    const bool ok = a.rel_error <= kAdjointTol;
    g.passed = g.passed && ok;
    std::snprintf(line, sizeof line, "%-28s %-14.3e %-14s %8s  %s\n",
                  ("adjoint " + a.name).c_str(), a.rel_error, "-", "-", ok ? "PASS" : "FAIL");
    os << line;
  }
  std::snprintf(line, sizeof line, "tolerance %.3g (adjoint %.0e): %s\n", args.tol, kAdjointTol,
                g.passed ? "all passed" : "FAILED");
  os << line;
  g.text = os.str();
  for (const auto& r : g.results) {
    g.kv += "op." + r.op + ".max_rel_error=" + fmt("%.17g", r.max_rel_error) + "\n";
    g.kv += "op." + r.op + ".max_entry_rel_error=" + fmt("%.17g", r.max_entry_rel_error) + "\n";
  }
  for (const auto& a : g.adjoints) {
    g.kv += "adjoint." + a.name + ".rel_error=" + fmt("%.17g", a.rel_error) + "\n";
  }
  g.kv += std::string("passed=") + (g.passed ? "1" : "0") + "\n";
  if (args.out) {
    write_run_config(*args.out, "gradcheck",
                     {{"op", args.op},
                      {"trials", args.trials},
                      {"tol", args.tol},
                      {"seed", args.seed},
                      {"adjoint", args.adjoint}});
    write_reports(*args.out, "gradcheck", g.text, g.kv);
  }
  return g;
}

eval::IoUReport visual_hull(const VisualHullArgs& args) {
  classical::HullConfig cfg;
  cfg.occupancy_fraction = args.occupancy_fraction;
  cfg.threshold = args.threshold;
  cfg.validate();
  const auto scenes = load_dataset(args.data);
  make_dir(args.out);
  std::vector<eval::ScoredItem> items;
  for (const auto& s : scenes) {
    const int n = used_views(s, args.views);
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<Camera> cams;
    for (int v = 0; v < n; ++v) {
      masks.push_back(s.views[v].mask);
      cams.push_back(s.views[v].camera);
    }
    const FeatureGrid frac = classical::visual_hull(masks, cams, s.grid);
    FeatureGrid occ = frac;
    const auto bin = classical::carve(frac, cfg);
    for (std::size_t i = 0; i < bin.size(); ++i) occ.values[i] = bin[i];
    const fs::path dir = args.out / s.name;
    make_dir(dir);
    io::write_grid(dir / "hull_fraction.lsmt", frac);
    io::write_grid(dir / "occupancy.lsmt", occ);
    items.push_back({s.name, s.family, -1, eval::voxel_iou(occ.values, s.occupancy, args.threshold)});
  }
  auto report = eval::make_iou_report(std::move(items), args.threshold);
  write_prediction_info(args.out, "visual-hull", "voxel", args.threshold);
  write_reports(args.out, "report", report.to_text(), report.to_key_value());
  write_run_config(args.out, "visual-hull",
                   {{"data", args.data.string()},
                    {"views", args.views},
                    {"occupancy_fraction", args.occupancy_fraction},
                    {"threshold", args.threshold}});
  return report;
}

PlaneSweepOutcome plane_sweep(const PlaneSweepArgs& args) {
  classical::PlaneSweepConfig cfg;
  cfg.n_planes = args.planes;
  cfg.window = args.window;
  cfg.min_views_for_score = args.min_views;
  cfg.validate();
  if (args.ref_views < 0) throw InvalidArgument("plane-sweep: ref views must be >= 0");
  const auto scenes = load_dataset(args.data);
  make_dir(args.out);
  std::vector<FeatureMap> preds;
  std::vector<eval::DepthCase> cases;
  // Stable storage: cases point into preds.
  std::size_t total = 0;
  for (const auto& s : scenes) {
    const int n = used_views(s, args.views);
    total += args.ref_views == 0 ? n : std::min(n, args.ref_views);
  }
  preds.reserve(total);
  std::size_t good = 0, valid_gt = 0, invalid = 0, pixels = 0;
  for (const auto& s : scenes) {
    const int n = used_views(s, args.views);
    if (n < 2) throw InvalidArgument("plane-sweep: scene " + s.name + " needs >= 2 views");
    const int refs = args.ref_views == 0 ? n : std::min(n, args.ref_views);
    const fs::path dir = args.out / s.name;
    make_dir(dir);
    for (int r = 0; r < refs; ++r) {
      std::vector<FeatureMap> imgs;
      std::vector<Camera> cams;
      for (int v = 0; v < n; ++v) {
        if (v == r) continue;
        imgs.push_back(s.views[v].image);
        cams.push_back(s.views[v].camera);
      }
      const auto res = classical::plane_sweep_depth(s.views[r].image, s.views[r].camera, imgs,
                                                    cams, cfg);
      io::write_feature_map(dir / data::view_file(r, "depth"), res.depth);
      io::write_feature_map(dir / data::view_file(r, "score"), res.score);
      write_mask(dir / data::view_file(r, "valid"), res.depth.height, res.depth.width, res.valid);
      const auto& gt = s.views[r].depth;
      for (std::size_t p = 0; p < res.valid.size(); ++p) {
        ++pixels;
        if (!res.valid[p]) {
          ++invalid;
          continue;
        }
        if (gt.values[p] > 0.0) {
          ++valid_gt;
          if (std::abs(res.depth.values[p] - gt.values[p]) <= 2.0 * res.plane_spacing) ++good;
        }
      }
      preds.push_back(res.depth);
      cases.push_back({s.name, s.family, r, &preds.back(), &gt, &s.views[r].camera});
    }
  }
  PlaneSweepOutcome out;
  out.report = eval::depth_error(cases);
  out.within_two_spacings = valid_gt ? double(good) / double(valid_gt) : 0.0;
  out.invalid_fraction = pixels ? double(invalid) / double(pixels) : 0.0;
  for (const auto& x : out.report.excluded) std::cerr << "warning: no valid pixels in " << x << "\n";
  write_prediction_info(args.out, "plane-sweep", "depth", 0.0);
  write_reports(args.out, "report",
                out.report.to_text() + "within 2 plane spacings: " +
                    fmt("%.4f", out.within_two_spacings) + "\ninvalid pixel fraction: " +
                    fmt("%.4f", out.invalid_fraction) + "\n",
                out.report.to_key_value() + "within_two_spacings=" +
                    fmt("%.17g", out.within_two_spacings) + "\ninvalid_fraction=" +
                    fmt("%.17g", out.invalid_fraction) + "\n");
  write_run_config(args.out, "plane-sweep",
                   {{"data", args.data.string()},
                    {"planes", args.planes},
                    {"window", args.window},
                    {"views", args.views},
                    {"ref_views", args.ref_views},
                    {"min_views", args.min_views}});
  return out;
}

nn::TrainResult train_toy(const TrainArgs& args) {
  const auto scenes = load_dataset(args.data);
  nn::ToyModel model(args.config);
  const auto result = nn::train_toy(model, scenes, args.iters, [&](int it, double loss) {
    if (args.verbose && (it % 10 == 0 || it == args.iters)) {
      std::cerr << "iter " << it << " loss " << fmt("%.6f", loss) << "\n";
    }
  });
  make_dir(args.out);
  model.save_checkpoint(args.out / "checkpoint");
  std::string curve;
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    curve += std::to_string(i) + " " + fmt("%.17g", result.loss_curve[i]) + "\n";
  }
  io::write_text_file(args.out / "loss_curve.txt", curve);
  const json summary{{"iters", args.iters},
                     {"scenes", scenes.size()},
                     {"loss", args.config.head == "voxel" ? "bce" : "l1"},
                     {"initial_eval_loss", result.initial_eval_loss},
                     {"final_eval_loss", result.final_eval_loss},
                     {"ratio", result.final_eval_loss / result.initial_eval_loss}};
  io::write_text_file(args.out / "summary.json", summary.dump(2) + "\n");
  write_run_config(args.out, "train-toy",
                   {{"data", args.data.string()}, {"iters", args.iters}, {"model", args.config.to_json()}});
  return result;
}

EvalOutcome evaluate(const EvalArgs& args) {
  if (args.pred.has_value() == args.checkpoint.has_value()) {
    throw InvalidArgument("eval: give exactly one of a prediction directory or a checkpoint");
  }
  const auto scenes = load_dataset(args.data);
  make_dir(args.out);
  fs::path pred_dir;
  std::string method, kind;
  if (args.checkpoint) {
    auto model = load_model(*args.checkpoint);
    method = "toy-" + model->config().head;
    kind = model->config().head;
    pred_dir = args.out / "predictions";
    for (const auto& s : scenes) {
      const int k = args.views == 0
                        ? std::min<int>(model->config().views_per_step, int(s.views.size()))
                        : used_views(s, args.views);
      const auto views = first_views(k);
      const fs::path dir = pred_dir / s.name;
      make_dir(dir);
      if (kind == "voxel") {
        io::write_grid(dir / "occupancy.lsmt", model->predict_occupancy(s, views));
      } else {
        auto depths = model->predict_depth(s, views);
        for (std::size_t i = 0; i < depths.size(); ++i) {
          // Depth is reported on the silhouette of the input view only.
          const auto& mask = s.views[views[i]].mask;
          for (std::size_t p = 0; p < mask.size(); ++p) {
            if (!mask[p]) depths[i].values[p] = 0.0;
          }
          io::write_feature_map(dir / data::view_file(views[i], "depth"), depths[i]);
        }
      }
    }
    write_prediction_info(pred_dir, method, kind, eval::kLearnedThreshold);
  } else {
    pred_dir = *args.pred;
    if (fs::exists(pred_dir / "pred.json")) {
      const json info = json::parse(io::read_text_file(pred_dir / "pred.json"));
      method = info.value("method", "");
      kind = info.value("kind", "");
    }
    if (kind.empty()) {
      kind = fs::exists(pred_dir / scenes[0].name / "occupancy.lsmt") ? "voxel" : "depth";
    }
  }

  EvalOutcome out;
  out.kind = kind;
  if (kind == "voxel") {
    const double threshold = args.threshold.value_or(
        method == "visual-hull" ? eval::kVisualHullThreshold : eval::kLearnedThreshold);
    std::vector<eval::ScoredItem> items;
    for (const auto& s : scenes) {
      const FeatureGrid g = io::read_grid(pred_dir / s.name / "occupancy.lsmt", s.grid);
      if (g.spec.resolution != s.grid.resolution || g.channels != 1) {
        throw InvalidArgument("eval: prediction for " + s.name + " does not match the scene grid");
      }
      items.push_back({s.name, s.family, -1, eval::voxel_iou(g.values, s.occupancy, threshold)});
    }
    out.iou = eval::make_iou_report(std::move(items), threshold);
    write_reports(args.out, "report", out.iou->to_text(), out.iou->to_key_value());
  } else if (kind == "depth") {
    std::vector<FeatureMap> preds;
    std::vector<std::pair<const data::SceneRecord*, int>> keys;
    for (const auto& s : scenes) {
      for (int v = 0; v < int(s.views.size()); ++v) {
        const fs::path f = pred_dir / s.name / data::view_file(v, "depth");
        if (!fs::exists(f)) continue;
        preds.push_back(io::read_feature_map(f));
        keys.emplace_back(&s, v);
      }
    }
    if (preds.empty()) throw InvalidArgument("eval: no depth predictions under " + pred_dir.string());
    std::vector<eval::DepthCase> cases;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto& s = *keys[i].first;
      const int v = keys[i].second;
      cases.push_back({s.name, s.family, v, &preds[i], &s.views[v].depth, &s.views[v].camera});
    }
    out.depth = eval::depth_error(cases);
    for (const auto& x : out.depth->excluded) std::cerr << "warning: no valid pixels in " << x << "\n";
    write_reports(args.out, "report", out.depth->to_text(), out.depth->to_key_value());
  } else {
    throw InvalidArgument("eval: unknown prediction kind '" + kind + "'");
  }
  json cfg{{"data", args.data.string()}, {"kind", kind}, {"method", method}, {"views", args.views}};
  if (args.pred) cfg["pred"] = args.pred->string();
  if (args.checkpoint) cfg["checkpoint"] = args.checkpoint->string();
  if (args.threshold) cfg["threshold"] = *args.threshold;
  write_run_config(args.out, "eval", cfg);
  return out;
}

eval::SweepTable sweep_views(const SweepViewsArgs& args) {
  const auto scenes = load_dataset(args.data);
  eval::Reconstructor method;
  double threshold = eval::kVisualHullThreshold;
  std::shared_ptr<nn::ToyModel> model;
  if (args.method == "visual-hull") {
    method = [](const data::SceneRecord& s, std::span<const int> views) {
      std::vector<std::vector<std::uint8_t>> masks;
      std::vector<Camera> cams;
      for (int v : views) {
        masks.push_back(s.views[v].mask);
        cams.push_back(s.views[v].camera);
      }
      return classical::visual_hull_occupancy(masks, cams, s.grid);
    };
  } else {
    model = load_model(args.method);
    if (model->config().head != "voxel") {
      throw InvalidArgument("sweep-views: checkpoint must have a voxel head");
    }
    threshold = eval::kLearnedThreshold;
    method = [model](const data::SceneRecord& s, std::span<const int> views) {
      return model->predict_occupancy(s, views);
    };
  }
  threshold = args.threshold.value_or(threshold);
  const auto table = eval::view_count_sweep(method, scenes, args.max_views, threshold);
  make_dir(args.out);
  write_reports(args.out, "table", table.to_text(), table.to_key_value());
  write_run_config(args.out, "sweep-views",
                   {{"data", args.data.string()},
                    {"method", args.method},
                    {"max_views", args.max_views},
                    {"threshold", threshold}});
  return table;
}

eval::SweepTable perturb_eval(const PerturbArgs& args) {
  for (double t : args.thetas) {
    if (!(t >= 0.0)) throw InvalidArgument("perturb-eval: angles must be >= 0");
  }
  const auto scenes = load_dataset(args.data);
  int views = args.views;
  if (views == 0) {
    views = std::numeric_limits<int>::max();
    for (const auto& s : scenes) views = std::min<int>(views, int(s.views.size()));
  }
  const auto table =
      eval::perturbation_sweep(scenes, args.thetas, views, args.draws, args.seed, args.threshold);
  make_dir(args.out);
  write_reports(args.out, "table", table.to_text(), table.to_key_value());
  write_run_config(args.out, "perturb-eval",
                   {{"data", args.data.string()},
                    {"thetas_deg", args.thetas},
                    {"views", views},
                    {"draws", args.draws},
                    {"seed", args.seed},
                    {"threshold", args.threshold}});
  return table;
}

ExportPlyOutcome export_ply(const ExportPlyArgs& args) {
  const auto scenes = load_dataset(args.data);
  make_dir(args.out);
  ExportPlyOutcome out;
  std::vector<double> all_sdf;
  std::string text, kv;
  for (const auto& s : scenes) {
    std::vector<Vec3> points;
    for (int v = 0; v < int(s.views.size()); ++v) {
      const fs::path f = args.depth / s.name / data::view_file(v, "depth");
      if (!fs::exists(f)) continue;
      const FeatureMap d = io::read_feature_map(f);
      const auto& cam = s.views[v].camera;
      if (d.height != cam.intrinsics.height || d.width != cam.intrinsics.width) {
        throw InvalidArgument("export-ply: " + f.string() + " does not match its camera");
      }
      const auto pts = classical::depth_to_pointcloud(d, cam.intrinsics, cam.pose);
      points.insert(points.end(), pts.begin(), pts.end());
    }
    io::export_ply(args.out / (s.name + ".ply"), points);
    out.points += points.size();
    if (points.empty() || !s.meta.contains("scene")) continue;
    const auto spec = synth::SceneSpec::from_json(s.meta.at("scene"));
    std::vector<double> sdf;
    for (const auto& p : points) sdf.push_back(std::abs(synth::sdf_eval(spec, p)));
    all_sdf.insert(all_sdf.end(), sdf.begin(), sdf.end());
    const double med = eval::median(sdf);
    text += s.name + " points " + std::to_string(points.size()) + " median_abs_sdf " +
            fmt("%.5f", med) + "\n";
    kv += "scene." + s.name + ".points=" + std::to_string(points.size()) + "\n";
    kv += "scene." + s.name + ".median_abs_sdf=" + fmt("%.17g", med) + "\n";
  }
  if (!all_sdf.empty()) {
    out.median_abs_sdf = eval::median(all_sdf);
    text += "overall median_abs_sdf " + fmt("%.5f", out.median_abs_sdf) + "\n";
    kv += "overall.median_abs_sdf=" + fmt("%.17g", out.median_abs_sdf) + "\n";
  }
  kv += "overall.points=" + std::to_string(out.points) + "\n";
  write_reports(args.out, "ply_report", text, kv);
  write_run_config(args.out, "export-ply",
                   {{"data", args.data.string()}, {"depth", args.depth.string()}});
  return out;
}

}  // namespace lsm::cmd
