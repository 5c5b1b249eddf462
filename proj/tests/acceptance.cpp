// Acceptance suite: one PASS/FAIL line per criterion.
//   lsm_acceptance [--work DIR] [criterion numbers...]
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/classical.hpp"
#include "lsm/diffops.hpp"
#include "lsm/evalkit.hpp"
#include "lsm/nn/layers.hpp"
#include "lsm/synthgen.hpp"
#include "lsm/tensorio.hpp"

namespace fs = std::filesystem;
using namespace lsm;

namespace {

fs::path g_work;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs the CLI inside `dir` (relative paths resolve there), output to `log`.
int run_cli(const fs::path& dir, const std::string& args, const std::string& log,
            const std::string& env = "") {
  fs::create_directories(dir);
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" LSM_CLI_PATH "' " + args +
                          " > '" + log + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, double> read_kv(const fs::path& file) {
  std::map<std::string, double> kv;
  if (!fs::exists(file)) return kv;
  const std::string text = io::read_text_file(file);
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = std::strtod(line.c_str() + eq + 1, nullptr);
    pos = end + 1;
  }
  return kv;
}

double kv_or_nan(const std::map<std::string, double>& kv, const std::string& key) {
  const auto it = kv.find(key);
  return it == kv.end() ? std::nan("") : it->second;
}

double train_ratio(const fs::path& run) {
  const fs::path f = run / "summary.json";
  if (!fs::exists(f)) return std::nan("");
  return nlohmann::json::parse(io::read_text_file(f)).value("ratio", std::nan(""));
}

// --- 1 ---------------------------------------------------------------------

Outcome gradient_suite() {
  const fs::path dir = g_work / "c1";
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_cli(dir, "gradcheck --op all --out gc", "stdout.txt");
  const double dt = seconds_since(t0);
  const auto kv = read_kv(dir / "gc" / "gradcheck.kv");
  double worst = 0.0;
  for (const auto& [k, v] : kv) {
    if (k.ends_with(".max_rel_error")) worst = std::max(worst, v);
  }
  return {code == 0 && dt < 120.0,
          "exit " + std::to_string(code) + ", worst max_rel_error " + fmt("%.2e", worst) + ", " +
              fmt("%.1f s", dt)};
}

// --- 2 ---------------------------------------------------------------------

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Outcome adjointness() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0), az(0.0, 360.0), el(-30.0, 40.0),
      rad(1.6, 2.6);
  VoxelGridSpec spec;
  spec.resolution = 16;
  const int channels = 8;
  const auto k = synth::default_intrinsics(28, 22);
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const Pose pose = synth::pose_on_sphere(az(rng), el(rng), rad(rng));

    FeatureMap x(k.height, k.width, channels);
    for (double& v : x.values) v = u(rng);
    FeatureGrid y(spec, channels);
    for (double& v : y.values) v = u(rng);
    const double lhs = dot(ops::unproject(x, k, pose, spec).values, y.values);
    const double rhs = dot(x.values, ops::unproject_vjp(x, k, pose, spec, {}, y).values);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300));

    for (const auto interp : {ops::Interp::kNearest, ops::Interp::kTrilinear}) {
      const int planes = 16;
      FeatureGrid g(spec, channels);
      for (double& v : g.values) v = u(rng);
      FeatureMap w(k.height, k.width, planes * channels);
      for (double& v : w.values) v = u(rng);
      const double l = dot(ops::project(g, k, pose, planes, interp).values, w.values);
      const double r = dot(g.values, ops::project_vjp(g, k, pose, planes, interp, w).values);
      worst = std::max(worst, std::abs(l - r) / std::max(std::abs(l), 1e-300));
    }
  }
  return {worst <= 1e-6, "worst relative mismatch " + fmt("%.2e", worst) +
                             " over 6 unproject and 12 project instances"};
}

// --- 3 ---------------------------------------------------------------------

Outcome epipolar_consistency() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> inside(-0.45, 0.45), az(0.0, 360.0), el(-40.0, 60.0),
      rad(1.8, 3.0), feat(-1.0, 1.0);
  VoxelGridSpec spec;  // V = 32 unit cube
  const auto k = synth::default_intrinsics(64, 64);
  const int channels = 4;
  int failures = 0, trials = 0;
  while (trials < 100) {
    const Vec3 x(inside(rng), inside(rng), inside(rng));
    const Pose a = synth::pose_on_sphere(az(rng), el(rng), rad(rng));
    const Pose b = synth::pose_on_sphere(az(rng), el(rng), rad(rng));
    const Vec3 vc = spec.to_voxel_coords(x);
    const int i = ops::nearest_index(vc.x()), j = ops::nearest_index(vc.y()),
              l = ops::nearest_index(vc.z());
    const Vec3 center = spec.voxel_center(i, j, l);

    std::vector<double> f(channels);
    for (double& v : f) v = feat(rng);
    bool usable = true;
    std::vector<FeatureMap> maps;
    for (const Pose& p : {a, b}) {
      // Plant f on a patch around the projection of x wide enough to hold the
      // bilinear taps of the containing voxel's center.
      const auto px = project_point(x, k, p);
      const auto pc = project_point(center, k, p);
      const double reach = std::hypot(px.u - pc.u, px.v - pc.v) + 2.0;
      if (!px.valid || px.u - reach < 0 || px.v - reach < 0 || px.u + reach > k.width - 1 ||
          px.v + reach > k.height - 1) {
        usable = false;
        break;
      }
      FeatureMap m(k.height, k.width, channels);
      for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
          if (std::hypot(u - px.u, v - px.v) > reach) continue;
          for (int c = 0; c < channels; ++c) m.values[m.index(v, u, c)] = f[c];
        }
      }
      maps.push_back(std::move(m));
    }
    if (!usable) continue;
    ++trials;
    const auto ga = ops::unproject(maps[0], k, a, spec);
    const auto gb = ops::unproject(maps[1], k, b, spec);
    const std::size_t idx = spec.linear_index(i, j, l);
    for (int c = 0; c < channels; ++c) {
      if (std::abs(ga.at(idx, c) - gb.at(idx, c)) > 1e-12 || std::abs(ga.at(idx, c) - f[c]) > 1e-12) {
        ++failures;
        break;
      }
    }
  }
  return {failures == 0, std::to_string(failures) + " failures in " + std::to_string(trials) +
                             " point and camera-pair draws"};
}

// --- 4 ---------------------------------------------------------------------

Outcome visual_hull_oracle() {
  const auto scene = synth::sphere_scene(0.4);
  VoxelGridSpec spec;
  const auto truth = synth::voxelize(scene, spec);
  synth::ViewSampler vs;
  vs.seed = 4;
  const auto k = synth::default_intrinsics(64, 64);
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<Camera> cams;
  for (const auto& a : synth::sample_view_angles(vs, 8)) {
    cams.push_back({k, synth::pose_on_sphere(a.azimuth_deg, a.elevation_deg, vs.radius)});
    masks.push_back(synth::render_view(scene, k, cams.back().pose).mask);
  }
  std::vector<double> ious;
  bool monotone = true;
  for (int n = 1; n <= 8; ++n) {
    const auto hull = classical::visual_hull_occupancy(std::span(masks).first(n),
                                                       std::span(cams).first(n), spec);
    ious.push_back(eval::voxel_iou(hull.values, truth, eval::kVisualHullThreshold));
    if (n > 1 && ious[n - 1] < ious[n - 2] - 0.01) monotone = false;
  }
  std::string detail = "IoU by views:";
  for (double v : ious) detail += fmt(" %.3f", v);
  return {ious.back() >= 0.85 && monotone, detail};
}

// --- 5 ---------------------------------------------------------------------

Outcome plane_sweep_accuracy() {
  const int size = 256;
  const auto k = synth::default_intrinsics(size, size);
  classical::PlaneSweepConfig cfg;  // 300 planes, 5 x 5 ZNCC
  std::size_t valid = 0, valid_surface = 0, close = 0, pixels = 0, textureless_invalid = 0;
  for (int s = 0; s < 2; ++s) {
    auto scene = synth::random_scene("composite", 500 + s, true, 20.0);
    // Reference plus nine neighbours within 15 degrees of azimuth.
    const double az0 = 40.0 + 90.0 * s;
    synth::ViewSampler vs;
    vs.seed = 31 + s;
    vs.azimuth_min_deg = az0 - 15.0;
    vs.azimuth_max_deg = az0 + 15.0;
    vs.elevation_min_deg = 2.5;
    vs.elevation_max_deg = 17.5;
    const Camera ref{k, synth::pose_on_sphere(az0, 10.0, 2.0)};
    std::vector<Camera> cams;
    for (const auto& a : synth::sample_view_angles(vs, 9)) {
      cams.push_back({k, synth::pose_on_sphere(a.azimuth_deg, a.elevation_deg, 2.0)});
    }
    for (const bool textured : {true, false}) {
      scene.texture.textured = textured;
      const auto r0 = synth::render_view(scene, k, ref.pose);
      std::vector<FeatureMap> imgs;
      for (const auto& c : cams) imgs.push_back(synth::render_view(scene, k, c.pose).image);
      const auto ps = classical::plane_sweep_depth(r0.image, ref, imgs, cams, cfg);
      for (std::size_t i = 0; i < ps.valid.size(); ++i) {
        if (!textured) {
          textureless_invalid += ps.valid[i] ? 0 : 1;
          ++pixels;
          continue;
        }
        if (!ps.valid[i]) continue;
        ++valid;
        // Pixels with no surface have no ground-truth depth and count as misses.
        const double gt = r0.depth.values[i];
        valid_surface += gt > 0 ? 1 : 0;
        if (gt > 0 && std::abs(ps.depth.values[i] - gt) <= 2.0 * ps.plane_spacing) ++close;
      }
    }
  }
  const double within = double(close) / std::max<std::size_t>(valid, 1);
  const double invalid = double(textureless_invalid) / std::max<std::size_t>(pixels, 1);
  return {within >= 0.90 && invalid > 0.5,
          fmt("textured: %.3f of valid pixels within 2 plane spacings", within) +
              fmt(" (%.0f valid, ", double(valid)) +
              fmt("%.3f on surface pixels only); ", double(close) / std::max<std::size_t>(valid_surface, 1)) +
              fmt("textureless: %.3f of pixels invalid", invalid)};
}

// --- 6 and 7 ---------------------------------------------------------------

const fs::path& learn_dir() {
  static const fs::path dir = [] {
    const fs::path d = g_work / "learn";
    run_cli(d, "gen-data --scenes 8 --views 4 --seed 1 --out train", "gen_train.txt");
    run_cli(d, "gen-data --scenes 2 --views 4 --seed 99 --family composite --out held",
            "gen_held.txt");
    return d;
  }();
  return dir;
}

Outcome learnability() {
  const fs::path& d = learn_dir();
  const auto t0 = std::chrono::steady_clock::now();
  const int train = run_cli(d, "train-toy --data train --out voxel --iters 200 --seed 3 --quiet",
                            "train_voxel.txt");
  const double dt = seconds_since(t0);
  const int ev = run_cli(d, "eval --data held --checkpoint voxel/checkpoint --out voxel_eval",
                         "eval_voxel.txt");
  const int vh = run_cli(d, "visual-hull --data held --out hull", "hull.txt");
  const double ratio = train_ratio(d / "voxel");
  const double learned = kv_or_nan(read_kv(d / "voxel_eval" / "report.kv"), "overall.iou");
  const double hull = kv_or_nan(read_kv(d / "hull" / "report.kv"), "overall.iou");
  const bool ok = train == 0 && ev == 0 && vh == 0 && ratio <= 0.5 && learned > hull && dt <= 900;
  return {ok, fmt("BCE ratio %.3f; ", ratio) + fmt("held-out IoU learned %.4f", learned) +
                  fmt(" vs visual hull %.4f; ", hull) + fmt("training %.0f s", dt)};
}

Outcome depth_pipeline() {
  const fs::path& d = learn_dir();
  const int train = run_cli(
      d, "train-toy --data train --out depth --head depth --iters 200 --seed 3 --quiet",
      "train_depth.txt");
  const int ev = run_cli(d, "eval --data train --checkpoint depth/checkpoint --out depth_eval",
                         "eval_depth.txt");
  const int ply = run_cli(d, "export-ply --data train --depth depth_eval/predictions --out ply",
                          "ply.txt");
  const double ratio = train_ratio(d / "depth");
  const double sdf = kv_or_nan(read_kv(d / "ply" / "ply_report.kv"), "overall.median_abs_sdf");
  const double limit = 3.0 / 32.0;
  return {train == 0 && ev == 0 && ply == 0 && ratio <= 0.6 && sdf <= limit,
          fmt("L1 ratio %.3f; ", ratio) + fmt("median |sdf| %.4f", sdf) +
              fmt(" (limit %.4f)", limit)};
}

// --- 8 ---------------------------------------------------------------------

Outcome metric_units() {
  std::vector<std::string> failed;
  auto expect = [&](bool c, const char* what) {
    if (!c) failed.push_back(what);
  };
  const std::vector<std::uint8_t> gt{0, 1, 1, 0, 1};
  expect(eval::voxel_iou(gt, gt) == 1.0, "identical grids");
  const std::vector<std::uint8_t> ab{1, 1, 0}, bc{0, 1, 1};
  expect(std::abs(eval::voxel_iou(ab, bc) - 1.0 / 3.0) < 1e-15, "one third");
  const std::vector<double> p{0.5, 0.5, 0.9};
  const std::vector<std::uint8_t> all{1, 1, 1};
  expect(eval::voxel_iou(p, all, 0.4) == 1.0, "threshold 0.4");
  expect(std::abs(eval::voxel_iou(p, all, 0.75) - 1.0 / 3.0) < 1e-15, "threshold 0.75");
  expect(eval::voxel_iou(std::vector<double>{0.4}, std::vector<std::uint8_t>{1}, 0.4) == 1.0,
         "threshold inclusive");

  const auto k = synth::default_intrinsics(33, 33);
  const Camera cam{k, synth::pose_on_sphere(30.0, 10.0, 2.0)};
  const auto r = synth::render_view(synth::sphere_scene(0.4), k, cam.pose);
  const auto same = eval::view_depth_error(r.depth, r.depth, cam);
  expect(same && *same == 0.0, "depth error 0");
  FeatureMap off = r.depth;
  for (double& d : off.values) d = d > 0 ? d + 0.05 : 0.0;
  const auto shifted = eval::view_depth_error(off, r.depth, cam);
  expect(shifted && std::abs(*shifted - 0.05) < 1e-12, "depth error 0.05");

  nn::Tape t;
  nn::Tensor half({8}, 0.5);
  nn::Tensor y({8}, std::vector<double>{0, 1, 1, 0, 1, 0, 0, 1});
  const double bce = t.value(nn::bce_loss(t, t.constant(half), y)).item();
  expect(std::abs(bce - std::log(2.0)) <= 1e-9, "BCE ln 2");

  std::string detail = failed.empty() ? "all metric examples hold" : "failed:";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty(), detail + fmt("; BCE(0.5) - ln 2 = %.1e", bce - std::log(2.0))};
}

// --- 9 ---------------------------------------------------------------------

Outcome pose_noise() {
  const fs::path d = g_work / "c9";
  run_cli(d, "gen-data --scenes 4 --views 8 --seed 9 --out data", "gen.txt");
  const int code = run_cli(d, "perturb-eval --data data --out pe", "stdout.txt");
  const auto kv = read_kv(d / "pe" / "table.kv");
  const std::vector<std::string> thetas{"0", "2.5", "5", "10"};
  std::string detail = "mean IoU by theta:";
  bool ok = code == 0 && fs::exists(d / "pe" / "table.txt");
  double prev = INFINITY;
  for (const auto& th : thetas) {
    const double v = kv_or_nan(kv, "theta_deg." + th + ".mean_iou");
    detail += " " + th + "->" + fmt("%.4f", v);
    ok = ok && !std::isnan(v) && v <= prev;
    prev = v;
  }
  return {ok, detail};
}

// --- 10 --------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto bytes = io::read_file_bytes(e.path());
    files[fs::relative(e.path(), root).string()] = std::string(bytes.begin(), bytes.end());
  }
  return files;
}

Outcome determinism() {
  const std::vector<std::string> commands{
      "gen-data --scenes 2 --views 3 --seed 11 --res 16 --img 32x32 --out data",
      "gradcheck --op all --trials 1 --seed 5 --out gradcheck",
      "visual-hull --data data --out hull",
      "plane-sweep --data data --out sweep --planes 40 --ref-views 1",
      "train-toy --data data --out voxel --iters 3 --config small.json --seed 2",
      "train-toy --data data --out gru --iters 2 --config small.json --fusion gru --seed 2",
      "train-toy --data data --out depth --iters 3 --config small.json --head depth --seed 2",
      "eval --data data --pred hull --out eval_hull",
      "eval --data data --pred sweep --out eval_sweep",
      "eval --data data --checkpoint voxel/checkpoint --out eval_voxel",
      "eval --data data --checkpoint depth/checkpoint --out eval_depth",
      "sweep-views --data data --out views --max-views 3",
      "perturb-eval --data data --out perturb --draws 2 --seed 4",
      "export-ply --data data --depth eval_depth/predictions --out ply",
  };
  const std::string small =
      R"({"image_width": 32, "image_height": 32, "grid_resolution": 16, "n_planes": 16,
          "encoder_channels": [4, 8, 8], "reasoner_channels": [8, 4], "gru_hidden": 4})";
  std::vector<std::map<std::string, std::string>> trees;
  int bad_exit = 0;
  for (const std::string threads : {"1", "4"}) {
    const fs::path dir = g_work / "c10" / ("threads_" + threads);
    fs::create_directories(dir);
    io::write_text_file(dir / "small.json", small);
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const std::string log = "stdout_" + std::to_string(i) + ".txt";
      if (run_cli(dir, commands[i], log, "OMP_NUM_THREADS=" + threads) != 0) ++bad_exit;
    }
    trees.push_back(snapshot(dir));
  }
  std::vector<std::string> differing;
  std::set<std::string> names;
  for (const auto& t : trees) {
    for (const auto& [k, v] : t) names.insert(k);
  }
  for (const auto& n : names) {
    if (!trees[0].count(n) || !trees[1].count(n) || trees[0].at(n) != trees[1].at(n)) {
      differing.push_back(n);
    }
  }
  std::string detail = std::to_string(commands.size()) + " commands, " +
                       std::to_string(names.size()) + " files compared, " +
                       std::to_string(differing.size()) + " differ, " +
                       std::to_string(bad_exit) + " nonzero exits";
  for (std::size_t i = 0; i < std::min<std::size_t>(differing.size(), 5); ++i) {
    detail += " [" + differing[i] + "]";
  }
  return {differing.empty() && bad_exit == 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  g_work = fs::temp_directory_path() / "lsm_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      selected.insert(std::atoi(a.c_str()));
    }
  }
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"adjointness", adjointness},
      {"epipolar consistency", epipolar_consistency},
      {"visual hull oracle", visual_hull_oracle},
      {"plane sweep accuracy", plane_sweep_accuracy},
      {"end-to-end learnability", learnability},
      {"depth pipeline sanity", depth_pipeline},
      {"metric unit suite", metric_units},
      {"pose-noise harness", pose_noise},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %2d %-26s %s  %s  (%.1f s)\n", n, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
