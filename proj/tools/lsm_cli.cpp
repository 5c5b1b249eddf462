#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lsm/lsm.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

int finish(lsm_status status, lsm_report*& report) {
  if (report) {
    std::cout << lsm_report_text(report);
    lsm_report_free(report);
    report = nullptr;
  }
  if (status == LSM_OK) return kExitOk;
  std::cerr << "error (" << lsm_status_name(status) << "): " << lsm_last_error() << "\n";
  return kExitFailure;
}

bool parse_size(const std::string& s, int& h, int& w) {
  char x = 0;
  std::istringstream is(s);
  return (is >> h >> x >> w) && (x == 'x' || x == 'X') && is.peek() == EOF && h > 0 && w > 0;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view stereo toolkit: data generation, baselines, toy learning, evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // gen-data
  lsm_gen_data_options gen;
  lsm_gen_data_options_init(&gen);
  std::string gen_out, gen_img, gen_family;
  bool textureless = false;
  auto* c_gen = app.add_subcommand("gen-data", "Render a synthetic posed dataset");
  c_gen->add_option("--scenes", gen.scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  c_gen->add_option("--views", gen.views, "Views per scene")->required()->check(CLI::PositiveNumber);
  c_gen->add_option("--out", gen_out, "Output directory")->required();
  c_gen->add_option("--seed", gen.seed, "Random seed")->required();
  c_gen->add_option("--res", gen.resolution, "Voxel grid resolution")->check(CLI::PositiveNumber)->capture_default_str();
  c_gen->add_option("--img", gen_img, "Image size HxW (default 64x64)");
  c_gen->add_flag("--textureless", textureless, "Render flat-coloured surfaces");
  c_gen->add_option("--family", gen_family, "Only this family: sphere, box or composite");
  c_gen->add_option("--texture-frequency", gen.texture_frequency, "Texture noise frequency")->capture_default_str();
  c_gen->add_option("--light-jitter", gen.light_jitter_deg, "Per-view light jitter in degrees")->capture_default_str();

  // gradcheck
  lsm_gradcheck_options gc;
  lsm_gradcheck_options_init(&gc);
  std::string gc_op = "all", gc_out;
  bool no_adjoint = false;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare every VJP against finite differences");
  c_gc->add_option("--op", gc_op, "all|bilinear|unproject|project|gru|layers")
      ->check(CLI::IsMember({"all", "bilinear", "unproject", "project", "gru", "layers"}))
      ->capture_default_str();
  c_gc->add_option("--trials", gc.trials, "Random instances per op")->check(CLI::PositiveNumber)->capture_default_str();
  c_gc->add_option("--tol", gc.tol, "Max relative error")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_gc->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  c_gc->add_flag("--no-adjoint", no_adjoint, "Skip the dot-product tests");
  c_gc->add_option("--out", gc_out, "Optional output directory");

  // visual-hull
  lsm_visual_hull_options vh;
  lsm_visual_hull_options_init(&vh);
  std::string vh_data, vh_out;
  auto* c_vh = app.add_subcommand("visual-hull", "Carve silhouettes into voxel hulls");
  c_vh->add_option("--data", vh_data, "Dataset directory")->required();
  c_vh->add_option("--out", vh_out, "Output directory")->required();
  c_vh->add_option("--views", vh.views, "Views per scene (0 = all)")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_vh->add_option("--occupancy-fraction", vh.occupancy_fraction, "Fraction of views that must agree")->capture_default_str();
  c_vh->add_option("--threshold", vh.threshold, "IoU binarisation threshold")->capture_default_str();

  // plane-sweep
  lsm_plane_sweep_options ps;
  lsm_plane_sweep_options_init(&ps);
  std::string ps_data, ps_out;
  auto* c_ps = app.add_subcommand("plane-sweep", "ZNCC plane-sweep depth per reference view");
  c_ps->add_option("--data", ps_data, "Dataset directory")->required();
  c_ps->add_option("--out", ps_out, "Output directory")->required();
  c_ps->add_option("--planes", ps.planes, "Depth planes")->check(CLI::Range(2, 100000))->capture_default_str();
  c_ps->add_option("--window", ps.window, "Odd matching window size")->check(CLI::Range(3, 101))->capture_default_str();
  c_ps->add_option("--views", ps.views, "Views used per scene (0 = all)")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_ps->add_option("--ref-views", ps.ref_views, "Leading views used as reference (0 = all)")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_ps->add_option("--min-views", ps.min_views, "Views needed for a score")->check(CLI::PositiveNumber)->capture_default_str();

  // train-toy
  lsm_train_options tr;
  lsm_train_options_init(&tr);
  std::string tr_data, tr_out, tr_config, tr_head, tr_fusion;
  std::uint64_t tr_seed = 0;
  bool quiet = false;
  auto* c_tr = app.add_subcommand("train-toy", "Train the toy voxel or depth pipeline");
  c_tr->add_option("--data", tr_data, "Dataset directory")->required();
  c_tr->add_option("--out", tr_out, "Output directory")->required();
  c_tr->add_option("--iters", tr.iters, "Adam iterations")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_tr->add_option("--config", tr_config, "Model config JSON file");
  c_tr->add_option("--head", tr_head, "voxel|depth")->check(CLI::IsMember({"voxel", "depth"}));
  c_tr->add_option("--fusion", tr_fusion, "pointwise|gru")->check(CLI::IsMember({"pointwise", "gru"}));
  auto* seed_opt = c_tr->add_option("--seed", tr_seed, "Random seed");
  c_tr->add_flag("--quiet", quiet, "No progress output");

  // eval
  lsm_eval_options ev;
  lsm_eval_options_init(&ev);
  std::string ev_data, ev_out, ev_pred, ev_ckpt;
  double ev_threshold = 0.0;
  auto* c_ev = app.add_subcommand("eval", "Score voxel or depth predictions");
  c_ev->add_option("--data", ev_data, "Dataset directory")->required();
  c_ev->add_option("--out", ev_out, "Output directory")->required();
  auto* pred_opt = c_ev->add_option("--pred", ev_pred, "Prediction directory");
  auto* ckpt_opt = c_ev->add_option("--checkpoint", ev_ckpt, "Toy-model checkpoint directory");
  pred_opt->excludes(ckpt_opt);
  auto* thr_opt = c_ev->add_option("--threshold", ev_threshold, "IoU threshold (default by method)");
  c_ev->add_option("--views", ev.views, "Views fed to a checkpoint (0 = its default)")->check(CLI::NonNegativeNumber);

  // sweep-views
  lsm_sweep_views_options sv;
  lsm_sweep_views_options_init(&sv);
  std::string sv_data, sv_out, sv_method = "visual-hull";
  double sv_threshold = 0.0;
  auto* c_sv = app.add_subcommand("sweep-views", "Mean IoU against number of views");
  c_sv->add_option("--data", sv_data, "Dataset directory")->required();
  c_sv->add_option("--out", sv_out, "Output directory")->required();
  c_sv->add_option("--method", sv_method, "visual-hull or a checkpoint directory")->capture_default_str();
  c_sv->add_option("--max-views", sv.max_views, "Largest view count")->check(CLI::PositiveNumber)->capture_default_str();
  auto* sv_thr_opt = c_sv->add_option("--threshold", sv_threshold, "IoU threshold (default by method)");

  // perturb-eval
  lsm_perturb_options pe;
  lsm_perturb_options_init(&pe);
  std::string pe_data, pe_out;
  std::vector<double> thetas{0.0, 2.5, 5.0, 10.0};
  auto* c_pe = app.add_subcommand("perturb-eval", "Visual-hull IoU under camera pose noise");
  c_pe->add_option("--data", pe_data, "Dataset directory")->required();
  c_pe->add_option("--out", pe_out, "Output directory")->required();
  c_pe->add_option("--thetas", thetas, "Max perturbation angles in degrees")->delimiter(',')->capture_default_str();
  c_pe->add_option("--views", pe.views, "Views per scene (0 = all)")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_pe->add_option("--draws", pe.draws, "Perturbation draws per scene")->check(CLI::PositiveNumber)->capture_default_str();
  c_pe->add_option("--seed", pe.seed, "Random seed")->capture_default_str();
  c_pe->add_option("--threshold", pe.threshold, "IoU threshold")->capture_default_str();

  // export-ply
  std::string ex_data, ex_depth, ex_out;
  auto* c_ex = app.add_subcommand("export-ply", "Unproject depth maps into PLY point clouds");
  c_ex->add_option("--data", ex_data, "Dataset directory (cameras)")->required();
  c_ex->add_option("--depth", ex_depth, "Directory of predicted depth maps")->required();
  c_ex->add_option("--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
    if (c_gen->parsed() && !gen_img.empty() && !parse_size(gen_img, gen.height, gen.width)) {
      throw CLI::ValidationError("--img", "expected HxW, e.g. 64x64");
    }
    if (c_ev->parsed() && pred_opt->count() + ckpt_opt->count() != 1) {
      throw CLI::RequiredError("eval needs --pred or --checkpoint");
    }
    if (c_tr->parsed() && !tr_config.empty()) tr_config = read_file(tr_config);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  lsm_report* report = nullptr;
  if (c_gen->parsed()) {
    gen.textured = textureless ? 0 : 1;
    if (!gen_family.empty()) gen.family = gen_family.c_str();
    return finish(lsm_gen_data(&gen, gen_out.c_str()), report);
  }
  if (c_gc->parsed()) {
    gc.op = gc_op.c_str();
    gc.adjoint = no_adjoint ? 0 : 1;
    if (!gc_out.empty()) gc.out_dir = gc_out.c_str();
    const lsm_status st = lsm_gradcheck(&gc, &report);
    return finish(st, report);
  }
  if (c_vh->parsed()) {
    const lsm_status st = lsm_visual_hull(vh_data.c_str(), vh_out.c_str(), &vh, &report);
    return finish(st, report);
  }
  if (c_ps->parsed()) {
    const lsm_status st = lsm_plane_sweep(ps_data.c_str(), ps_out.c_str(), &ps, &report);
    return finish(st, report);
  }
  if (c_tr->parsed()) {
    if (!tr_config.empty()) tr.config_json = tr_config.c_str();
    if (!tr_head.empty()) tr.head = tr_head.c_str();
    if (!tr_fusion.empty()) tr.fusion = tr_fusion.c_str();
    if (seed_opt->count()) {
      tr.has_seed = 1;
      tr.seed = tr_seed;
    }
    tr.verbose = quiet ? 0 : 1;
    const lsm_status st = lsm_train_toy(tr_data.c_str(), tr_out.c_str(), &tr, &report);
    return finish(st, report);
  }
  if (c_ev->parsed()) {
    if (!ev_pred.empty()) ev.pred_dir = ev_pred.c_str();
    if (!ev_ckpt.empty()) ev.checkpoint = ev_ckpt.c_str();
    if (thr_opt->count()) {
      ev.has_threshold = 1;
      ev.threshold = ev_threshold;
    }
    const lsm_status st = lsm_eval(ev_data.c_str(), ev_out.c_str(), &ev, &report);
    return finish(st, report);
  }
  if (c_sv->parsed()) {
    sv.method = sv_method.c_str();
    if (sv_thr_opt->count()) {
      sv.has_threshold = 1;
      sv.threshold = sv_threshold;
    }
    const lsm_status st = lsm_sweep_views(sv_data.c_str(), sv_out.c_str(), &sv, &report);
    return finish(st, report);
  }
  if (c_pe->parsed()) {
    pe.thetas_deg = thetas.data();
    pe.theta_count = thetas.size();
    const lsm_status st = lsm_perturb_eval(pe_data.c_str(), pe_out.c_str(), &pe, &report);
    return finish(st, report);
  }
  if (c_ex->parsed()) {
    const lsm_status st = lsm_export_ply(ex_data.c_str(), ex_depth.c_str(), ex_out.c_str(), &report);
    return finish(st, report);
  }
  return kExitUsage;
}
