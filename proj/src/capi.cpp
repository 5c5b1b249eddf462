#include "lsm/lsm.h"

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "lsm/commands.hpp"
#include "lsm/error.hpp"
#include "lsm/tensorio.hpp"

struct lsm_report {
  std::string text;
  std::string kv;
};

struct lsm_dataset {
  std::vector<lsm::data::SceneRecord> scenes;
};

struct lsm_tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

namespace {

thread_local std::string g_last_error;

template <class F>
lsm_status guarded(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const lsm::ParseError& e) {
    g_last_error = e.what();
    return LSM_ERR_PARSE;
  } catch (const lsm::IoError& e) {
    g_last_error = e.what();
    return LSM_ERR_IO;
  } catch (const lsm::InvalidArgument& e) {
    g_last_error = e.what();
    return LSM_ERR_INVALID_ARGUMENT;
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return LSM_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LSM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LSM_ERR_INTERNAL;
  }
}

lsm_status fail(lsm_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

void emit(lsm_report** out, std::string text, std::string kv) {
  if (!out) return;
  *out = new lsm_report{std::move(text), std::move(kv)};
}

std::string kv_line(const std::string& key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "=%.17g\n", v);
  return key + buf;
}

bool nonempty(const char* s) { return s && *s; }

}  // namespace

extern "C" {

const char* lsm_last_error(void) { return g_last_error.c_str(); }

const char* lsm_status_name(lsm_status status) {
  switch (status) {
    case LSM_OK: return "ok";
    case LSM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case LSM_ERR_IO: return "i/o error";
    case LSM_ERR_PARSE: return "parse error";
    case LSM_ERR_CHECK_FAILED: return "check failed";
    case LSM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* lsm_report_text(const lsm_report* r) { return r ? r->text.c_str() : ""; }
const char* lsm_report_key_values(const lsm_report* r) { return r ? r->kv.c_str() : ""; }

lsm_status lsm_report_get(const lsm_report* r, const char* key, double* value) {
  if (!r || !key || !value) return fail(LSM_ERR_INVALID_ARGUMENT, "report lookup: null argument");
  std::istringstream is(r->kv);
  std::string line;
  const std::string prefix = std::string(key) + "=";
  while (std::getline(is, line)) {
    if (line.rfind(prefix, 0) == 0) {
      char* end = nullptr;
      const std::string rest = line.substr(prefix.size());
      const double v = std::strtod(rest.c_str(), &end);
      if (end == rest.c_str()) return fail(LSM_ERR_PARSE, std::string("report: ") + key + " is not numeric");
      *value = v;
      return LSM_OK;
    }
  }
  return fail(LSM_ERR_INVALID_ARGUMENT, std::string("report: no key ") + key);
}

void lsm_report_free(lsm_report* r) { delete r; }

lsm_status lsm_dataset_open(const char* path, lsm_dataset** out) {
  if (!path || !out) return fail(LSM_ERR_INVALID_ARGUMENT, "dataset open: null argument");
  return guarded([&] {
    auto ds = std::make_unique<lsm_dataset>();
    for (const auto& dir : lsm::data::list_scenes(path)) {
      ds->scenes.push_back(lsm::data::load_scene(dir));
    }
    *out = ds.release();
    return LSM_OK;
  });
}

size_t lsm_dataset_scene_count(const lsm_dataset* d) { return d ? d->scenes.size() : 0; }

const char* lsm_dataset_scene_name(const lsm_dataset* d, size_t i) {
  return d && i < d->scenes.size() ? d->scenes[i].name.c_str() : nullptr;
}

size_t lsm_dataset_view_count(const lsm_dataset* d, size_t i) {
  return d && i < d->scenes.size() ? d->scenes[i].views.size() : 0;
}

void lsm_dataset_close(lsm_dataset* d) { delete d; }

lsm_status lsm_tensor_read(const char* path, lsm_tensor** out) {
  if (!path || !out) return fail(LSM_ERR_INVALID_ARGUMENT, "tensor read: null argument");
  return guarded([&] {
    const auto tf = lsm::io::read_tensor(path);
    auto t = std::make_unique<lsm_tensor>();
    t->dims = tf.dims;
    if (tf.dtype == lsm::io::DType::kFloat32) {
      t->values.assign(tf.f32.begin(), tf.f32.end());
    } else {
      t->values.assign(tf.u8.begin(), tf.u8.end());
    }
    *out = t.release();
    return LSM_OK;
  });
}

size_t lsm_tensor_rank(const lsm_tensor* t) { return t ? t->dims.size() : 0; }
uint32_t lsm_tensor_dim(const lsm_tensor* t, size_t axis) {
  return t && axis < t->dims.size() ? t->dims[axis] : 0;
}
size_t lsm_tensor_size(const lsm_tensor* t) { return t ? t->values.size() : 0; }
const double* lsm_tensor_data(const lsm_tensor* t) { return t ? t->values.data() : nullptr; }
void lsm_tensor_free(lsm_tensor* t) { delete t; }

void lsm_gen_data_options_init(lsm_gen_data_options* o) {
  if (!o) return;
  const lsm::synth::DatasetOptions d;
  o->scenes = d.scenes;
  o->views = d.views;
  o->resolution = d.resolution;
  o->width = d.width;
  o->height = d.height;
  o->textured = d.textured ? 1 : 0;
  o->texture_frequency = d.texture_frequency;
  o->light_jitter_deg = d.light_jitter_deg;
  o->family = nullptr;
  o->seed = d.seed;
}

lsm_status lsm_gen_data(const lsm_gen_data_options* o, const char* out_dir) {
  if (!o || !nonempty(out_dir)) return fail(LSM_ERR_INVALID_ARGUMENT, "gen-data: missing output directory");
  return guarded([&] {
    lsm::synth::DatasetOptions d;
    d.scenes = o->scenes;
    d.views = o->views;
    d.resolution = o->resolution;
    d.width = o->width;
    d.height = o->height;
    d.textured = o->textured != 0;
    d.texture_frequency = o->texture_frequency;
    d.light_jitter_deg = o->light_jitter_deg;
    d.family = o->family ? o->family : "";
    d.seed = o->seed;
    lsm::cmd::gen_data(d, out_dir);
    return LSM_OK;
  });
}

void lsm_gradcheck_options_init(lsm_gradcheck_options* o) {
  if (!o) return;
  const lsm::cmd::GradcheckArgs a;
  o->op = "all";
  o->trials = a.trials;
  o->tol = a.tol;
  o->seed = a.seed;
  o->adjoint = a.adjoint ? 1 : 0;
  o->out_dir = nullptr;
}

lsm_status lsm_gradcheck(const lsm_gradcheck_options* o, lsm_report** report) {
  if (!o) return fail(LSM_ERR_INVALID_ARGUMENT, "gradcheck: null options");
  return guarded([&] {
    lsm::cmd::GradcheckArgs a;
    a.op = nonempty(o->op) ? o->op : "all";
    a.trials = o->trials;
    a.tol = o->tol;
    a.seed = o->seed;
    a.adjoint = o->adjoint != 0;
    if (nonempty(o->out_dir)) a.out = o->out_dir;
    const auto g = lsm::cmd::gradcheck(a);
    emit(report, g.text, g.kv);
    if (!g.passed) {
      g_last_error = "gradcheck: errors above tolerance";
      return LSM_ERR_CHECK_FAILED;
    }
    return LSM_OK;
  });
}

void lsm_visual_hull_options_init(lsm_visual_hull_options* o) {
  if (!o) return;
  const lsm::cmd::VisualHullArgs a;
  o->views = a.views;
  o->occupancy_fraction = a.occupancy_fraction;
  o->threshold = a.threshold;
}

lsm_status lsm_visual_hull(const char* data_dir, const char* out_dir,
                           const lsm_visual_hull_options* o, lsm_report** report) {
  if (!o || !nonempty(data_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "visual-hull: missing data or output directory");
  }
  return guarded([&] {
    lsm::cmd::VisualHullArgs a;
    a.data = data_dir;
    a.out = out_dir;
    a.views = o->views;
    a.occupancy_fraction = o->occupancy_fraction;
    a.threshold = o->threshold;
    const auto r = lsm::cmd::visual_hull(a);
    emit(report, r.to_text(), r.to_key_value());
    return LSM_OK;
  });
}

void lsm_plane_sweep_options_init(lsm_plane_sweep_options* o) {
  if (!o) return;
  const lsm::cmd::PlaneSweepArgs a;
  o->planes = a.planes;
  o->window = a.window;
  o->views = a.views;
  o->ref_views = a.ref_views;
  o->min_views = a.min_views;
}

lsm_status lsm_plane_sweep(const char* data_dir, const char* out_dir,
                           const lsm_plane_sweep_options* o, lsm_report** report) {
  if (!o || !nonempty(data_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "plane-sweep: missing data or output directory");
  }
  return guarded([&] {
    lsm::cmd::PlaneSweepArgs a;
    a.data = data_dir;
    a.out = out_dir;
    a.planes = o->planes;
    a.window = o->window;
    a.views = o->views;
    a.ref_views = o->ref_views;
    a.min_views = o->min_views;
    const auto r = lsm::cmd::plane_sweep(a);
    emit(report, r.report.to_text(),
         r.report.to_key_value() + kv_line("within_two_spacings", r.within_two_spacings) +
             kv_line("invalid_fraction", r.invalid_fraction));
    return LSM_OK;
  });
}

void lsm_train_options_init(lsm_train_options* o) {
  if (!o) return;
  o->config_json = nullptr;
  o->head = nullptr;
  o->fusion = nullptr;
  o->iters = lsm::cmd::TrainArgs{}.iters;
  o->has_seed = 0;
  o->seed = 0;
  o->verbose = 0;
}

lsm_status lsm_train_toy(const char* data_dir, const char* out_dir, const lsm_train_options* o,
                         lsm_report** report) {
  if (!o || !nonempty(data_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "train-toy: missing data or output directory");
  }
  return guarded([&] {
    lsm::cmd::TrainArgs a;
    a.data = data_dir;
    a.out = out_dir;
    a.iters = o->iters;
    a.verbose = o->verbose != 0;
    nlohmann::json cfg = nonempty(o->config_json) ? nlohmann::json::parse(o->config_json)
                                                   : nlohmann::json::object();
    if (nonempty(o->head)) cfg["head"] = o->head;
    if (nonempty(o->fusion)) cfg["fusion"] = o->fusion;
    if (o->has_seed) cfg["seed"] = o->seed;
    a.config = lsm::nn::ToyModelConfig::from_json(cfg);
    const auto r = lsm::cmd::train_toy(a);
    char text[256];
    std::snprintf(text, sizeof text, "initial loss %.6f\nfinal loss %.6f\nratio %.4f\n",
                  r.initial_eval_loss, r.final_eval_loss, r.final_eval_loss / r.initial_eval_loss);
    emit(report, text,
         kv_line("initial_eval_loss", r.initial_eval_loss) +
             kv_line("final_eval_loss", r.final_eval_loss) +
             kv_line("ratio", r.final_eval_loss / r.initial_eval_loss));
    return LSM_OK;
  });
}

void lsm_eval_options_init(lsm_eval_options* o) {
  if (!o) return;
  o->pred_dir = nullptr;
  o->checkpoint = nullptr;
  o->has_threshold = 0;
  o->threshold = 0.0;
  o->views = 0;
}

lsm_status lsm_eval(const char* data_dir, const char* out_dir, const lsm_eval_options* o,
                    lsm_report** report) {
  if (!o || !nonempty(data_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "eval: missing data or output directory");
  }
  return guarded([&] {
    lsm::cmd::EvalArgs a;
    a.data = data_dir;
    a.out = out_dir;
    if (nonempty(o->pred_dir)) a.pred = o->pred_dir;
    if (nonempty(o->checkpoint)) a.checkpoint = o->checkpoint;
    if (o->has_threshold) a.threshold = o->threshold;
    a.views = o->views;
    const auto r = lsm::cmd::evaluate(a);
    if (r.iou) emit(report, r.iou->to_text(), r.iou->to_key_value());
    if (r.depth) emit(report, r.depth->to_text(), r.depth->to_key_value());
    return LSM_OK;
  });
}

void lsm_sweep_views_options_init(lsm_sweep_views_options* o) {
  if (!o) return;
  o->method = "visual-hull";
  o->max_views = 8;
  o->has_threshold = 0;
  o->threshold = 0.0;
}

lsm_status lsm_sweep_views(const char* data_dir, const char* out_dir,
                           const lsm_sweep_views_options* o, lsm_report** report) {
  if (!o || !nonempty(data_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "sweep-views: missing data or output directory");
  }
  return guarded([&] {
    lsm::cmd::SweepViewsArgs a;
    a.data = data_dir;
    a.out = out_dir;
    a.method = nonempty(o->method) ? o->method : "visual-hull";
    a.max_views = o->max_views;
    if (o->has_threshold) a.threshold = o->threshold;
    const auto t = lsm::cmd::sweep_views(a);
    emit(report, t.to_text(), t.to_key_value());
    return LSM_OK;
  });
}

void lsm_perturb_options_init(lsm_perturb_options* o) {
  if (!o) return;
  const lsm::cmd::PerturbArgs a;
  o->thetas_deg = nullptr;
  o->theta_count = 0;
  o->views = a.views;
  o->draws = a.draws;
  o->seed = a.seed;
  o->threshold = a.threshold;
}

lsm_status lsm_perturb_eval(const char* data_dir, const char* out_dir,
                            const lsm_perturb_options* o, lsm_report** report) {
  if (!o || !nonempty(data_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "perturb-eval: missing data or output directory");
  }
  if (o->theta_count > 0 && !o->thetas_deg) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "perturb-eval: null angle list");
  }
  return guarded([&] {
    lsm::cmd::PerturbArgs a;
    a.data = data_dir;
    a.out = out_dir;
    if (o->theta_count > 0) a.thetas.assign(o->thetas_deg, o->thetas_deg + o->theta_count);
    a.views = o->views;
    a.draws = o->draws;
    a.seed = o->seed;
    a.threshold = o->threshold;
    const auto t = lsm::cmd::perturb_eval(a);
    emit(report, t.to_text(), t.to_key_value());
    return LSM_OK;
  });
}

lsm_status lsm_export_ply(const char* data_dir, const char* depth_dir, const char* out_dir,
                          lsm_report** report) {
  if (!nonempty(data_dir) || !nonempty(depth_dir) || !nonempty(out_dir)) {
    return fail(LSM_ERR_INVALID_ARGUMENT, "export-ply: missing data, depth or output directory");
  }
  return guarded([&] {
    lsm::cmd::ExportPlyArgs a;
    a.data = data_dir;
    a.depth = depth_dir;
    a.out = out_dir;
    const auto r = lsm::cmd::export_ply(a);
    char text[128];
    std::snprintf(text, sizeof text, "points %zu\nmedian |sdf| %.5f\n", r.points, r.median_abs_sdf);
    emit(report, text,
         kv_line("points", double(r.points)) + kv_line("median_abs_sdf", r.median_abs_sdf));
    return LSM_OK;
  });
}

}  // extern "C"
