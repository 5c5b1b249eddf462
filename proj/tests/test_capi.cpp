#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "lsm/lsm.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lsm_capi_" + name);
  fs::remove_all(p);
  return p;
}

double get(const lsm_report* r, const char* key) {
  double v = -1.0;
  REQUIRE(lsm_report_get(r, key, &v) == LSM_OK);
  return v;
}

fs::path tiny_dataset() {
  static const fs::path dir = [] {
    const auto d = fresh("data");
    lsm_gen_data_options o;
    lsm_gen_data_options_init(&o);
    o.scenes = 2;
    o.views = 3;
    o.resolution = 16;
    o.width = o.height = 32;
    o.seed = 5;
    REQUIRE(lsm_gen_data(&o, d.string().c_str()) == LSM_OK);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_SUITE("capi") {

TEST_CASE("status names and defaults") {
  CHECK(std::string(lsm_status_name(LSM_OK)) == "ok");
  lsm_plane_sweep_options ps;
  lsm_plane_sweep_options_init(&ps);
  CHECK(ps.planes == 300);
  CHECK(ps.window == 5);
  lsm_visual_hull_options vh;
  lsm_visual_hull_options_init(&vh);
  CHECK(vh.threshold == 0.75);
  lsm_gradcheck_options gc;
  lsm_gradcheck_options_init(&gc);
  CHECK(gc.tol == 1e-4);
}

TEST_CASE("invalid arguments report a message") {
  lsm_gen_data_options o;
  lsm_gen_data_options_init(&o);
  o.views = 0;
  CHECK(lsm_gen_data(&o, fresh("bad").string().c_str()) == LSM_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(lsm_last_error()) > 0);
  CHECK(lsm_gen_data(nullptr, "x") == LSM_ERR_INVALID_ARGUMENT);

  lsm_dataset* ds = nullptr;
  CHECK(lsm_dataset_open("/nonexistent/lsm", &ds) == LSM_ERR_IO);
  CHECK(ds == nullptr);
  lsm_tensor* t = nullptr;
  CHECK(lsm_tensor_read("/nonexistent/x.lsmt", &t) == LSM_ERR_IO);
}

TEST_CASE("dataset and tensor handles") {
  const auto root = tiny_dataset();
  lsm_dataset* ds = nullptr;
  REQUIRE(lsm_dataset_open(root.string().c_str(), &ds) == LSM_OK);
  CHECK(lsm_dataset_scene_count(ds) == 2);
  CHECK(std::string(lsm_dataset_scene_name(ds, 1)) == "scene_0001");
  CHECK(lsm_dataset_view_count(ds, 0) == 3);
  lsm_dataset_close(ds);

  lsm_tensor* t = nullptr;
  REQUIRE(lsm_tensor_read((root / "scene_0000" / "occupancy.lsmt").string().c_str(), &t) == LSM_OK);
  CHECK(lsm_tensor_rank(t) == 3);
  CHECK(lsm_tensor_dim(t, 0) == 16);
  CHECK(lsm_tensor_size(t) == 16 * 16 * 16);
  double occupied = 0.0;
  for (size_t i = 0; i < lsm_tensor_size(t); ++i) occupied += lsm_tensor_data(t)[i];
  CHECK(occupied > 0.0);
  lsm_tensor_free(t);
}

TEST_CASE("gradcheck through the C API") {
  lsm_gradcheck_options o;
  lsm_gradcheck_options_init(&o);
  o.op = "bilinear";
  lsm_report* r = nullptr;
  REQUIRE(lsm_gradcheck(&o, &r) == LSM_OK);
  CHECK(get(r, "passed") == 1.0);
  CHECK(get(r, "op.bilinear.max_rel_error") < 1e-4);
  double unused = 0.0;
  CHECK(lsm_report_get(r, "op.conv2d.max_rel_error", &unused) == LSM_ERR_INVALID_ARGUMENT);
  lsm_report_free(r);

  o.tol = 0.0;
  r = nullptr;
  CHECK(lsm_gradcheck(&o, &r) == LSM_ERR_CHECK_FAILED);
  REQUIRE(r != nullptr);
  CHECK(get(r, "passed") == 0.0);
  lsm_report_free(r);

  o.op = "nonsense";
  CHECK(lsm_gradcheck(&o, nullptr) == LSM_ERR_INVALID_ARGUMENT);
}

TEST_CASE("visual hull, eval and sweeps") {
  const auto root = tiny_dataset();
  const auto out = fresh("vh");
  lsm_visual_hull_options vh;
  lsm_visual_hull_options_init(&vh);
  lsm_report* r = nullptr;
  REQUIRE(lsm_visual_hull(root.string().c_str(), out.string().c_str(), &vh, &r) == LSM_OK);
  const double overall = get(r, "overall.iou");
  CHECK(overall > 0.0);
  CHECK(overall <= 1.0);
  CHECK(std::string(lsm_report_text(r)).find("overall") != std::string::npos);
  lsm_report_free(r);
  CHECK(fs::exists(out / "scene_0000" / "occupancy.lsmt"));

  lsm_eval_options ev;
  lsm_eval_options_init(&ev);
  const std::string pred = out.string();
  ev.pred_dir = pred.c_str();
  REQUIRE(lsm_eval(root.string().c_str(), fresh("ev").string().c_str(), &ev, &r) == LSM_OK);
  CHECK(get(r, "overall.iou") == doctest::Approx(overall));
  CHECK(get(r, "threshold") == 0.75);
  lsm_report_free(r);

  lsm_eval_options both;
  lsm_eval_options_init(&both);
  CHECK(lsm_eval(root.string().c_str(), fresh("ev2").string().c_str(), &both, nullptr) ==
        LSM_ERR_INVALID_ARGUMENT);

  lsm_sweep_views_options sv;
  lsm_sweep_views_options_init(&sv);
  sv.max_views = 3;
  REQUIRE(lsm_sweep_views(root.string().c_str(), fresh("sv").string().c_str(), &sv, &r) == LSM_OK);
  CHECK(get(r, "views.3.mean_iou") >= get(r, "views.1.mean_iou"));
  lsm_report_free(r);

  lsm_perturb_options pe;
  lsm_perturb_options_init(&pe);
  pe.draws = 1;
  REQUIRE(lsm_perturb_eval(root.string().c_str(), fresh("pe").string().c_str(), &pe, &r) == LSM_OK);
  CHECK(get(r, "theta_deg.10.mean_iou") > 0.0);
  lsm_report_free(r);
}

TEST_CASE("train with zero iterations writes the initial checkpoint") {
  const auto root = tiny_dataset();
  const auto out = fresh("train");
  lsm_train_options o;
  lsm_train_options_init(&o);
  o.iters = 0;
  o.verbose = 0;
  o.config_json = R"({"image_width": 32, "image_height": 32, "grid_resolution": 16,
                      "encoder_channels": [3, 4, 4], "reasoner_channels": [4, 2]})";
  lsm_report* r = nullptr;
  REQUIRE(lsm_train_toy(root.string().c_str(), out.string().c_str(), &o, &r) == LSM_OK);
  CHECK(get(r, "initial_eval_loss") == get(r, "final_eval_loss"));
  lsm_report_free(r);
  CHECK(fs::exists(out / "checkpoint" / "manifest.json"));

  o.config_json = "{not json";
  CHECK(lsm_train_toy(root.string().c_str(), fresh("train2").string().c_str(), &o, nullptr) ==
        LSM_ERR_PARSE);
}

}
