#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "lsm/tensorio.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "lsm_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

/// Runs the CLI in the work directory; returns its exit code.
int run_cli(const std::string& args, std::string* out = nullptr) {
  const fs::path log = work() / "last_output.txt";
  const std::string cmd = "cd '" + work().string() + "' && '" LSM_CLI_PATH "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) *out = lsm::io::read_text_file(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || lsm::io::read_file_bytes(e.path()) != lsm::io::read_file_bytes(other)) {
      return false;
    }
    ++n;
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) n -= e.is_regular_file() ? 1 : 0;
  return n == 0;
}

nlohmann::json run_config(const std::string& dir) {
  return nlohmann::json::parse(lsm::io::read_text_file(work() / dir / "run_config.json"));
}

void ensure_data() {
  static bool done = false;
  if (done) return;
  REQUIRE(run_cli("gen-data --scenes 2 --views 3 --seed 3 --res 16 --img 32x32 --out data") == 0);
  done = true;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data is reproducible and validates its flags") {
  REQUIRE(run_cli("gen-data --scenes 1 --views 4 --seed 7 --out g1") == 0);
  REQUIRE(run_cli("gen-data --scenes 1 --views 4 --seed 7 --out g2") == 0);
  // run_config.json records the output path, everything else must match.
  fs::remove(work() / "g1" / "run_config.json");
  fs::remove(work() / "g2" / "run_config.json");
  CHECK(same_tree(work() / "g1", work() / "g2"));

  std::string msg;
  CHECK(run_cli("gen-data --scenes 1 --views 4 --seed 7", &msg) == 2);
  CHECK(msg.find("--out") != std::string::npos);
  CHECK(run_cli("gen-data --scenes 1 --views 0 --seed 7 --out g3") == 2);
  CHECK(run_cli("gen-data --scenes 1 --views 2 --seed 7 --img 10by10 --out g3") == 2);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("gradcheck") {
  std::string out;
  CHECK(run_cli("gradcheck --op bilinear", &out) == 0);
  CHECK(out.find("bilinear") != std::string::npos);
  CHECK(out.find("conv2d") == std::string::npos);
  CHECK(run_cli("gradcheck --op bilinear --tol 0", &out) == 1);
  CHECK(out.find("FAIL") != std::string::npos);
  CHECK(run_cli("gradcheck --op teapot") == 2);
  CHECK(run_cli("gradcheck --op layers --trials 1 --out gc") == 0);
  CHECK(fs::exists(work() / "gc" / "gradcheck.txt"));
}

TEST_CASE("baselines use the documented defaults") {
  ensure_data();
  std::string out;
  REQUIRE(run_cli("visual-hull --data data --out vh", &out) == 0);
  CHECK(out.find("threshold 0.75") != std::string::npos);
  CHECK(run_config("vh")["config"]["threshold"] == 0.75);
  CHECK(fs::exists(work() / "vh" / "report.kv"));

  REQUIRE(run_cli("plane-sweep --data data --out ps --ref-views 1 --planes 40", &out) == 0);
  CHECK(run_config("ps")["config"]["window"] == 5);
  CHECK(fs::exists(work() / "ps" / "scene_0000" / "view_0000.depth.lsmt"));
  CHECK_FALSE(fs::exists(work() / "ps" / "scene_0000" / "view_0001.depth.lsmt"));
  REQUIRE(run_cli("plane-sweep --data data --out ps_default --ref-views 1 --views 2") == 0);
  CHECK(run_config("ps_default")["config"]["planes"] == 300);
  CHECK(run_cli("plane-sweep --data data --out ps2 --window 4") != 0);
  CHECK(run_cli("visual-hull --data missing --out vh2") == 1);

  REQUIRE(run_cli("eval --data data --pred vh --out ev") == 0);
  CHECK(run_cli("eval --data data --out ev2") == 2);
  REQUIRE(run_cli("eval --data data --pred ps --out ev_depth") == 0);
  REQUIRE(run_cli("export-ply --data data --depth ps --out ply") == 0);
  CHECK(fs::exists(work() / "ply" / "scene_0000.ply"));
  REQUIRE(run_cli("sweep-views --data data --out sv --max-views 3") == 0);
  REQUIRE(run_cli("perturb-eval --data data --out pe --draws 1 --thetas 0,5") == 0);
  CHECK(lsm::io::read_text_file(work() / "pe" / "table.kv").find("theta_deg.5.mean_iou=") !=
        std::string::npos);
}

TEST_CASE("train-toy with zero iterations emits the initial checkpoint") {
  ensure_data();
  std::ofstream(work() / "tiny.json")
      << R"({"image_width": 32, "image_height": 32, "grid_resolution": 16,
             "encoder_channels": [3, 4, 4], "reasoner_channels": [4, 2]})";
  REQUIRE(run_cli("train-toy --data data --out t0 --iters 0 --config tiny.json --quiet") == 0);
  CHECK(fs::exists(work() / "t0" / "checkpoint" / "manifest.json"));
  const auto curve = lsm::io::read_text_file(work() / "t0" / "loss_curve.txt");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 1);
  REQUIRE(run_cli("eval --data data --checkpoint t0/checkpoint --out t0_eval") == 0);
  CHECK(run_cli("train-toy --data data --out t1 --config missing.json") == 2);
  CHECK(run_cli("train-toy --data data --out t1 --head mesh") == 2);
}

}
