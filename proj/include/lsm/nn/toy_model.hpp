#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/dataset.hpp"
#include "lsm/fusion.hpp"
#include "lsm/nn/layers.hpp"
#include "lsm/nn/optim.hpp"

namespace lsm::nn {

struct ToyModelConfig {
  std::vector<int> encoder_channels{8, 16, 16};  // strides 2, 2, 1
  std::vector<int> reasoner_channels{16, 8};
  std::string fusion = "pointwise";  // pointwise | gru
  std::string pointwise_mode = "mean";  // mean | max
  int gru_hidden = 16;
  std::string head = "voxel";  // voxel | depth
  int n_planes = ops::kDefaultPlanes;
  int image_width = 64;
  int image_height = 64;
  int grid_resolution = 32;
  int views_per_step = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
  /// Encoder output stride relative to the input image.
  int feature_stride() const;
  nlohmann::json to_json() const;
  static ToyModelConfig from_json(const nlohmann::json& j);
};

/// Image encoder, unprojection with depth and ray-direction features, grid
/// fusion, a small 3D CNN and either a voxel-occupancy or a per-view depth head.
class ToyModel {
 public:
  explicit ToyModel(ToyModelConfig cfg);

  const ToyModelConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();

  /// Fused and reasoned grid G^o, [V, V, V, C].
  Var forward_grid(Tape& t, const data::SceneRecord& scene, std::span<const int> views);
  /// Occupancy probabilities [V, V, V].
  Var forward_voxel(Tape& t, const data::SceneRecord& scene, std::span<const int> views);
  /// Metric depth per listed view, each [H, W, 1].
  std::vector<Var> forward_depth(Tape& t, const data::SceneRecord& scene,
                                 std::span<const int> views);
  /// Head-specific training loss (BCE for voxel, masked L1 for depth).
  Var loss(Tape& t, const data::SceneRecord& scene, std::span<const int> views);

  FeatureGrid predict_occupancy(const data::SceneRecord& scene, std::span<const int> views);
  std::vector<FeatureMap> predict_depth(const data::SceneRecord& scene,
                                        std::span<const int> views);

  /// Directory with one float32 TensorFile per parameter plus manifest.json.
  void save_checkpoint(const std::filesystem::path& dir);
  void load_checkpoint(const std::filesystem::path& dir);

 private:
  struct Layer {
    Parameter kernel, bias, gain, shift;
    int stride = 1;
  };

  void check_scene(const data::SceneRecord& scene, std::span<const int> views) const;
  Var encode(Tape& t, const FeatureMap& image, Var* skip);
  Var conv_block(Tape& t, Var x, Layer& l, bool is3d);
  std::shared_ptr<const ops::UnprojectPlan> unproject_plan(const Camera& cam,
                                                           const VoxelGridSpec& spec);
  std::shared_ptr<const ops::ProjectPlan> project_plan(const Camera& cam,
                                                       const VoxelGridSpec& spec);

  ToyModelConfig cfg_;
  std::vector<Layer> encoder_;
  std::vector<Layer> reasoner_;
  fusion::GruCellParams gru_;
  VoxelHead voxel_head_;
  RayReduceHead ray_head_;
  Parameter refine_kernel_, refine_bias_;
  std::map<std::string, std::shared_ptr<const ops::UnprojectPlan>> unproject_cache_;
  std::map<std::string, std::shared_ptr<const ops::ProjectPlan>> project_cache_;
};

struct TrainResult {
  std::vector<double> loss_curve;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

using TrainProgress = std::function<void(int iter, double loss)>;

/// Adam training for `iters` steps. Each step draws a scene and a random
/// ordered subset of its views from the seeded stream. loss_curve[0] is the
/// initial eval loss and loss_curve[i] the batch loss of step i, measured
/// before its update.
TrainResult train_toy(ToyModel& model, std::span<const data::SceneRecord> scenes, int iters,
                      const TrainProgress& progress = {});

/// Mean loss over all scenes with their first views_per_step views.
double eval_loss(ToyModel& model, std::span<const data::SceneRecord> scenes);

}  // namespace lsm::nn
