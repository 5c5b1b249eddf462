#pragma once

#include <memory>
#include <vector>

#include "lsm/diffops.hpp"
#include "lsm/nn/tape.hpp"

namespace lsm::nn {

enum class Padding { kSame, kValid };

// Spatial layers use channel-last layouts:
//   2D  x [H, W, Cin],     kernel [k, k, Cin, Cout]
//   3D  x [D, H, W, Cin],  kernel [k, k, k, Cin, Cout]
// bias [Cout]. Cross-correlation; `same` pads k/2 zeros before and after.
Var conv2d(Tape& t, Var x, Var kernel, Var bias, int stride = 1,
           Padding pad = Padding::kSame);
Var conv3d(Tape& t, Var x, Var kernel, Var bias, int stride = 1,
           Padding pad = Padding::kSame);

inline constexpr double kNormEps = 1e-5;

/// Per-channel normalization over all positions, then gain/shift [C].
Var instance_norm(Tape& t, Var x, Var gain, Var shift, double eps = kNormEps);
/// Per-position normalization over the channel dimension, then gain/shift [C].
Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps = kNormEps);

Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
/// scale * x + offset, elementwise with scalar constants.
Var affine(Tape& t, Var x, double scale, double offset);
/// Adds a per-channel vector [C] to every position.
Var add_channel_bias(Tape& t, Var x, Var bias);
Var concat_channels(Tape& t, const std::vector<Var>& xs);
/// Nearest-neighbour upsampling of [H, W, C] by an integer factor.
Var upsample_nearest2d(Tape& t, Var x, int factor);
Var sum(Tape& t, Var x);
/// Sum of x * weights (weights constant) - handy for adjoint tests.
Var dot_const(Tape& t, Var x, const Tensor& weights);

/// Elementwise mean / max across equally shaped inputs. Max routes the
/// gradient to the first maximal input.
Var mean_of(Tape& t, const std::vector<Var>& xs);
Var max_of(Tape& t, const std::vector<Var>& xs);

/// [.., 2] logits -> [..] probability of channel 1 under a 2-way softmax.
Var softmax2_occupancy(Tape& t, Var logits);

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross entropy; p is clamped to [1e-7, 1 - 1e-7].
Var bce_loss(Tape& t, Var p, const Tensor& target);
/// Mean |pred - gt| over positions where mask != 0; zero subgradient at ties.
Var l1_loss(Tape& t, Var pred, const Tensor& gt, const Tensor& mask);

/// Differentiable unprojection of an [H, W, C] map into a [V, V, V, C + extra]
/// grid through a precomputed plan. Gradient flows to the map only.
Var unproject(Tape& t, Var map, std::shared_ptr<const ops::UnprojectPlan> plan);
/// Differentiable projection of a [V, V, V, C] grid into [H, W, n_planes * C].
Var project(Tape& t, Var grid, std::shared_ptr<const ops::ProjectPlan> plan);

/// 1x1 convolution stack along rays: halves the channel count each layer
/// (ReLU between layers) and ends with a single output channel.
struct RayReduceHead {
  std::vector<Parameter> kernels;
  std::vector<Parameter> biases;

  static std::vector<int> channel_plan(int in_channels);
  void init(int in_channels, std::uint64_t seed, const std::string& prefix = "ray_reduce");
  Var forward(Tape& t, Var x);
  std::vector<Parameter*> parameters();
};

/// 1x1x1 conv to two logits followed by a softmax; yields occupancy [V, V, V].
struct VoxelHead {
  Parameter kernel;
  Parameter bias;

  void init(int in_channels, std::uint64_t seed, const std::string& prefix = "voxel_head");
  Var forward(Tape& t, Var grid);
  std::vector<Parameter*> parameters();
};

/// He-normal initialised kernel with the given shape (fan-in = all but last dim).
Tensor he_normal(const std::vector<int>& shape, std::uint64_t seed);

}  // namespace lsm::nn
