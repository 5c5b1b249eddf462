#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lsm/nn/layers.hpp"
#include "lsm/raster.hpp"

namespace lsm::fusion {

enum class PointwiseMode { kMax, kMean };

/// Elementwise max or mean over views. Reduction runs in a fixed order per
/// element, and max/mean are order independent, so any permutation of
/// `grids` gives bitwise identical output.
FeatureGrid fuse_pointwise(std::span<const FeatureGrid> grids, PointwiseMode mode);

/// Weights of a 3D convolutional GRU cell. Gate order: update (z),
/// reset (r), candidate (h~).
struct GruCellParams {
  enum Gate { kUpdate = 0, kReset = 1, kCandidate = 2 };

  int in_channels = 0;
  int hidden_channels = 0;
  int kernel = 3;
  std::array<nn::Parameter, 3> input_kernel;   // [k, k, k, Cin, Ch]
  std::array<nn::Parameter, 3> hidden_kernel;  // [k, k, k, Ch, Ch]
  std::array<nn::Parameter, 3> bias;           // [Ch]
  std::array<nn::Parameter, 3> norm_gain;      // [Ch]
  std::array<nn::Parameter, 3> norm_shift;     // [Ch]

  /// Zero kernels and biases, unit norm gain, zero shift.
  static GruCellParams zeros(int in_channels, int hidden_channels, int kernel = 3);
  /// Small random kernels (scaled He normal), unit gain.
  static GruCellParams random(int in_channels, int hidden_channels, int kernel,
                              std::uint64_t seed, double scale = 0.5);

  void validate() const;
  std::vector<nn::Parameter*> parameters();
};

/// One recurrent update:
///   z  = sigma(LN(conv(x, Wzx) + conv(h, Wzh) + bz))
///   r  = sigma(LN(conv(x, Wrx) + conv(h, Wrh) + br))
///   h~ = tanh(LN(conv(x, Whx) + conv(r * h, Whh) + bh))
///   h' = (1 - z) * h + z * h~
/// with same-padded convolutions and layer norm over channels per voxel.
nn::Var gru_step(nn::Tape& t, nn::Var h, nn::Var x, GruCellParams& p);
nn::Var fuse_recurrent(nn::Tape& t, const std::vector<nn::Var>& grids, GruCellParams& p,
                       nn::Var h0);

FeatureGrid gru_step(const FeatureGrid& h, const FeatureGrid& x, GruCellParams& p);
/// Folds gru_step over `grids` in order starting from zeros.
FeatureGrid fuse_recurrent(std::span<const FeatureGrid> grids, GruCellParams& p);

/// Max absolute voxel deviation of fuse_recurrent across `orderings`
/// shuffles of the input (first ordering is the given one).
double ordering_deviation(std::span<const FeatureGrid> grids, GruCellParams& p,
                          int orderings, std::uint64_t seed);

}  // namespace lsm::fusion
