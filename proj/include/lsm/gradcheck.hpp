#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lsm/nn/tensor.hpp"

namespace lsm::check {

/// Central-difference step used for every finite-difference comparison.
inline constexpr double kFiniteDiffStep = 1e-3;

/// Scalar function of several tensors with its analytic gradient.
struct Probe {
  std::string name;
  std::vector<nn::Tensor> inputs;
  std::function<double(const std::vector<nn::Tensor>&)> value;
  std::function<std::vector<nn::Tensor>(const std::vector<nn::Tensor>&)> gradient;
};

struct ProbeError {
  double max_rel_error = 0.0;
  double max_entry_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares the analytic gradient against central differences on up to
/// `max_entries` sampled entries per input.
///   max_rel_error: per input, max|a - n| / max(max|a|, max|n|), then max over inputs.
///   max_entry_rel_error: max of |a - n| / max(|a|, |n|, 1e-3 * max_n) per entry,
///   max_n the largest sampled |n| of that input (reported, not gated).
ProbeError compare_gradient(const Probe& probe, std::size_t max_entries, std::uint64_t seed);

struct GradcheckResult {
  std::string op;
  double max_rel_error = 0.0;
  double max_entry_rel_error = 0.0;
  std::size_t entries = 0;
  int trials = 0;
  double seconds = 0.0;
};

/// Operator groups accepted by run_gradcheck besides "all".
const std::vector<std::string>& gradcheck_groups();

/// Runs every probe of `group` for `trials` random instances; one result per
/// probe name with the worst error over trials.
std::vector<GradcheckResult> run_gradcheck(const std::string& group, int trials,
                                           std::uint64_t seed);

struct AdjointResult {
  std::string name;
  double forward_side = 0.0;  // <A x, y>
  double adjoint_side = 0.0;  // <x, A^T y>
  double rel_error = 0.0;
};

/// Dot-product test for unprojection (geometry features off, so the map is
/// linear) with a V^3 grid and `channels` feature channels.
AdjointResult unproject_adjoint(int resolution, int channels, std::uint64_t seed);
/// Dot-product test for projection with nearest or trilinear sampling.
AdjointResult project_adjoint(int resolution, int channels, bool trilinear, std::uint64_t seed);
/// Dot-product test of the whole toy model linearised around its current
/// parameters: directional derivative by central differences against the
/// reverse pass. `head` is "voxel" or "depth".
AdjointResult model_adjoint(const std::string& head, std::uint64_t seed);

}  // namespace lsm::check
