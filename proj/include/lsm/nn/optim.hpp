#pragma once

#include <vector>

#include "lsm/nn/tensor.hpp"

namespace lsm::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with per-parameter first/second moment buffers.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  /// Applies one update from the accumulated gradients (step counter t
  /// starts at 1) and zeroes them.
  void step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  long t_ = 0;
};

/// Single stateless Adam update for one tensor; `m`/`v` are updated in place.
void adam_update(std::vector<double>& value, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, long t,
                 const AdamConfig& cfg);

}  // namespace lsm::nn
