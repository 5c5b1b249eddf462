#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

namespace lsm::nn {

/// Dense row-major tensor of doubles. The last dimension is the channel
/// dimension for every spatial layer.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int channels() const { return shape.empty() ? 1 : shape.back(); }
  /// Number of positions, i.e. size / channels.
  std::size_t positions() const { return shape.empty() ? 1 : size() / shape.back(); }
  double item() const { return data.at(0); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_string(const std::vector<int>& shape);

/// Learnable tensor with its gradient accumulator.
struct Parameter {
  std::string id;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, Tensor v)
      : id(std::move(name)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

}  // namespace lsm::nn
