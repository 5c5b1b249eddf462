#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "lsm/nn/tensor.hpp"

namespace lsm::nn {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Composition record for reverse-mode differentiation.
///
/// Every operator application appends one node holding its output value and a
/// backward closure. Nodes are appended in execution order, so walking the
/// list backwards is an anti-topological traversal: each node's gradient is
/// complete before its closure runs, and closures add into their inputs'
/// gradients (fan-out accumulates). Parameter leaves flush their gradients
/// into Parameter::grad at the end of backward().
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value);
  Var leaf(Tensor value);  // differentiable input that is not a Parameter
  Var param(Parameter& p);

  /// Records an operator output. `inputs` decides whether the node needs a
  /// gradient; `backward` is skipped entirely when none of them do.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor& grad(Var v) { return grad(v.id); }
  Tensor& grad(std::size_t id);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.data.empty(); }

  /// Seeds d(root)/d(root) = 1 (root must hold one element) and runs the
  /// reverse pass.
  void backward(Var root);
  /// Seeds the root gradient with an explicit cotangent.
  void backward(Var root, const Tensor& seed);

  std::size_t size() const { return nodes_.size(); }
  /// Number of backward closures executed by the last reverse pass.
  std::size_t last_visit_count() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  void run_reverse(std::size_t root);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace lsm::nn
