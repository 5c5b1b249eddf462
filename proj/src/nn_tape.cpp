#include "lsm/nn/tape.hpp"

#include "lsm/error.hpp"

namespace lsm::nn {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
  return Var{nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{},
                        nullptr, needs});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{},
                        nullptr, needs});
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::backward(Var root) {
  if (nodes_.at(root.id).value.size() != 1) {
    throw InvalidArgument("backward: root must be a scalar; pass an explicit seed");
  }
  grad(root).data[0] += 1.0;
  run_reverse(root.id);
}

void Tape::backward(Var root, const Tensor& seed) {
  Tensor& g = grad(root);
  if (seed.size() != g.size()) {
    throw InvalidArgument("backward: seed shape " + shape_string(seed.shape) +
                          " does not match root " + shape_string(g.shape));
  }
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += seed.data[i];
  run_reverse(root.id);
}

void Tape::run_reverse(std::size_t root) {
  visits_ = 0;
  for (std::size_t id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.data.empty()) continue;
    if (n.backward) {
      n.backward(*this, id);
      ++visits_;
    }
    if (n.param != nullptr) {
      auto& pg = n.param->grad.data;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[i];
    }
  }
}

}  // namespace lsm::nn
