#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nuner/numerics/tensor.hpp"

namespace nuner::num {

/// A trainable tensor plus its gradient and AdamW moment estimates.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  Tensor<Real> first_moment;
  Tensor<Real> second_moment;
  std::int64_t step = 0;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string param_name, Tensor<Real> init)
      : name(std::move(param_name)),
        value(std::move(init)),
        grad(Tensor<Real>::zeros_like(value)),
        first_moment(Tensor<Real>::zeros_like(value)),
        second_moment(Tensor<Real>::zeros_like(value)) {}

  void zero_grad() { grad.fill(Real(0)); }
  std::size_t size() const { return value.size(); }
};

template <typename Real>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records differentiable operations in execution order. backward() walks the
/// record in exact reverse order and accumulates gradients additively.
template <typename Real>
class Tape {
 public:
  /// Called during backward with the tape and the id of the node being
  /// processed; propagates tape.grad(self) into the parents' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf reading the parameter in place. Gradients reach param.grad unless
  /// the parameter is frozen.
  Var<Real> leaf(Parameter<Real>& param) {
    Node node;
    node.param = &param;
    node.requires_grad = !param.frozen;
    node.op = "leaf:" + param.name;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  Var<Real> constant(Tensor<Real> value) {
    Node node;
    node.owned = std::move(value);
    node.op = "constant";
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// Records the output of an op. requires_grad is inherited from the parents;
  /// when none of them requires a gradient the backward rule is dropped.
  Var<Real> record(std::string op, Tensor<Real> value,
                   std::initializer_list<std::size_t> parents,
                   BackwardFn backward) {
    return record(std::move(op), std::move(value),
                  std::vector<std::size_t>(parents), std::move(backward));
  }

  Var<Real> record(std::string op, Tensor<Real> value,
                   const std::vector<std::size_t>& parents,
                   BackwardFn backward) {
    if (!value.all_finite()) {
      throw std::runtime_error("non-finite values produced by " + op);
    }
    Node node;
    node.owned = std::move(value);
    node.op = std::move(op);
    for (std::size_t p : parents) {
      node.requires_grad = node.requires_grad || nodes_.at(p).requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor<Real>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor<Real>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != value(id).size() || n.grad.shape() != value(id).shape()) {
      n.grad = Tensor<Real>(value(id).shape());
    }
    n.has_grad = true;
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Populates gradients of every reachable, non-frozen parameter leaf.
  void backward(Var<Real> loss) {
    if (loss.tape != this) {
      throw std::invalid_argument("backward: loss belongs to another tape");
    }
    if (value(loss.id).size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got " +
                                  shape_str(value(loss.id).shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = Real(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.requires_grad) continue;
      if (n.param) {
        Tensor<Real>& target = n.param->grad;
        for (std::size_t j = 0; j < target.size(); ++j) target[j] += n.grad[j];
        if (!target.all_finite()) {
          throw std::runtime_error("non-finite gradient for " + n.param->name);
        }
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
  }

 private:
  struct Node {
    Tensor<Real> owned;
    Tensor<Real> grad;
    Parameter<Real>* param = nullptr;
    BackwardFn backward;
    std::string op;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
};

}  // namespace nuner::num
