#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asrsent/errors.hpp"
#include "asrsent/tensor.hpp"

namespace asrsent {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-threaded reverse-mode recording context.
///
/// Nodes are appended in evaluation order, so a reverse sweep over node ids is
/// a valid topological order for the backward pass. Nodes that do not depend on
/// any parameter drop their backward closure at record time.
template <class T>
class Tape {
 public:
  /// Receives the tape and the adjoint of the node's output.
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, false, nullptr); }

  Var<T> parameter(Tensor<T> value) { return push(std::move(value), true, true, nullptr); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    if (!value.all_finite()) throw NumericalError("non-finite value produced on tape");
    return push(std::move(value), needs, false, needs ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  bool requires_grad(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  bool is_parameter(Var<T> v) const { return owns(v) && nodes_[v.id()].is_parameter; }

  bool owns(Var<T> v) const { return v.tape() == this && v.id() < nodes_.size(); }

  /// Adjoint accumulator for v, allocated as zeros on first use.
  Tensor<T>& grad(Var<T> v) {
    check_owned(v);
    auto& slot = grads_[v.id()];
    if (!slot) slot.emplace(nodes_[v.id()].value.shape());
    return *slot;
  }

  bool has_grad(Var<T> v) const { return owns(v) && grads_[v.id()].has_value(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards.
  void backward(Var<T> loss) {
    check_owned(loss);
    if (nodes_[loss.id()].value.size() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " +
                       shape_string(nodes_[loss.id()].value.shape()));
    }
    for (auto& g : grads_) g.reset();
    grad(loss).fill(T(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (!node.backward || !grads_[id]) continue;
      // grads_ is never resized during the sweep, so the reference stays valid.
      node.backward(*this, *grads_[id]);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    bool is_parameter = false;
    Backward backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, bool is_parameter, Backward backward) {
    nodes_.push_back(Node{std::move(value), requires_grad, is_parameter, std::move(backward)});
    grads_.emplace_back();
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owned(Var<T> v) const {
    if (!owns(v)) throw ShapeError("variable is not recorded on this tape");
  }

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
};

/// Gradients of a scalar loss with respect to named parameter leaves.
/// Parameters the loss does not depend on receive zero tensors.
template <class T>
std::map<std::string, Tensor<T>> grad(Tape<T>& tape, Var<T> loss,
                                      const std::map<std::string, Var<T>>& params) {
  if (!tape.owns(loss)) throw ShapeError("loss is not recorded on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("grad() requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  for (const auto& [name, var] : params) {
    if (!tape.is_parameter(var)) throw ShapeError("parameter '" + name + "' is not on the tape");
  }
  tape.backward(loss);
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, var] : params) {
    out.emplace(name, tape.has_grad(var) ? tape.grad(var) : Tensor<T>(var.shape()));
  }
  return out;
}

/// Registers every tensor of a named collection on the tape, as trainable
/// parameters or as constants (evaluation mode, no closures recorded).
template <class T>
std::map<std::string, Var<T>> bind_params(Tape<T>& tape, const std::map<std::string, Tensor<T>>& tensors,
                                   bool trainable) {
  std::map<std::string, Var<T>> out;
  for (const auto& [name, t] : tensors) {
    out.emplace(name, trainable ? tape.parameter(t) : tape.constant(t));
  }
  return out;
}

}  // namespace asrsent
