#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "hyperfuse/tensor.hpp"

namespace hyperfuse {

template <typename T>
class Tape;

using NodeId = std::uint32_t;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  NodeId id() const { return id_; }
  Tape<T>& tape() const;
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Accumulated gradient; throws if backward has not reached this node.
  const Tensor<T>& grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

// View handed to an operation's backward function.
template <typename T>
class BackwardContext {
 public:
  BackwardContext(Tape<T>& tape, NodeId out) : tape_(tape), out_(out) {}
  const Tensor<T>& grad_output() const;
  const Tensor<T>& output() const;
  const Tensor<T>& input(std::size_t i) const;
  // Zero-initialized on first use; nullptr when the input needs no gradient.
  Tensor<T>* input_grad(std::size_t i);

 private:
  Tape<T>& tape_;
  NodeId out_;
};

// Records operations in creation order and replays them in reverse to
// accumulate gradients. Single-threaded.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Appends an operation node. The backward function is dropped when no
  // input requires a gradient.
  Var<T> record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward);
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  // Reverse-mode accumulation from a scalar node. Calling twice without
  // zero_grad() is an error.
  void backward(Var<T> loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(NodeId id) const { return nodes_.at(id).op; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  bool has_grad(NodeId id) const { return !nodes_.at(id).grad.empty(); }
  const Tensor<T>& grad(NodeId id) const;
  Tensor<T>& grad_buffer(NodeId id);

 private:
  struct Node {
    const char* op = "leaf";
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Var<float>;
extern template class Var<double>;
extern template class BackwardContext<float>;
extern template class BackwardContext<double>;

}  // namespace hyperfuse
