#include "hyperfuse/tape.hpp"

#include <string>

namespace hyperfuse {

template <typename T>
Tape<T>& Var<T>::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape().value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape().requires_grad(id_);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape().grad(id_);
}

template <typename T>
const Tensor<T>& BackwardContext<T>::grad_output() const {
  return tape_.grad(out_);
}

template <typename T>
const Tensor<T>& BackwardContext<T>::output() const {
  return tape_.value(out_);
}

template <typename T>
const Tensor<T>& BackwardContext<T>::input(std::size_t i) const {
  return tape_.value(tape_.inputs(out_)[i]);
}

template <typename T>
Tensor<T>* BackwardContext<T>::input_grad(std::size_t i) {
  NodeId in = tape_.inputs(out_)[i];
  if (!tape_.requires_grad(in)) return nullptr;
  return &tape_.grad_buffer(in);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (!value.all_finite()) throw ContractError("non-finite value in leaf tensor");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw ContractError(std::string("non-finite output from ") + op);
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw ContractError(std::string(op) + ": input from a different tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
}

template <typename T>
const Tensor<T>& Tape<T>::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty()) throw ContractError("no gradient recorded for node " + std::to_string(id));
  return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
  if (backward_done_) throw ContractError("backward called twice without zero_grad()");
  Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) throw ContractError("backward requires a scalar loss, got shape " +
                                                  shape_str(root.value.shape()));
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_buffer(loss.id())[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    BackwardContext<T> ctx(*this, static_cast<NodeId>(i));
    n.backward(ctx);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor<T>();
  backward_done_ = false;
}

template class Tape<float>;
template class Tape<double>;
template class Var<float>;
template class Var<double>;
template class BackwardContext<float>;
template class BackwardContext<double>;

}  // namespace hyperfuse
