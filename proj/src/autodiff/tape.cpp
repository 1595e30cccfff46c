#include "ldcbm/autodiff/tape.hpp"

#include <utility>

#include "ldcbm/error.hpp"

namespace ldcbm::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& BackwardContext::output() const { return tape_.value(output_); }

const Tensor& BackwardContext::value(std::size_t id) const { return tape_.value(id); }

bool BackwardContext::wants(std::size_t id) const { return tape_.requires_grad(id); }

Tensor& BackwardContext::grad(std::size_t id) {
  Tensor& slot = grads_[id];
  if (slot.empty() && tape_.value(id).size() > 0) {
    slot = Tensor(tape_.value(id).shape(), 0.0);
  }
  return slot;
}

Tensor Gradients::of(const Var& v) const {
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor(v.shape(), 0.0);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<std::size_t>& inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
  if (!needs) return constant(std::move(value));
  nodes_.push_back(Node{std::move(value), true, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

std::size_t Tape::recorded_ops() const noexcept {
  std::size_t count = 0;
  for (const auto& node : nodes_) count += node.backward ? 1 : 0;
  return count;
}

Gradients Tape::backward(const Var& output) {
  if (output.tape() != this) throw Error("backward: output belongs to a different tape");
  const Tensor& out_value = nodes_[output.id()].value;
  if (out_value.size() != 1) {
    throw ShapeError("backward needs a scalar output, got shape " +
                     shape_string(out_value.shape()));
  }
  if (!nodes_[output.id()].requires_grad) {
    throw Error("backward: output has no computation record (no operand requires a gradient)");
  }

  std::vector<Tensor> grads(nodes_.size());
  grads[output.id()] = Tensor(out_value.shape(), 1.0);
  last_replay_.clear();

  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || grads[i].empty()) continue;
    BackwardContext ctx(*this, grads, i);
    node.backward(grads[i], ctx);
    last_replay_.push_back(i);
  }

  Gradients result;
  result.grads_ = std::move(grads);
  return result;
}

}  // namespace ldcbm::ad
