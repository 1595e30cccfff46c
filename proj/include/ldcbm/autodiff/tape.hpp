#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ldcbm/autodiff/tensor.hpp"

namespace ldcbm::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// View handed to backward closures during adjoint replay.
class BackwardContext {
 public:
  [[nodiscard]] const Tensor& output() const;
  [[nodiscard]] const Tensor& value(std::size_t id) const;
  [[nodiscard]] bool wants(std::size_t id) const;
  /// Gradient accumulator for node `id`, zero-initialised on first use.
  Tensor& grad(std::size_t id);

 private:
  friend class Tape;
  BackwardContext(const Tape& tape, std::vector<Tensor>& grads, std::size_t output)
      : tape_(tape), grads_(grads), output_(output) {}

  const Tape& tape_;
  std::vector<Tensor>& grads_;
  std::size_t output_;
};

using BackwardFn = std::function<void(const Tensor& out_grad, BackwardContext& ctx)>;

/// Result of Tape::backward: adjoints for every node reached from the output.
class Gradients {
 public:
  /// Gradient with respect to `v`; an all-zero tensor when `v` does not influence the output.
  [[nodiscard]] Tensor of(const Var& v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

/// Ordered record of primitive applications (the computation record).
///
/// Leaves are created with constant() or variable(). Primitives call record();
/// a node is only given a backward closure when at least one input requires a
/// gradient, so forward passes over constants leave no record behind.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  Var record(Tensor value, const std::vector<std::size_t>& inputs, BackwardFn backward);

  /// Reverse-mode sweep from a scalar output.
  Gradients backward(const Var& output);

  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }
  [[nodiscard]] std::size_t recorded_ops() const noexcept;

  /// Node ids whose adjoint closures ran during the last backward(), in visit order.
  [[nodiscard]] const std::vector<std::size_t>& last_replay() const noexcept {
    return last_replay_;
  }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> last_replay_;
};

}  // namespace ldcbm::ad
