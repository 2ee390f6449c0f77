// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "vigage/tensor.hpp"

namespace vigage {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode computation tape.
///
/// Every operation appends one node holding its output and, when any input
/// requires a gradient, a closure that pushes the node's gradient back to its
/// inputs. `backward` replays those closures in exact reverse order of
/// recording. Parameters are referenced, not copied; their gradients are
/// added into the tensors' grad slots by `accumulate_param_grads`.
///
/// A tape in inference mode records values only and cannot run backward.
class Tape {
 public:
  enum class Mode { record, inference };
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const noexcept { return mode_; }
  bool recording() const noexcept { return mode_ == Mode::record; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Value that takes no gradient.
  Var constant(Tensor value);
  /// Leaf bound to an externally owned tensor, which must outlive the tape.
  /// Binding the same tensor twice returns the same Var.
  Var param(const Tensor& tensor);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Seeds d(output)/d(output) = 1; output must hold a single element.
  void backward(Var output);
  /// Seeds the output gradient with `seed` (same shape as the output).
  void backward(Var output, const Tensor& seed);

  /// Gradient of the last backward pass with respect to `v` (zeros if unreached).
  std::vector<double> grad(Var v) const;
  /// Adds every bound parameter's gradient into its grad slot.
  void accumulate_param_grads() const;

  /// Node ids in the order the last backward pass visited them.
  const std::vector<std::size_t>& last_backward_order() const noexcept { return visit_order_; }

  // Op-author interface.
  Var record(Tensor value, bool requires_grad, BackwardFn backward);
  bool any_requires_grad(std::initializer_list<Var> inputs) const;
  /// Mutable gradient buffer of node `id`, created zero-filled on demand.
  std::vector<double>& grad_buffer(std::size_t id);
  /// Gradient of node `id` (empty span when none was propagated).
  std::span<const double> grad_of(std::size_t id) const;

 private:
  struct Node {
    std::optional<Tensor> owned;
    const Tensor* ref = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;

    const Tensor& value() const { return ref ? *ref : *owned; }
  };

  Mode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_params_;
  std::vector<std::size_t> param_ids_;
  std::vector<std::size_t> visit_order_;
};

namespace debug {
/// When enabled, matmul's backward pass deliberately perturbs the gradient it
/// sends to its left operand. Used as a negative control for gradient checks.
void set_corrupt_backward(bool enabled) noexcept;
bool corrupt_backward() noexcept;
}  // namespace debug

}  // namespace vigage
