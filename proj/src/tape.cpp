// SPDX-License-Identifier: Apache-2.0
#include "vigage/tape.hpp"

#include <atomic>

#include "vigage/errors.hpp"

namespace vigage {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  Node node;
  node.owned.emplace(std::move(value));
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(const Tensor& tensor) {
  if (auto it = bound_params_.find(&tensor); it != bound_params_.end()) return Var{this, it->second};
  Node node;
  node.ref = &tensor;
  node.requires_grad = recording();
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  bound_params_.emplace(&tensor, id);
  if (recording()) param_ids_.push_back(id);
  return Var{this, id};
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this) throw StateError("variable belongs to a different tape");
  return nodes_.at(v.id).value();
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.owned.emplace(std::move(value));
  node.requires_grad = recording() && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

bool Tape::any_requires_grad(std::initializer_list<Var> inputs) const {
  for (const Var& v : inputs) {
    if (nodes_.at(v.id).requires_grad) return true;
  }
  return false;
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value().numel(), 0.0);
  return node.grad;
}

std::span<const double> Tape::grad_of(std::size_t id) const { return nodes_.at(id).grad; }

void Tape::backward(Var output) {
  if (value(output).numel() != 1) {
    throw DimensionError("backward without a seed needs a single-element output, got " +
                         shape_to_string(value(output).shape()));
  }
  backward(output, Tensor(value(output).shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (!recording()) throw StateError("backward called on an inference tape");
  if (seed.shape() != value(output).shape()) {
    throw DimensionError("backward seed " + shape_to_string(seed.shape()) + " does not match output " +
                         shape_to_string(value(output).shape()));
  }
  for (Node& node : nodes_) node.grad.clear();
  visit_order_.clear();
  if (!nodes_[output.id].requires_grad) return;

  auto& g = grad_buffer(output.id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = seed[i];

  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    visit_order_.push_back(id);
    if (node.backward) node.backward(*this, id);
  }
}

std::vector<double> Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return std::vector<double>(node.value().numel(), 0.0);
  return node.grad;
}

void Tape::accumulate_param_grads() const {
  for (std::size_t id : param_ids_) {
    const Node& node = nodes_[id];
    auto& slot = node.ref->grad();
    if (node.grad.empty()) continue;
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += node.grad[i];
  }
}

namespace debug {
namespace {
std::atomic<bool> g_corrupt_backward{false};
}
void set_corrupt_backward(bool enabled) noexcept { g_corrupt_backward = enabled; }
bool corrupt_backward() noexcept { return g_corrupt_backward; }
}  // namespace debug

}  // namespace vigage
