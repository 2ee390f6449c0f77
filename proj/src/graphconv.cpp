// SPDX-License-Identifier: Apache-2.0
#include "vigage/graphconv.hpp"

#include <string>

#include "vigage/errors.hpp"
#include "vigage/ops.hpp"

namespace vigage {

GCParams make_gc_params(std::size_t dim, std::size_t heads) {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("feature dimension " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " graph-convolution heads");
  }
  GCParams p;
  p.w_r1 = Tensor({dim, dim});
  p.w_01 = Tensor({dim, dim});
  p.w_r2 = Tensor({dim, dim});
  p.w_02 = Tensor({dim, dim});
  const std::size_t chunk = dim / heads;
  for (std::size_t i = 0; i < heads; ++i) p.update.emplace_back(Shape{chunk, chunk});
  return p;
}

Var neighbor_aggregate(Var x, const PatchGraph& graph, const Var* edge_alpha, bool mean) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  if (X.rank() != 2 || X.rows() != graph.node_count) {
    throw DimensionError("features " + shape_to_string(X.shape()) + " do not match a graph of " +
                         std::to_string(graph.node_count) + " nodes");
  }
  const bool weighted = edge_alpha != nullptr && graph.edge_count() > 0;
  if (weighted && edge_alpha->value().numel() != graph.edge_count()) {
    throw DimensionError("edge weights have " + std::to_string(edge_alpha->value().numel()) + " entries for " +
                         std::to_string(graph.edge_count()) + " edges");
  }
  const std::size_t n = X.rows(), d = X.cols();
  std::vector<double> coef(graph.edge_count(), 1.0);
  std::vector<double> inv_deg(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t deg = graph.offsets[i + 1] - graph.offsets[i];
    if (mean && deg > 0) inv_deg[i] = 1.0 / static_cast<double>(deg);
  }

  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
      const double w = (weighted ? edge_alpha->value()[e] : 1.0) * inv_deg[i];
      coef[e] = w;
      const std::size_t j = graph.targets[e];
      for (std::size_t k = 0; k < d; ++k) out(i, k) += w * X(j, k);
    }
  }

  const std::size_t xi = x.id;
  const std::size_t ai = weighted ? edge_alpha->id : 0;
  const bool needs = tape.any_requires_grad({x}) || (weighted && tape.requires_grad(*edge_alpha));
  return tape.record(std::move(out), needs,
                     [xi, ai, weighted, n, d, offsets = graph.offsets, targets = graph.targets, coef = std::move(coef),
                      inv_deg = std::move(inv_deg)](
                         Tape& t, std::size_t self) {
                       auto g = t.grad_of(self);
                       if (t.requires_grad(Var{&t, xi})) {
                         auto& gx = t.grad_buffer(xi);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
                             const std::size_t j = targets[e];
                             for (std::size_t k = 0; k < d; ++k) gx[j * d + k] += coef[e] * g[i * d + k];
                           }
                       }
                       if (weighted && t.requires_grad(Var{&t, ai})) {
                         const Tensor& Xv = t.value(Var{&t, xi});
                         auto& ga = t.grad_buffer(ai);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
                             const std::size_t j = targets[e];
                             double s = 0.0;
                             for (std::size_t k = 0; k < d; ++k) s += g[i * d + k] * Xv[j * d + k];
                             ga[e] += s * inv_deg[i];
                           }
                       }
                     });
}

namespace {

void check_square(const Tensor& w, std::size_t dim, const char* name) {
  if (w.rank() != 2 || w.rows() != dim || w.cols() != dim) {
    throw DimensionError(std::string(name) + " is " + shape_to_string(w.shape()) + ", expected [" +
                         std::to_string(dim) + "x" + std::to_string(dim) + "]");
  }
}

}  // namespace

Var gc_step1(Var nodes, const PatchGraph& graph, const EdgeWeightVars& alpha, const GCParams& params) {
  Tape& tape = *nodes.tape;
  const std::size_t d = nodes.value().cols();
  check_square(params.w_r1, d, "W_r1");
  check_square(params.w_01, d, "W_01");
  Var self_term = matmul(scale_rows(nodes, alpha.self), tape.param(params.w_01));
  if (graph.edge_count() == 0) return relu(self_term);
  Var agg = neighbor_aggregate(nodes, graph, &alpha.edge, true);
  return relu(add(matmul(agg, tape.param(params.w_r1)), self_term));
}

Var gc_step2(Var h1, const PatchGraph& graph, const EdgeWeightVars& alpha, const GCParams& params, bool normalize) {
  Tape& tape = *h1.tape;
  const std::size_t d = h1.value().cols();
  check_square(params.w_r2, d, "W_r2");
  check_square(params.w_02, d, "W_02");
  Var self_in = normalize ? scale_rows(h1, alpha.self) : h1;
  Var self_term = matmul(self_in, tape.param(params.w_02));
  if (graph.edge_count() == 0) return relu(self_term);
  Var agg = neighbor_aggregate(h1, graph, normalize ? &alpha.edge : nullptr, normalize);
  return relu(add(matmul(agg, tape.param(params.w_r2)), self_term));
}

Var multihead_update(Var h2, const GCParams& params) {
  Tape& tape = *h2.tape;
  const std::size_t t = params.heads();
  const std::size_t d = h2.value().cols();
  if (t == 0 || d % t != 0) {
    throw DimensionError("feature width " + std::to_string(d) + " cannot be split into " + std::to_string(t) + " heads");
  }
  const std::size_t chunk = d / t;
  if (t == 1) {
    check_square(params.update[0], chunk, "W_update[0]");
    return matmul(h2, tape.param(params.update[0]));
  }
  std::vector<std::size_t> sizes(t, chunk);
  std::vector<Var> parts = split(h2, sizes, 1);
  for (std::size_t i = 0; i < t; ++i) {
    check_square(params.update[i], chunk, ("W_update[" + std::to_string(i) + "]").c_str());
    parts[i] = matmul(parts[i], tape.param(params.update[i]));
  }
  return concat(parts, 1);
}

Var gc_layer(Var nodes, const PatchGraph& graph, const EdgeWeightVars& alpha, const GCParams& params,
             const AttentionParams& attn, const GCLayerOptions& options) {
  Var h1 = gc_step1(nodes, graph, alpha, params);
  Var h2 = gc_step2(h1, graph, alpha, params, options.normalize_step2);
  Var h = multihead_update(h2, params);
  if (!options.use_attention) return h;
  return multi_head_attention(h, h, h, attn, options.scaled_attention);
}

namespace {

EdgeWeightVars bind_weights(Tape& tape, const PatchGraph& graph) {
  if (!graph.has_weights()) throw StateError("graph convolution needs a graph with edge weights set");
  EdgeWeightVars w;
  w.edge = tape.constant(graph.edge_count() ? Tensor::vector(graph.edge_alpha) : Tensor({1}, 0.0));
  w.self = tape.constant(Tensor::vector(graph.self_alpha));
  return w;
}

}  // namespace

Tensor gc_step1(const Tensor& nodes, const PatchGraph& graph, const GCParams& params) {
  Tape tape(Tape::Mode::inference);
  return gc_step1(tape.param(nodes), graph, bind_weights(tape, graph), params).value();
}

Tensor gc_step2(const Tensor& h1, const PatchGraph& graph, const GCParams& params, bool normalize) {
  Tape tape(Tape::Mode::inference);
  return gc_step2(tape.param(h1), graph, bind_weights(tape, graph), params, normalize).value();
}

Tensor multihead_update(const Tensor& h2, const GCParams& params) {
  Tape tape(Tape::Mode::inference);
  return multihead_update(tape.param(h2), params).value();
}

Tensor gc_layer(const Tensor& nodes, const PatchGraph& graph, const GCParams& params, const AttentionParams& attn,
                const GCLayerOptions& options) {
  Tape tape(Tape::Mode::inference);
  return gc_layer(tape.param(nodes), graph, bind_weights(tape, graph), params, attn, options).value();
}

}  // namespace vigage
