// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "vigage/attention.hpp"
#include "vigage/patchgraph.hpp"
#include "vigage/tape.hpp"

namespace vigage {

/// Weights of the two-step relational convolution (single relation) and the
/// per-head update. All transforms act on row vectors from the right.
struct GCParams {
  Tensor w_r1;  // neighbor transform, step 1 [D x D]
  Tensor w_01;  // self transform, step 1 [D x D]
  Tensor w_r2;  // neighbor transform, step 2 [D x D]
  Tensor w_02;  // self transform, step 2 [D x D]
  std::vector<Tensor> update;  // t matrices [(D/t) x (D/t)]

  std::size_t heads() const noexcept { return update.size(); }
};

/// Builds zero-filled GC parameters; throws ConfigError unless dim % heads == 0.
GCParams make_gc_params(std::size_t dim, std::size_t heads);

struct GCLayerOptions {
  bool use_attention = true;
  bool scaled_attention = false;
  bool normalize_step2 = false;
};

/// Row i = sum over j in N_i of w_ij * x_j, where w_ij is alpha_ij when
/// `edge_alpha` is given (else 1) and is divided by |N_i| when `mean` is set.
/// Neighbors are summed in stored rank order.
Var neighbor_aggregate(Var x, const PatchGraph& graph, const Var* edge_alpha, bool mean);

/// h1_i = relu( sum_j (alpha_ij / c_i) g_j W_r1 + alpha_ii g_i W_01 )
Var gc_step1(Var nodes, const PatchGraph& graph, const EdgeWeightVars& alpha, const GCParams& params);

/// h2_i = relu( sum_j h1_j W_r2 + h1_i W_02 ). With `normalize` the step-1
/// weighting (alpha_ij / c_i on neighbors, alpha_ii on self) is applied too.
Var gc_step2(Var h1, const PatchGraph& graph, const EdgeWeightVars& alpha, const GCParams& params,
             bool normalize = false);

/// Splits rows into t contiguous chunks, transforms chunk i by update[i], re-concatenates.
Var multihead_update(Var h2, const GCParams& params);

/// multihead_update(gc_step2(gc_step1(nodes))), optionally followed by node self-attention.
Var gc_layer(Var nodes, const PatchGraph& graph, const EdgeWeightVars& alpha, const GCParams& params,
             const AttentionParams& attn, const GCLayerOptions& options);

// Value-level wrappers. The graph must carry edge weights (StateError otherwise).
Tensor gc_step1(const Tensor& nodes, const PatchGraph& graph, const GCParams& params);
Tensor gc_step2(const Tensor& h1, const PatchGraph& graph, const GCParams& params, bool normalize = false);
Tensor multihead_update(const Tensor& h2, const GCParams& params);
Tensor gc_layer(const Tensor& nodes, const PatchGraph& graph, const GCParams& params, const AttentionParams& attn,
                const GCLayerOptions& options);

}  // namespace vigage
