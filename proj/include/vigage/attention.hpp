// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "vigage/tape.hpp"

namespace vigage {

/// Per-head projection matrices. Head i maps queries with wq[i] (d_Q x d_m),
/// keys with wk[i] (d_K x d_m) and values with wv[i] (d_V x d_m).
struct AttentionParams {
  std::vector<Tensor> wq;
  std::vector<Tensor> wk;
  std::vector<Tensor> wv;

  std::size_t heads() const noexcept { return wq.size(); }
  std::size_t head_dim() const { return wq.at(0).cols(); }
};

struct HeadProjections {
  std::vector<Var> q;
  std::vector<Var> k;
  std::vector<Var> v;
};

/// Optional per-head intermediates recorded by multi_head_attention.
struct AttentionTrace {
  std::vector<Tensor> weights;  // T_Q x T_K, one per head
  std::vector<Tensor> values;   // projected values V_i, T_K x d_m
};

HeadProjections project_heads(Var q, Var k, Var v, const AttentionParams& params);

/// head_i = softmax(Q_i K_i^T [/ sqrt(d_m)]) V_i, concatenated on the feature axis.
Var multi_head_attention(Var q, Var k, Var v, const AttentionParams& params, bool scaled = false,
                         AttentionTrace* trace = nullptr);

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                            bool scaled = false, AttentionTrace* trace = nullptr);

}  // namespace vigage
