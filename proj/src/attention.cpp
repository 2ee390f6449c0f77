// SPDX-License-Identifier: Apache-2.0
#include "vigage/attention.hpp"

#include <cmath>
#include <string>

#include "vigage/errors.hpp"
#include "vigage/ops.hpp"

namespace vigage {

namespace {

void check_head(const Tensor& w, std::size_t in_dim, std::size_t head_dim, const char* role, std::size_t head) {
  if (w.rank() != 2 || w.rows() != in_dim || w.cols() != head_dim) {
    throw DimensionError("attention head " + std::to_string(head) + ": W" + role + " is " + shape_to_string(w.shape()) +
                         ", expected [" + std::to_string(in_dim) + "x" + std::to_string(head_dim) + "]");
  }
}

}  // namespace

HeadProjections project_heads(Var q, Var k, Var v, const AttentionParams& params) {
  const std::size_t t = params.heads();
  if (t == 0 || params.wk.size() != t || params.wv.size() != t) {
    throw DimensionError("attention needs the same positive number of Q, K and V projections");
  }
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2) throw DimensionError("attention inputs must be matrices");
  if (K.rows() != V.rows()) {
    throw DimensionError("attention keys " + shape_to_string(K.shape()) + " and values " + shape_to_string(V.shape()) +
                         " have different lengths");
  }
  // Recording new nodes may reallocate the tape, so keep only the widths.
  const std::size_t q_cols = Q.cols(), k_cols = K.cols(), v_cols = V.cols();
  const std::size_t dm = params.head_dim();
  HeadProjections out;
  Tape& tape = *q.tape;
  for (std::size_t i = 0; i < t; ++i) {
    check_head(params.wq[i], q_cols, dm, "Q", i);
    check_head(params.wk[i], k_cols, dm, "K", i);
    check_head(params.wv[i], v_cols, dm, "V", i);
    out.q.push_back(matmul(q, tape.param(params.wq[i])));
    out.k.push_back(matmul(k, tape.param(params.wk[i])));
    out.v.push_back(matmul(v, tape.param(params.wv[i])));
  }
  return out;
}

Var multi_head_attention(Var q, Var k, Var v, const AttentionParams& params, bool scaled, AttentionTrace* trace) {
  HeadProjections proj = project_heads(q, k, v, params);
  const double temperature = scaled ? 1.0 / std::sqrt(static_cast<double>(params.head_dim())) : 1.0;
  std::vector<Var> heads;
  for (std::size_t i = 0; i < params.heads(); ++i) {
    Var logits = matmul(proj.q[i], transpose(proj.k[i]));
    if (scaled) logits = scale(logits, temperature);
    Var weights = softmax_rows(logits);
    if (trace) {
      trace->weights.push_back(weights.value());
      trace->values.push_back(proj.v[i].value());
    }
    heads.push_back(matmul(weights, proj.v[i]));
  }
  return heads.size() == 1 ? heads.front() : concat(heads, 1);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                            bool scaled, AttentionTrace* trace) {
  Tape tape(Tape::Mode::inference);
  return multi_head_attention(tape.param(q), tape.param(k), tape.param(v), params, scaled, trace).value();
}

}  // namespace vigage
