// SPDX-License-Identifier: Apache-2.0
#include "vigage/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vigage/errors.hpp"

namespace vigage {

namespace {

const Tensor& val(Tape& tape, std::size_t id) { return tape.value(Var{&tape, id}); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

bool needs_grad(Tape& tape, std::size_t id) { return tape.requires_grad(Var{&tape, id}); }

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      if (s == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
}

template <class F, class G>
Var unary(Var x, F&& forward, G&& derivative) {
  Tape& tape = *x.tape;
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = forward(in[i]);
  const std::size_t xi = x.id;
  return tape.record(std::move(out), tape.any_requires_grad({x}), [xi, derivative](Tape& t, std::size_t self) {
    const Tensor& xin = val(t, xi);
    const Tensor& y = val(t, self);
    auto g = t.grad_of(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * derivative(xin[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(A.shape()) + " x " +
                         shape_to_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  gemm_nn(A.data().data(), B.data().data(), C.data().data(), m, k, n);

  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(C), tape.any_requires_grad({a, b}), [ai, bi, m, k, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (needs_grad(t, ai)) {
      const Tensor& Bv = val(t, bi);
      auto& ga = t.grad_buffer(ai);
      const double corrupt = debug::corrupt_backward() ? 1.01 : 1.0;
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Bv[p * n + j];
          ga[i * k + p] += corrupt * s;
        }
      }
    }
    if (needs_grad(t, bi)) {
      const Tensor& Av = val(t, ai);
      auto& gb = t.grad_buffer(bi);
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double s = Av[i * k + p];
          if (s == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  require_matrix(A, "transpose");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  const std::size_t ai = a.id;
  return tape.record(std::move(out), tape.any_requires_grad({a}), [ai, m, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var add(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, "add");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] + B[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(out), tape.any_requires_grad({a, b}), [ai, bi](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    for (std::size_t in : {ai, bi}) {
      if (!needs_grad(t, in)) continue;
      auto& gi = t.grad_buffer(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, "sub");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] - B[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(out), tape.any_requires_grad({a, b}), [ai, bi](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (needs_grad(t, ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (needs_grad(t, bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, "mul");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(out), tape.any_requires_grad({a, b}), [ai, bi](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (needs_grad(t, ai)) {
      const Tensor& Bv = val(t, bi);
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * Bv[i];
    }
    if (needs_grad(t, bi)) {
      const Tensor& Av = val(t, ai);
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * Av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * factor;
  const std::size_t ai = a.id;
  return tape.record(std::move(out), tape.any_requires_grad({a}), [ai, factor](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_row_bias(Var x, Var bias) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  require_matrix(X, "add_row_bias");
  if (b.numel() != X.cols()) {
    throw DimensionError("add_row_bias: bias " + shape_to_string(b.shape()) + " does not fit rows of " +
                         shape_to_string(X.shape()));
  }
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = X(i, j) + b[j];
  const std::size_t xi = x.id, bi = bias.id;
  return tape.record(std::move(out), tape.any_requires_grad({x, bias}), [xi, bi, n, d](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (needs_grad(t, xi)) {
      auto& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    if (needs_grad(t, bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    }
  });
}

Var scale_rows(Var x, Var w) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_matrix(X, "scale_rows");
  if (W.numel() != X.rows()) {
    throw DimensionError("scale_rows: weights " + shape_to_string(W.shape()) + " do not match rows of " +
                         shape_to_string(X.shape()));
  }
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = W[i] * X(i, j);
  const std::size_t xi = x.id, wi = w.id;
  return tape.record(std::move(out), tape.any_requires_grad({x, w}), [xi, wi, n, d](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (needs_grad(t, xi)) {
      const Tensor& Wv = val(t, wi);
      auto& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] * Wv[i];
    }
    if (needs_grad(t, wi)) {
      const Tensor& Xv = val(t, xi);
      auto& gw = t.grad_buffer(wi);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += g[i * d + j] * Xv[i * d + j];
        gw[i] += s;
      }
    }
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs(Var x) {
  // Subgradient 0 at exactly 0.
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Var softmax_rows(Var x) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  require_matrix(X, "softmax_rows");
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double hi = X(i, 0);
    for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, X(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(X(i, j) - hi);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= total;
  }
  const std::size_t xi = x.id;
  return tape.record(std::move(out), tape.any_requires_grad({x}), [xi, m, n](Tape& t, std::size_t self) {
    const Tensor& y = val(t, self);
    auto g = t.grad_of(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

namespace {

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t inner = 1;
};

AxisLayout layout_of(const Shape& shape, std::size_t axis) {
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  Tape& tape = *parts.front().tape;
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_to_string(first));

  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids, extents;
  bool needs = false;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t d = 0; compatible && d < s.size(); ++d) compatible = d == axis || s[d] == first[d];
    if (!compatible) {
      throw DimensionError("concat: incompatible shapes " + shape_to_string(first) + " and " + shape_to_string(s) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
    extents.push_back(s[axis]);
    needs = needs || tape.requires_grad(p);
  }

  const AxisLayout l = layout_of(out_shape, axis);
  const std::size_t out_row = out_shape[axis] * l.inner;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& src = parts[p].value();
    const std::size_t block = extents[p] * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
      std::copy_n(src.data().begin() + o * block, block, out.data().begin() + o * out_row + offset);
    }
    offset += block;
  }

  return tape.record(std::move(out), needs, [ids, extents, l, out_row](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t block = extents[p] * l.inner;
      if (needs_grad(t, ids[p])) {
        auto& gp = t.grad_buffer(ids[p]);
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += g[o * out_row + off + i];
      }
      off += block;
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t offset, std::size_t length) {
  Tape& tape = *x.tape;
  const Shape& in_shape = x.shape();
  if (axis >= in_shape.size() || length == 0 || offset + length > in_shape[axis]) {
    throw DimensionError("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + shape_to_string(in_shape));
  }
  const AxisLayout l = layout_of(in_shape, axis);
  const std::size_t in_row = in_shape[axis] * l.inner;
  const std::size_t block = length * l.inner;
  const std::size_t start = offset * l.inner;
  Shape out_shape = in_shape;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const Tensor& X = x.value();
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(X.data().begin() + o * in_row + start, block, out.data().begin() + o * block);
  }
  const std::size_t xi = x.id;
  return tape.record(std::move(out), tape.any_requires_grad({x}),
                     [xi, l, in_row, block, start](Tape& t, std::size_t self) {
                       auto g = t.grad_of(self);
                       auto& gx = t.grad_buffer(xi);
                       for (std::size_t o = 0; o < l.outer; ++o)
                         for (std::size_t i = 0; i < block; ++i) gx[o * in_row + start + i] += g[o * block + i];
                     });
}

std::vector<Var> split(Var x, std::span<const std::size_t> sizes, std::size_t axis) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (axis >= x.shape().size() || total != x.shape()[axis]) {
    throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) +
                         " of " + shape_to_string(x.shape()) + " differs");
  }
  std::vector<Var> parts;
  std::size_t offset = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, axis, offset, s));
    offset += s;
  }
  return parts;
}

Var mean_rows(Var x) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  require_matrix(X, "mean_rows");
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += X(i, j);
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
  const std::size_t xi = x.id;
  return tape.record(std::move(out), tape.any_requires_grad({x}), [xi, n, d](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto& gx = t.grad_buffer(xi);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
  });
}

Var sum(Var x) {
  Tape& tape = *x.tape;
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::size_t xi = x.id;
  return tape.record(Tensor::scalar(total), tape.any_requires_grad({x}), [xi](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    auto& gx = t.grad_buffer(xi);
    for (double& v : gx) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  require_matrix(X, "gather_rows");
  const std::size_t d = X.cols();
  if (rows.empty()) throw DimensionError("gather_rows: no rows requested");
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= X.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                           shape_to_string(X.shape()));
    }
    std::copy_n(X.data().begin() + rows[r] * d, d, out.data().begin() + r * d);
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  const std::size_t xi = x.id;
  return tape.record(std::move(out), tape.any_requires_grad({x}), [xi, index, d](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gx[index[r] * d + j] += g[r * d + j];
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = *x.tape;
  if (shape_numel(shape) != x.value().numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return tape.record(std::move(out), tape.any_requires_grad({x}), [xi](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

}  // namespace vigage
