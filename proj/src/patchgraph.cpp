// SPDX-License-Identifier: Apache-2.0
#include "vigage/patchgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "vigage/errors.hpp"
#include "vigage/ops.hpp"

namespace vigage {

Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "euclidean") return Metric::euclidean;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected cosine or euclidean)");
}

std::string_view metric_name(Metric metric) { return metric == Metric::cosine ? "cosine" : "euclidean"; }

namespace {

void check_image(const Tensor& image, std::size_t grid_side) {
  if (image.rank() != 3) throw DimensionError("image must be H x W x C, got " + shape_to_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (grid_side == 0 || h % grid_side != 0 || w % grid_side != 0) {
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by grid side " +
                         std::to_string(grid_side));
  }
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t grid_side, double scale) {
  check_image(image, grid_side);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t ph = h / grid_side, pw = w / grid_side;
  const std::size_t n = grid_side * grid_side, d = ph * pw * c;
  Tensor nodes({n, d});
  for (std::size_t cell = 0; cell < n; ++cell) {
    const std::size_t r0 = (cell / grid_side) * ph, c0 = (cell % grid_side) * pw;
    std::size_t k = 0;
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) nodes(cell, k++) = image.at(r0 + y, c0 + x, ch) * scale;
  }
  return nodes;
}

Tensor unpatchify(const Tensor& nodes, std::size_t grid_side, std::size_t height, std::size_t width,
                  std::size_t channels) {
  Tensor image({height, width, channels});
  check_image(image, grid_side);
  const std::size_t ph = height / grid_side, pw = width / grid_side;
  if (nodes.rank() != 2 || nodes.rows() != grid_side * grid_side || nodes.cols() != ph * pw * channels) {
    throw DimensionError("unpatchify: node matrix " + shape_to_string(nodes.shape()) + " does not fit a " +
                         std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels) +
                         " image on a " + std::to_string(grid_side) + " grid");
  }
  auto data = image.data();
  for (std::size_t cell = 0; cell < nodes.rows(); ++cell) {
    const std::size_t r0 = (cell / grid_side) * ph, c0 = (cell % grid_side) * pw;
    std::size_t k = 0;
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        for (std::size_t ch = 0; ch < channels; ++ch)
          data[((r0 + y) * width + (c0 + x)) * channels + ch] = nodes(cell, k++);
  }
  return image;
}

double node_similarity(std::span<const double> x, std::span<const double> y, Metric metric) {
  if (metric == Metric::euclidean) {
    double dist = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double diff = x[k] - y[k];
      dist += diff * diff;
    }
    return -dist;
  }
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    dot += x[k] * y[k];
    nx += x[k] * x[k];
    ny += y[k] * y[k];
  }
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return dot / (std::sqrt(nx) * std::sqrt(ny));
}

PatchGraph knn_graph(const Tensor& nodes, std::size_t k, Metric metric) {
  if (nodes.rank() != 2) throw DimensionError("knn_graph: node features must be N x D, got " + shape_to_string(nodes.shape()));
  const std::size_t n = nodes.rows(), d = nodes.cols();
  if (n == 0) throw ArgumentError("knn_graph: no nodes");
  if (k == 0) throw ArgumentError("knn_graph: k must be at least 1");

  PatchGraph graph;
  graph.node_count = n;
  if (k >= n) {
    graph.warnings.push_back("k=" + std::to_string(k) + " clamped to N-1=" + std::to_string(n - 1));
    k = n - 1;
  }

  auto row = [&](std::size_t i) { return nodes.data().subspan(i * d, d); };
  std::vector<double> sim(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sim[i * n + j] = sim[j * n + i] = node_similarity(row(i), row(j), metric);

  graph.offsets.reserve(n + 1);
  graph.offsets.push_back(0);
  graph.targets.reserve(n * k);
  std::size_t tied_nodes = 0;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) candidates.push_back(j);
    const double* s = &sim[i * n];
    auto better = [s](std::size_t a, std::size_t b) { return s[a] != s[b] ? s[a] > s[b] : a < b; };
    const std::size_t examined = std::min(k + 1, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + examined, candidates.end(), better);
    bool tied = false;
    for (std::size_t r = 1; r < examined; ++r) tied = tied || s[candidates[r]] == s[candidates[r - 1]];
    if (tied) ++tied_nodes;
    graph.targets.insert(graph.targets.end(), candidates.begin(), candidates.begin() + k);
    graph.offsets.push_back(graph.targets.size());
  }
  if (tied_nodes) {
    graph.warnings.push_back("tied similarities broken by index at " + std::to_string(tied_nodes) + " of " +
                             std::to_string(n) + " nodes");
  }
  graph.degree.assign(n, static_cast<double>(k));
  return graph;
}

Var edge_logits(Var nodes, std::span<const std::size_t> src, std::span<const std::size_t> dst, Var a, Var b) {
  Tape& tape = *nodes.tape;
  const Tensor& X = nodes.value();
  const Tensor& A = a.value();
  if (X.rank() != 2) throw DimensionError("edge_logits: node features must be N x D, got " + shape_to_string(X.shape()));
  const std::size_t d = X.cols();
  if (A.numel() != 2 * d) {
    throw DimensionError("edge weight vector has " + std::to_string(A.numel()) + " entries, expected 2*D = " +
                         std::to_string(2 * d));
  }
  if (b.value().numel() != 1) throw DimensionError("edge weight bias must be a single value");
  if (src.size() != dst.size() || src.empty()) throw DimensionError("edge_logits: bad pair lists");

  const std::size_t p = src.size();
  const double bias = b.value()[0];
  Tensor out({p});
  for (std::size_t e = 0; e < p; ++e) {
    double s = bias;
    for (std::size_t k = 0; k < d; ++k) s += A[k] * X(src[e], k) + A[d + k] * X(dst[e], k);
    out[e] = s;
  }
  std::vector<std::size_t> from(src.begin(), src.end()), to(dst.begin(), dst.end());
  const std::size_t xi = nodes.id, ai = a.id, bi = b.id;
  return tape.record(std::move(out), tape.any_requires_grad({nodes, a, b}),
                     [xi, ai, bi, d, from = std::move(from), to = std::move(to)](Tape& t, std::size_t self) {
                       auto g = t.grad_of(self);
                       const Tensor& Xv = t.value(Var{&t, xi});
                       const Tensor& Av = t.value(Var{&t, ai});
                       if (t.requires_grad(Var{&t, xi})) {
                         auto& gx = t.grad_buffer(xi);
                         for (std::size_t e = 0; e < from.size(); ++e)
                           for (std::size_t k = 0; k < d; ++k) {
                             gx[from[e] * d + k] += g[e] * Av[k];
                             gx[to[e] * d + k] += g[e] * Av[d + k];
                           }
                       }
                       if (t.requires_grad(Var{&t, ai})) {
                         auto& ga = t.grad_buffer(ai);
                         for (std::size_t e = 0; e < from.size(); ++e)
                           for (std::size_t k = 0; k < d; ++k) {
                             ga[k] += g[e] * Xv[from[e] * d + k];
                             ga[d + k] += g[e] * Xv[to[e] * d + k];
                           }
                       }
                       if (t.requires_grad(Var{&t, bi})) {
                         auto& gb = t.grad_buffer(bi);
                         for (std::size_t e = 0; e < from.size(); ++e) gb[0] += g[e];
                       }
                     });
}

EdgeWeightVars edge_weights(Var nodes, const PatchGraph& graph, const EdgeWeightParams& params) {
  Tape& tape = *nodes.tape;
  if (nodes.value().rank() != 2 || nodes.value().rows() != graph.node_count) {
    throw DimensionError("edge_weights: features " + shape_to_string(nodes.shape()) + " do not match a graph of " +
                         std::to_string(graph.node_count) + " nodes");
  }
  std::vector<std::size_t> src, self(graph.node_count);
  src.reserve(graph.edge_count());
  for (std::size_t i = 0; i < graph.node_count; ++i) src.insert(src.end(), graph.neighbors(i).size(), i);
  std::iota(self.begin(), self.end(), 0);

  Var a = tape.param(params.a);
  Var b = tape.param(params.b);
  EdgeWeightVars out{};
  if (graph.edge_count() > 0) {
    out.edge = sigmoid(edge_logits(nodes, src, graph.targets, a, b));
  } else {
    out.edge = tape.constant(Tensor({1}, 0.0));  // placeholder, never read
  }
  out.self = sigmoid(edge_logits(nodes, self, self, a, b));
  return out;
}

PatchGraph compute_edge_weights(const Tensor& nodes, PatchGraph graph, const EdgeWeightParams& params) {
  Tape tape(Tape::Mode::inference);
  EdgeWeightVars w = edge_weights(tape.param(nodes), graph, params);
  if (graph.edge_count() > 0) graph.edge_alpha = w.edge.value().values();
  else graph.edge_alpha.clear();
  graph.self_alpha = w.self.value().values();
  graph.degree.resize(graph.node_count);
  for (std::size_t i = 0; i < graph.node_count; ++i) graph.degree[i] = static_cast<double>(graph.neighbors(i).size());
  return graph;
}

void write_graph_dump(std::ostream& out, const PatchGraph& graph) {
  if (!graph.has_weights()) throw StateError("graph dump needs edge weights");
  char buf[64];
  for (std::size_t i = 0; i < graph.node_count; ++i) {
    for (std::size_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
      std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.6f\n", i, graph.targets[e], graph.edge_alpha[e]);
      out << buf;
    }
  }
}

}  // namespace vigage
