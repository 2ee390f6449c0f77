// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vigage/tape.hpp"

namespace vigage {

enum class Metric { cosine, euclidean };

Metric parse_metric(std::string_view name);
std::string_view metric_name(Metric metric);

inline constexpr double kPixelScale = 1.0 / 255.0;

/// Splits an H x W x C image into grid_side^2 patch nodes in row-major cell
/// order. Row i of the result is cell (i / grid_side, i % grid_side) with its
/// pixels flattened in (row, col, channel) order and multiplied by `scale`.
Tensor patchify(const Tensor& image, std::size_t grid_side, double scale = kPixelScale);

/// Inverse of patchify with scale 1.
Tensor unpatchify(const Tensor& nodes, std::size_t grid_side, std::size_t height, std::size_t width,
                  std::size_t channels);

/// Directed KNN graph over patch nodes in compressed row form.
///
/// Node i's neighbors are targets[offsets[i] .. offsets[i+1]), most similar
/// first. Self-loops are implicit. Edge weights are empty until
/// compute_edge_weights fills them; edge_alpha follows the target layout.
struct PatchGraph {
  std::size_t node_count = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> targets;
  std::vector<double> edge_alpha;
  std::vector<double> self_alpha;
  std::vector<double> degree;
  std::vector<std::string> warnings;

  std::size_t edge_count() const noexcept { return targets.size(); }
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return std::span<const std::size_t>(targets).subspan(offsets[i], offsets[i + 1] - offsets[i]);
  }
  bool has_weights() const noexcept {
    return edge_alpha.size() == targets.size() && self_alpha.size() == node_count;
  }
};

/// Similarity used for ranking neighbors: cosine similarity, or negative
/// squared L2 distance. Zero-norm rows have cosine similarity 0 to everything.
double node_similarity(std::span<const double> x, std::span<const double> y, Metric metric);

/// Exhaustive KNN. Each node gets its min(k, N-1) most similar other nodes,
/// ties broken by lower index. k >= N is clamped with a warning.
PatchGraph knn_graph(const Tensor& nodes, std::size_t k, Metric metric);

/// Scoring function for edge weights: alpha_ij = sigmoid(a . [x_i || x_j] + b).
struct EdgeWeightParams {
  Tensor a;  // [2D]
  Tensor b;  // [1]
};

struct EdgeWeightVars {
  Var edge;  // [E], in graph target order
  Var self;  // [N]
};

/// Per-pair logits a . [x_src || x_dst] + b on the tape.
Var edge_logits(Var nodes, std::span<const std::size_t> src, std::span<const std::size_t> dst, Var a, Var b);

/// Differentiable edge and self-loop weights of `graph` over `nodes`.
EdgeWeightVars edge_weights(Var nodes, const PatchGraph& graph, const EdgeWeightParams& params);

/// Returns a copy of `graph` with alpha and degree filled in.
PatchGraph compute_edge_weights(const Tensor& nodes, PatchGraph graph, const EdgeWeightParams& params);

/// One line per edge: `i<TAB>j<TAB>alpha`, alpha with 6 decimals, sorted by (i, rank).
void write_graph_dump(std::ostream& out, const PatchGraph& graph);

}  // namespace vigage
