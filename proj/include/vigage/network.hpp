// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vigage/attention.hpp"
#include "vigage/gradcheck.hpp"
#include "vigage/graphconv.hpp"
#include "vigage/patchgraph.hpp"
#include "vigage/tape.hpp"

namespace vigage {

/// Model hyperparameters. The stage count S splits the B blocks evenly and
/// places one 2x2 node-merging downsample between consecutive stages.
struct ModelConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 1;

  std::size_t grid_side = 8;  // G_p: patches per image side
  std::size_t knn = 9;        // K_nn
  Metric metric = Metric::cosine;
  std::size_t dim = 64;
  std::size_t heads_gc = 4;
  std::size_t heads_attn = 4;
  std::size_t blocks = 4;
  std::size_t stages = 2;

  bool use_attention = true;
  bool scaled_attention = false;
  bool normalize_step2 = false;
  bool static_graph = false;
  bool residual = true;

  std::uint64_t seed = 0;

  /// Verification-scale model: 16x16 input, G_p=4, D=8, t=2, K_nn=3, B=2, S=1.
  static ModelConfig tiny();
  /// Small model used for the desk-scale training experiments on 32x32 input.
  static ModelConfig desk();

  /// Throws ConfigError on any inconsistency.
  void validate() const;

  std::size_t patch_dim() const { return (image_height / grid_side) * (image_width / grid_side) * channels; }
  std::size_t node_count() const { return grid_side * grid_side; }
  std::size_t blocks_per_stage() const { return blocks / stages; }
  std::size_t stage_grid_side(std::size_t stage) const { return grid_side >> stage; }
  GCLayerOptions layer_options() const { return {use_attention, scaled_attention, normalize_step2}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct StemParams {
  Tensor patch_proj;      // [P x D]
  Tensor patch_bias;      // [D]
  Tensor pointwise;       // [D x D]
  Tensor pointwise_bias;  // [D]
};

struct BlockParams {
  EdgeWeightParams edge;
  GCParams gc;
  AttentionParams attn;
  Tensor w_in;    // [D x D]
  Tensor w_out;   // [D x D]
  Tensor ffn_w1;  // [D x 4D]
  Tensor ffn_w2;  // [4D x D]
};

struct HeadParams {
  Tensor k1;  // [D x D]
  Tensor b1;  // [D]
  Tensor k2;  // [D x 1]
  Tensor b2;  // [1]
};

struct ModelParams {
  StemParams stem;
  Tensor pos_emb;  // [N x D]
  std::vector<BlockParams> blocks;
  std::vector<Tensor> downsample;  // [4D x D], one per stage transition
  HeadParams head;

  /// Every learnable tensor with a stable dotted name, in a fixed order.
  std::vector<NamedTensor> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::size_t scalar_count() const;
  void clear_grads() const;
};

/// Zero-filled parameters with the shapes `config` implies.
ModelParams make_params(const ModelConfig& config);

/// Optional intermediates captured by forward.
struct ForwardTrace {
  Tensor stem_output;
  std::vector<Tensor> grapher_outputs;
  std::vector<Tensor> ffn_outputs;
  std::vector<PatchGraph> graphs;  // graph used by each grapher block
};

/// patchify -> linear projection + bias -> ReLU -> pointwise conv + bias -> + pos_emb
Var stem(Tape& tape, const Tensor& image, const ModelParams& params, const ModelConfig& config);

/// relu(gc_layer(o W_in)) W_out + o, with the graph rebuilt from o unless one is supplied.
Var grapher_block(Var o, const BlockParams& block, const ModelConfig& config, const PatchGraph* fixed_graph = nullptr,
                  PatchGraph* used_graph = nullptr);

/// relu(o W_1) W_2 + o
Var ffn_block(Var o, const BlockParams& block, bool residual = true);

/// Merges each 2x2 node cell by feature concatenation and projects 4D -> D.
Var downsample(Var o, const Tensor& projection, std::size_t grid_side);

/// mean over nodes of (relu(o K1 + b1) K2 + b2).
Var predict_age(Var o, const HeadParams& head);

/// Full pipeline; returns a single-element prediction.
Var forward(Tape& tape, const Tensor& image, const ModelParams& params, const ModelConfig& config,
            ForwardTrace* trace = nullptr);

/// Inference-mode forward.
double predict(const Tensor& image, const ModelParams& params, const ModelConfig& config,
               ForwardTrace* trace = nullptr);

// Value-level wrappers.
Tensor stem(const Tensor& image, const ModelParams& params, const ModelConfig& config);
Tensor grapher_block(const Tensor& o, const BlockParams& block, const ModelConfig& config);
Tensor ffn_block(const Tensor& o, const BlockParams& block, bool residual = true);
Tensor downsample(const Tensor& o, const Tensor& projection, std::size_t grid_side);
double predict_age(const Tensor& o, const HeadParams& head);

/// Mean over features of the standard deviation across nodes.
double feature_diversity(const Tensor& nodes);

}  // namespace vigage
