// SPDX-License-Identifier: Apache-2.0
#include "vigage/network.hpp"

#include <cmath>
#include <string>

#include "vigage/errors.hpp"
#include "vigage/ops.hpp"

namespace vigage {

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 16;
  c.channels = 1;
  c.grid_side = 4;
  c.knn = 3;
  c.dim = 8;
  c.heads_gc = 2;
  c.heads_attn = 2;
  c.blocks = 2;
  c.stages = 1;
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.image_height = 32;
  c.image_width = 32;
  c.channels = 1;
  c.grid_side = 4;
  c.knn = 3;
  c.dim = 32;
  c.heads_gc = 2;
  c.heads_attn = 2;
  c.blocks = 2;
  c.stages = 2;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (image_height == 0 || image_width == 0) fail("image size must be positive");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3, got " + std::to_string(channels));
  if (grid_side == 0) fail("grid_side must be positive");
  if (image_height % grid_side || image_width % grid_side) {
    fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) + " is not divisible by grid_side " +
         std::to_string(grid_side));
  }
  if (dim == 0) fail("dim must be positive");
  if (heads_gc == 0 || dim % heads_gc) fail("dim " + std::to_string(dim) + " not divisible by heads_gc " + std::to_string(heads_gc));
  if (heads_attn == 0 || dim % heads_attn) {
    fail("dim " + std::to_string(dim) + " not divisible by heads_attn " + std::to_string(heads_attn));
  }
  if (stages == 0 || blocks == 0) fail("blocks and stages must be positive");
  if (blocks % stages) fail("blocks " + std::to_string(blocks) + " not divisible by stages " + std::to_string(stages));
  if (knn == 0) fail("knn must be at least 1");
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t side = grid_side >> s;
    if (s + 1 < stages && side % 2) {
      fail("stage " + std::to_string(s) + " grid side " + std::to_string(side) + " is odd and cannot be downsampled");
    }
    if (side * side < knn + 1) {
      fail("stage " + std::to_string(s) + " has " + std::to_string(side * side) + " nodes, fewer than knn+1 = " +
           std::to_string(knn + 1));
    }
  }
}

std::vector<NamedTensor> ModelParams::named() {
  std::vector<NamedTensor> out;
  auto add = [&](std::string name, Tensor& t) { out.push_back({std::move(name), &t}); };
  add("stem.patch_proj", stem.patch_proj);
  add("stem.patch_bias", stem.patch_bias);
  add("stem.pointwise", stem.pointwise);
  add("stem.pointwise_bias", stem.pointwise_bias);
  add("pos_emb", pos_emb);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    BlockParams& blk = blocks[b];
    add(p + "edge.a", blk.edge.a);
    add(p + "edge.b", blk.edge.b);
    add(p + "gc.w_r1", blk.gc.w_r1);
    add(p + "gc.w_01", blk.gc.w_01);
    add(p + "gc.w_r2", blk.gc.w_r2);
    add(p + "gc.w_02", blk.gc.w_02);
    for (std::size_t i = 0; i < blk.gc.update.size(); ++i) add(p + "gc.update." + std::to_string(i), blk.gc.update[i]);
    for (std::size_t i = 0; i < blk.attn.wq.size(); ++i) add(p + "attn.wq." + std::to_string(i), blk.attn.wq[i]);
    for (std::size_t i = 0; i < blk.attn.wk.size(); ++i) add(p + "attn.wk." + std::to_string(i), blk.attn.wk[i]);
    for (std::size_t i = 0; i < blk.attn.wv.size(); ++i) add(p + "attn.wv." + std::to_string(i), blk.attn.wv[i]);
    add(p + "w_in", blk.w_in);
    add(p + "w_out", blk.w_out);
    add(p + "ffn.w1", blk.ffn_w1);
    add(p + "ffn.w2", blk.ffn_w2);
  }
  for (std::size_t s = 0; s < downsample.size(); ++s) add("downsample." + std::to_string(s), downsample[s]);
  add("head.k1", head.k1);
  add("head.b1", head.b1);
  add("head.k2", head.k2);
  add("head.b2", head.b2);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& nt : const_cast<ModelParams*>(this)->named()) out.emplace_back(std::move(nt.name), nt.tensor);
  return out;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->numel();
  return n;
}

void ModelParams::clear_grads() const {
  for (const auto& [name, t] : named()) t->clear_grad();
}

ModelParams make_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.dim;
  ModelParams p;
  p.stem.patch_proj = Tensor({config.patch_dim(), d});
  p.stem.patch_bias = Tensor({d});
  p.stem.pointwise = Tensor({d, d});
  p.stem.pointwise_bias = Tensor({d});
  p.pos_emb = Tensor({config.node_count(), d});
  const std::size_t dm = d / config.heads_attn;
  for (std::size_t b = 0; b < config.blocks; ++b) {
    BlockParams blk;
    blk.edge.a = Tensor({2 * d});
    blk.edge.b = Tensor({1});
    blk.gc = make_gc_params(d, config.heads_gc);
    for (std::size_t h = 0; h < config.heads_attn; ++h) {
      blk.attn.wq.emplace_back(Shape{d, dm});
      blk.attn.wk.emplace_back(Shape{d, dm});
      blk.attn.wv.emplace_back(Shape{d, dm});
    }
    blk.w_in = Tensor({d, d});
    blk.w_out = Tensor({d, d});
    blk.ffn_w1 = Tensor({d, 4 * d});
    blk.ffn_w2 = Tensor({4 * d, d});
    p.blocks.push_back(std::move(blk));
  }
  for (std::size_t s = 1; s < config.stages; ++s) p.downsample.emplace_back(Shape{4 * d, d});
  p.head.k1 = Tensor({d, d});
  p.head.b1 = Tensor({d});
  p.head.k2 = Tensor({d, 1});
  p.head.b2 = Tensor({1});
  return p;
}

Var stem(Tape& tape, const Tensor& image, const ModelParams& params, const ModelConfig& config) {
  if (image.rank() != 3 || image.dim(2) * (image.dim(0) / config.grid_side) * (image.dim(1) / config.grid_side) !=
                               params.stem.patch_proj.rows()) {
    throw DimensionError("image " + shape_to_string(image.shape()) + " does not match the stem projection " +
                         shape_to_string(params.stem.patch_proj.shape()));
  }
  Var patches = tape.constant(patchify(image, config.grid_side));
  Var x = relu(add_row_bias(matmul(patches, tape.param(params.stem.patch_proj)), tape.param(params.stem.patch_bias)));
  x = add_row_bias(matmul(x, tape.param(params.stem.pointwise)), tape.param(params.stem.pointwise_bias));
  if (params.pos_emb.shape() != x.shape()) {
    throw DimensionError("position embedding " + shape_to_string(params.pos_emb.shape()) + " does not match stem output " +
                         shape_to_string(x.shape()));
  }
  return add(x, tape.param(params.pos_emb));
}

Var grapher_block(Var o, const BlockParams& block, const ModelConfig& config, const PatchGraph* fixed_graph,
                  PatchGraph* used_graph) {
  Tape& tape = *o.tape;
  PatchGraph local;
  if (!fixed_graph) local = knn_graph(o.value(), config.knn, config.metric);
  const PatchGraph& graph = fixed_graph ? *fixed_graph : local;
  EdgeWeightVars alpha = edge_weights(o, graph, block.edge);
  Var x = matmul(o, tape.param(block.w_in));
  Var h = gc_layer(x, graph, alpha, block.gc, block.attn, config.layer_options());
  Var branch = matmul(relu(h), tape.param(block.w_out));
  if (used_graph) {
    *used_graph = graph;
    used_graph->edge_alpha = graph.edge_count() ? alpha.edge.value().values() : std::vector<double>{};
    used_graph->self_alpha = alpha.self.value().values();
  }
  return config.residual ? add(branch, o) : branch;
}

Var ffn_block(Var o, const BlockParams& block, bool residual) {
  Tape& tape = *o.tape;
  Var branch = matmul(relu(matmul(o, tape.param(block.ffn_w1))), tape.param(block.ffn_w2));
  return residual ? add(branch, o) : branch;
}

Var downsample(Var o, const Tensor& projection, std::size_t grid_side) {
  if (grid_side % 2) throw ConfigError("cannot downsample an odd grid side " + std::to_string(grid_side));
  const Tensor& X = o.value();
  if (X.rank() != 2 || X.rows() != grid_side * grid_side) {
    throw DimensionError("downsample: features " + shape_to_string(X.shape()) + " do not form a " +
                         std::to_string(grid_side) + "x" + std::to_string(grid_side) + " grid");
  }
  const std::size_t half = grid_side / 2, d = X.cols();
  std::vector<std::size_t> order;
  order.reserve(X.rows());
  for (std::size_t r = 0; r < half; ++r)
    for (std::size_t c = 0; c < half; ++c)
      for (std::size_t dr = 0; dr < 2; ++dr)
        for (std::size_t dc = 0; dc < 2; ++dc) order.push_back((2 * r + dr) * grid_side + 2 * c + dc);
  Var merged = reshape(gather_rows(o, order), {half * half, 4 * d});
  return matmul(merged, o.tape->param(projection));
}

Var predict_age(Var o, const HeadParams& head) {
  Tape& tape = *o.tape;
  Var h = relu(add_row_bias(matmul(o, tape.param(head.k1)), tape.param(head.b1)));
  Var per_node = add_row_bias(matmul(h, tape.param(head.k2)), tape.param(head.b2));
  return mean(per_node);
}

Var forward(Tape& tape, const Tensor& image, const ModelParams& params, const ModelConfig& config,
            ForwardTrace* trace) {
  if (params.blocks.size() != config.blocks || params.downsample.size() + 1 != config.stages) {
    throw DimensionError("parameters hold " + std::to_string(params.blocks.size()) + " blocks and " +
                         std::to_string(params.downsample.size()) + " downsamplers; config expects " +
                         std::to_string(config.blocks) + " blocks over " + std::to_string(config.stages) + " stages");
  }
  Var o = stem(tape, image, params, config);
  if (trace) trace->stem_output = o.value();
  std::size_t b = 0;
  for (std::size_t s = 0; s < config.stages; ++s) {
    if (s > 0) o = downsample(o, params.downsample[s - 1], config.stage_grid_side(s - 1));
    std::optional<PatchGraph> stage_graph;
    if (config.static_graph) stage_graph = knn_graph(o.value(), config.knn, config.metric);
    for (std::size_t k = 0; k < config.blocks_per_stage(); ++k, ++b) {
      PatchGraph used;
      o = grapher_block(o, params.blocks[b], config, stage_graph ? &*stage_graph : nullptr, trace ? &used : nullptr);
      if (trace) {
        trace->grapher_outputs.push_back(o.value());
        trace->graphs.push_back(std::move(used));
      }
      o = ffn_block(o, params.blocks[b], config.residual);
      if (trace) trace->ffn_outputs.push_back(o.value());
    }
  }
  return predict_age(o, params.head);
}

double predict(const Tensor& image, const ModelParams& params, const ModelConfig& config, ForwardTrace* trace) {
  Tape tape(Tape::Mode::inference);
  return forward(tape, image, params, config, trace).value()[0];
}

Tensor stem(const Tensor& image, const ModelParams& params, const ModelConfig& config) {
  Tape tape(Tape::Mode::inference);
  return stem(tape, image, params, config).value();
}

Tensor grapher_block(const Tensor& o, const BlockParams& block, const ModelConfig& config) {
  Tape tape(Tape::Mode::inference);
  return grapher_block(tape.param(o), block, config).value();
}

Tensor ffn_block(const Tensor& o, const BlockParams& block, bool residual) {
  Tape tape(Tape::Mode::inference);
  return ffn_block(tape.param(o), block, residual).value();
}

Tensor downsample(const Tensor& o, const Tensor& projection, std::size_t grid_side) {
  Tape tape(Tape::Mode::inference);
  return downsample(tape.param(o), projection, grid_side).value();
}

double predict_age(const Tensor& o, const HeadParams& head) {
  Tape tape(Tape::Mode::inference);
  return predict_age(tape.param(o), head).value()[0];
}

double feature_diversity(const Tensor& nodes) {
  const std::size_t n = nodes.rows(), d = nodes.cols();
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += nodes(i, k);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (nodes(i, k) - mu) * (nodes(i, k) - mu);
    total += std::sqrt(var / static_cast<double>(n));
  }
  return total / static_cast<double>(d);
}

}  // namespace vigage
