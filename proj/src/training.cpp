// SPDX-License-Identifier: Apache-2.0
#include "vigage/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "vigage/errors.hpp"
#include "vigage/ops.hpp"

namespace vigage {

void TrainConfig::validate() const {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!(learning_rate >= 0.0 && learning_rate < 1.0)) throw ConfigError("learning rate must be in [0, 1)");
  if (!in_unit(beta1) || !in_unit(beta2)) throw ConfigError("moment decay rates must be in (0, 1)");
  if (!in_unit(epsilon)) throw ConfigError("epsilon must be in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must be in [0, 1)");
}

double mae(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) {
    throw ArgumentError("mae: " + std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) +
                        " labels");
  }
  if (preds.empty()) throw ArgumentError("mae: no samples");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::fabs(labels[i] - preds[i]);
  return total / static_cast<double>(preds.size());
}

LrSchedule parse_lr_schedule(const std::string& name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown learning-rate schedule '" + name + "' (expected constant or cosine)");
}

const char* lr_schedule_name(LrSchedule s) noexcept { return s == LrSchedule::cosine ? "cosine" : "constant"; }

double scheduled_learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (config.schedule == LrSchedule::constant || total_steps == 0) return config.learning_rate;
  const double progress = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

void fill_uniform(Tensor& t, Rng& rng, double half_width) {
  for (double& v : t.data()) v = rng.uniform(-half_width, half_width);
}

void fill_fan(Tensor& t, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  fill_uniform(t, rng, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

void fill_matrix(Tensor& t, Rng& rng) { fill_fan(t, rng, t.rows(), t.cols()); }

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = make_params(config);
  Rng rng(seed);
  fill_matrix(p.stem.patch_proj, rng);
  fill_matrix(p.stem.pointwise, rng);
  fill_uniform(p.pos_emb, rng, 0.02);
  for (BlockParams& b : p.blocks) {
    fill_fan(b.edge.a, rng, b.edge.a.numel(), 1);
    fill_matrix(b.gc.w_r1, rng);
    fill_matrix(b.gc.w_01, rng);
    fill_matrix(b.gc.w_r2, rng);
    fill_matrix(b.gc.w_02, rng);
    for (Tensor& w : b.gc.update) fill_matrix(w, rng);
    for (Tensor& w : b.attn.wq) fill_matrix(w, rng);
    for (Tensor& w : b.attn.wk) fill_matrix(w, rng);
    for (Tensor& w : b.attn.wv) fill_matrix(w, rng);
    fill_matrix(b.w_in, rng);
    fill_matrix(b.w_out, rng);
    fill_matrix(b.ffn_w1, rng);
    fill_matrix(b.ffn_w2, rng);
  }
  for (Tensor& w : p.downsample) fill_matrix(w, rng);
  fill_matrix(p.head.k1, rng);
  fill_matrix(p.head.k2, rng);
  return p;
}

TrainState make_train_state(const ModelParams& params, std::uint64_t seed) {
  TrainState s;
  s.rng = Rng(seed);
  for (const auto& [name, t] : params.named()) {
    s.first_moment.emplace_back(t->numel(), 0.0);
    s.second_moment.emplace_back(t->numel(), 0.0);
  }
  return s;
}

void optimizer_step(ModelParams& params, TrainState& state, const TrainConfig& config) {
  auto named = params.named();
  if (state.first_moment.size() != named.size() || state.second_moment.size() != named.size()) {
    throw DimensionError("optimizer state tracks " + std::to_string(state.first_moment.size()) + " tensors, model has " +
                         std::to_string(named.size()));
  }
  for (std::size_t k = 0; k < named.size(); ++k) {
    const Tensor& t = *named[k].tensor;
    if (state.first_moment[k].size() != t.numel()) {
      throw DimensionError("optimizer moments for " + named[k].name + " do not match its shape");
    }
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in " + named[k].name);
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < named.size(); ++k) {
    Tensor& p = *named[k].tensor;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = has ? p.grad()[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

DatasetSplit split_dataset(const Dataset& dataset, double val_fraction) {
  const std::size_t n = dataset.size();
  const auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(n) * val_fraction));
  DatasetSplit s;
  s.train.provenance = s.val.provenance = dataset.provenance;
  for (std::size_t i = 0; i < n; ++i) (i < n - std::min(n_val, n) ? s.train : s.val).samples.push_back(dataset.samples[i]);
  return s;
}

double accumulate_sample_gradient(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                                  std::size_t batch_size) {
  Tape tape;
  Var pred = forward(tape, sample.image, params, config);
  Var err = abs(sub(pred, tape.constant(Tensor::scalar(sample.label))));
  Var loss = scale(err, 1.0 / static_cast<double>(batch_size));
  tape.backward(loss);
  tape.accumulate_param_grads();
  return err.value()[0];
}

double evaluate(const Dataset& dataset, const ModelParams& params, const ModelConfig& config) {
  if (dataset.empty()) throw ArgumentError("evaluate: empty dataset");
  std::vector<double> preds, labels;
  preds.reserve(dataset.size());
  labels.reserve(dataset.size());
  for (const Sample& s : dataset.samples) {
    preds.push_back(predict(s.image, params, config));
    labels.push_back(s.label);
  }
  return mae(preds, labels);
}

TrainResult train(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  const Shape expected{model_config.image_height, model_config.image_width, model_config.channels};
  if (dataset.samples.front().image.shape() != expected) {
    throw ConfigError("dataset images are " + shape_to_string(dataset.samples.front().image.shape()) +
                      " but the model expects " + shape_to_string(expected));
  }
  DatasetSplit split = split_dataset(dataset, train_config.val_fraction);
  if (split.train.empty()) throw ConfigError("training split is empty");

  TrainResult result{init_params(model_config, model_config.seed), TrainState{}};
  // Start the output at the label mean so early steps shape features instead
  // of dragging the whole network toward the age range.
  double label_sum = 0.0;
  for (const Sample& s : split.train.samples) label_sum += s.label;
  result.params.head.b2[0] = label_sum / static_cast<double>(split.train.size());
  result.state = make_train_state(result.params, derive_seed(train_config.seed, 1));
  TrainState& state = result.state;

  const std::size_t n_train = split.train.size();
  const std::size_t steps_per_epoch = (n_train + train_config.batch_size - 1) / train_config.batch_size;
  const std::size_t total_steps = steps_per_epoch * train_config.epochs;
  TrainConfig step_config = train_config;

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    state.rng.shuffle(std::span<std::size_t>(order));
    double abs_err_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += train_config.batch_size) {
      const std::size_t end = std::min(n_train, start + train_config.batch_size);
      result.params.clear_grads();
      for (std::size_t i = start; i < end; ++i) {
        const double err = accumulate_sample_gradient(split.train.samples[order[i]], result.params, model_config,
                                                      end - start);
        if (!std::isfinite(err)) {
          throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(state.step + 1));
        }
        abs_err_sum += err;
      }
      step_config.learning_rate = scheduled_learning_rate(train_config, state.step, total_steps);
      try {
        optimizer_step(result.params, state, step_config);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(state.step + 1));
      }
    }
    result.params.clear_grads();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = abs_err_sum / static_cast<double>(n_train);
    rec.val_mae = split.val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : evaluate(split.val, result.params, model_config);
    if (!std::isfinite(rec.train_mae) || (!split.val.empty() && !std::isfinite(rec.val_mae))) {
      throw DivergenceError("evaluation became non-finite at epoch " + std::to_string(epoch));
    }
    state.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace vigage
