// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vigage/dataio.hpp"
#include "vigage/network.hpp"
#include "vigage/rng.hpp"

namespace vigage {

enum class LrSchedule { constant, cosine };

LrSchedule parse_lr_schedule(const std::string& name);
const char* lr_schedule_name(LrSchedule s) noexcept;

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  LrSchedule schedule = LrSchedule::constant;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;  // mean absolute error over the epoch's mini-batches
  double val_mae = 0.0;  // NaN when there is no validation split
};

struct TrainState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  Rng rng;
  std::vector<EpochRecord> history;
};

/// (1/m) * sum |y_i - yhat_i|. Throws ArgumentError on empty or mismatched input.
double mae(std::span<const double> preds, std::span<const double> labels);

/// Deterministic initialization: fan-based uniform weights with half-width
/// sqrt(6 / (fan_in + fan_out)), position embeddings uniform in [-0.02, 0.02],
/// biases zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Zero-filled moments matching `params`.
TrainState make_train_state(const ModelParams& params, std::uint64_t seed);

/// Learning rate for 0-based step `step` out of `total_steps`. Cosine decays
/// from learning_rate toward zero over the run.
double scheduled_learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps);

/// One adaptive-moment update using the gradients in each parameter's grad
/// slot. Throws DivergenceError naming the first parameter with a non-finite
/// gradient; parameters are left untouched in that case.
void optimizer_step(ModelParams& params, TrainState& state, const TrainConfig& config);

struct DatasetSplit {
  Dataset train;
  Dataset val;
};

/// The last round(n * val_fraction) samples form the validation split.
DatasetSplit split_dataset(const Dataset& dataset, double val_fraction);

/// Adds d(batch MAE)/d(theta) contributions of one sample into the grad slots
/// and returns the sample's absolute error.
double accumulate_sample_gradient(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                                  std::size_t batch_size);

struct TrainResult {
  ModelParams params;
  TrainState state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded mini-batch training on the MAE objective. Throws ConfigError on an
/// empty training split and DivergenceError on a non-finite loss.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

/// MAE of forward over every sample. Throws ArgumentError on an empty dataset.
double evaluate(const Dataset& dataset, const ModelParams& params, const ModelConfig& config);

}  // namespace vigage
