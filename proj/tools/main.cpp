// SPDX-License-Identifier: Apache-2.0
// vigage: command-line front end for the patch-graph age regressor.
//
// Exit codes: 0 ok, 2 usage or validation, 3 training divergence,
// 4 verification failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vigage/checkpoint.hpp"
#include "vigage/dataio.hpp"
#include "vigage/errors.hpp"
#include "vigage/gradcheck.hpp"
#include "vigage/network.hpp"
#include "vigage/ops.hpp"
#include "vigage/patchgraph.hpp"
#include "vigage/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vigage;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitVerify = 4;

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t repeats = 1;
  std::string data;
  std::string checkpoint;
  std::string log;
};

ModelConfig preset(const std::string& name) {
  if (name == "default") return ModelConfig{};
  if (name == "desk") return ModelConfig::desk();
  if (name == "tiny") return ModelConfig::tiny();
  throw ConfigError("unknown preset '" + name + "' (expected default, desk or tiny)");
}

// One setting reachable both as `--key` and as a top-level JSON key.
struct Setting {
  std::string key;
  CLI::Option* option = nullptr;
  std::function<void()> apply_flag;
  std::function<void(const json&)> apply_json;
};

template <typename T>
T json_as(const std::string& key, const json& v) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

// Collects the settings a subcommand accepts. Values land in RunConfig only
// after the preset is resolved: file first, then flags on top.
class Settings {
 public:
  Settings(CLI::App& app, RunConfig& rc) : app_(app), rc_(rc) {}

  template <typename T>
  void add(const std::string& key, const std::string& help, std::function<void(RunConfig&, const T&)> set) {
    auto holder = std::make_shared<T>();
    Setting s;
    s.key = key;
    s.option = app_.add_option("--" + key, *holder, help);
    s.apply_flag = [this, holder, set] { set(rc_, *holder); };
    s.apply_json = [this, key, set](const json& v) { set(rc_, json_as<T>(key, v)); };
    settings_.push_back(std::move(s));
  }

  void add_model_keys() {
    add<std::string>("preset", "model preset: default, desk or tiny", [](RunConfig&, const std::string&) {});
    add<std::size_t>("grid-side", "patches per image side", [](RunConfig& r, const std::size_t& v) { r.model.grid_side = v; });
    add<std::size_t>("knn", "neighbors per node", [](RunConfig& r, const std::size_t& v) { r.model.knn = v; });
    add<std::string>("metric", "cosine or euclidean",
                     [](RunConfig& r, const std::string& v) { r.model.metric = parse_metric(v); });
    add<std::size_t>("dim", "node feature width", [](RunConfig& r, const std::size_t& v) { r.model.dim = v; });
    add<std::size_t>("heads-gc", "graph-conv update heads", [](RunConfig& r, const std::size_t& v) { r.model.heads_gc = v; });
    add<std::size_t>("heads-attn", "attention heads", [](RunConfig& r, const std::size_t& v) { r.model.heads_attn = v; });
    add<std::size_t>("blocks", "grapher+ffn blocks", [](RunConfig& r, const std::size_t& v) { r.model.blocks = v; });
    add<std::size_t>("stages", "pyramid stages", [](RunConfig& r, const std::size_t& v) { r.model.stages = v; });
    add<bool>("attention", "node self-attention in each layer", [](RunConfig& r, const bool& v) { r.model.use_attention = v; });
    add<bool>("scaled-attention", "divide attention logits by sqrt(head dim)",
              [](RunConfig& r, const bool& v) { r.model.scaled_attention = v; });
    add<bool>("normalize-step2", "weight and normalize the second aggregation",
              [](RunConfig& r, const bool& v) { r.model.normalize_step2 = v; });
    add<bool>("static-graph", "build one graph per stage", [](RunConfig& r, const bool& v) { r.model.static_graph = v; });
    add<bool>("residual", "residual connections", [](RunConfig& r, const bool& v) { r.model.residual = v; });
    add<std::uint64_t>("seed", "seed for every random stream", [](RunConfig& r, const std::uint64_t& v) {
      r.model.seed = v;
      r.train.seed = v;
    });
  }

  void add_train_keys() {
    add<double>("lr", "learning rate", [](RunConfig& r, const double& v) { r.train.learning_rate = v; });
    add<double>("beta1", "first moment decay", [](RunConfig& r, const double& v) { r.train.beta1 = v; });
    add<double>("beta2", "second moment decay", [](RunConfig& r, const double& v) { r.train.beta2 = v; });
    add<double>("eps", "optimizer epsilon", [](RunConfig& r, const double& v) { r.train.epsilon = v; });
    add<std::size_t>("batch-size", "samples per step", [](RunConfig& r, const std::size_t& v) { r.train.batch_size = v; });
    add<std::size_t>("epochs", "passes over the training split", [](RunConfig& r, const std::size_t& v) { r.train.epochs = v; });
    add<double>("val-fraction", "share of samples held out", [](RunConfig& r, const double& v) { r.train.val_fraction = v; });
    add<std::string>("schedule", "constant or cosine",
                     [](RunConfig& r, const std::string& v) { r.train.schedule = parse_lr_schedule(v); });
    add<std::size_t>("repeats", "independent runs with consecutive seeds",
                     [](RunConfig& r, const std::size_t& v) { r.repeats = v; });
  }

  void add_path(const std::string& key, const std::string& help, std::string RunConfig::*field, bool required) {
    add<std::string>(key, help, [field](RunConfig& r, const std::string& v) { r.*field = v; });
    required_.push_back({key, field, required});
  }

  // Resolves the preset, then applies the JSON file and finally the flags.
  void resolve(const std::string& config_path) {
    json file = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      try {
        file = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError("config file " + config_path + ": " + e.what());
      }
      if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (!find(k)) throw ConfigError("unknown config key '" + k + "'");
      }
    }

    std::string preset_name = "default";
    if (file.contains("preset")) preset_name = json_as<std::string>("preset", file["preset"]);
    if (Setting* p = find("preset"); p && p->option->count() > 0) preset_name = p->option->as<std::string>();
    if (find("preset")) rc_.model = preset(preset_name);

    for (Setting& s : settings_) {
      if (file.contains(s.key)) s.apply_json(file[s.key]);
    }
    for (Setting& s : settings_) {
      if (s.option->count() > 0) s.apply_flag();
    }
    for (const auto& r : required_) {
      if (r.required && (rc_.*r.field).empty()) throw ConfigError("--" + r.key + " is required");
    }
  }

 private:
  Setting* find(const std::string& key) {
    for (Setting& s : settings_) {
      if (s.key == key) return &s;
    }
    return nullptr;
  }

  struct Required {
    std::string key;
    std::string RunConfig::*field;
    bool required;
  };

  CLI::App& app_;
  RunConfig& rc_;
  std::vector<Setting> settings_;
  std::vector<Required> required_;
};

Dataset load_data_dir(const std::string& dir) { return load_dataset(dir, fs::path(dir) / "labels.csv"); }

void fit_image_shape(ModelConfig& config, const Tensor& image) {
  config.image_height = image.dim(0);
  config.image_width = image.dim(1);
  config.channels = image.dim(2);
}

void require_shape(const ModelConfig& config, const Tensor& image, const std::string& what) {
  const Shape expected{config.image_height, config.image_width, config.channels};
  if (image.shape() != expected) {
    throw DimensionError(what + " is " + shape_to_string(image.shape()) + " but the checkpoint expects " +
                         shape_to_string(expected));
  }
}

void require_parent_dir(const std::string& path, const std::string& what) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw ConfigError(what + " directory " + parent.string() + " does not exist");
}

int cmd_synth(const std::string& out, std::size_t n, std::uint64_t seed, const std::string& size) {
  std::size_t h = 0, w = 0;
  char tail = 0;
  if (std::sscanf(size.c_str(), "%zux%zu%c", &h, &w, &tail) != 2) {
    throw ConfigError("--size must look like HxW, got '" + size + "'");
  }
  Dataset ds = synth_dataset(n, seed, h, w);
  try {
    save_dataset(out, ds);
  } catch (const fs::filesystem_error& e) {
    throw LoadError(std::string("cannot write ") + out + ": " + e.what());
  }
  std::printf("wrote %zu images to %s\n", n, out.c_str());
  return kExitOk;
}

int cmd_train(RunConfig rc) {
  Dataset ds = load_data_dir(rc.data);
  fit_image_shape(rc.model, ds.samples.front().image);
  rc.model.validate();
  rc.train.validate();
  if (rc.repeats == 0) throw ConfigError("repeats must be at least 1");
  if (!rc.checkpoint.empty()) require_parent_dir(rc.checkpoint, "checkpoint");
  if (!rc.log.empty()) require_parent_dir(rc.log, "log");

  std::ofstream log;
  if (!rc.log.empty()) {
    log.open(rc.log, std::ios::app);
    if (!log) throw LoadError("cannot open log file " + rc.log);
  }

  const bool has_val = split_dataset(ds, rc.train.val_fraction).val.size() > 0;
  const std::uint64_t base_seed = rc.model.seed;
  double final_sum = 0.0;
  double best_final = std::numeric_limits<double>::infinity();
  std::optional<TrainResult> best;
  ModelConfig best_config = rc.model;

  for (std::size_t r = 0; r < rc.repeats; ++r) {
    ModelConfig mc = rc.model;
    TrainConfig tc = rc.train;
    mc.seed = base_seed + r;
    tc.seed = base_seed + r;
    TrainResult result = train(ds, mc, tc, [&](const EpochRecord& e) {
      std::printf("%zu\t%.6f\t%.6f\n", e.epoch, e.train_mae, e.val_mae);
      if (log) log << e.epoch << ',' << fmt6(e.train_mae) << ',' << fmt6(e.val_mae) << '\n';
    });
    const EpochRecord& last = result.state.history.back();
    const double final_mae = has_val ? last.val_mae : last.train_mae;
    final_sum += final_mae;
    if (final_mae < best_final) {
      best_final = final_mae;
      best_config = mc;
      best.emplace(std::move(result));
    }
  }
  std::fflush(stdout);
  if (log) {
    log.flush();
    if (!log) throw LoadError("failed writing log file " + rc.log);
  }

  std::printf("mean_final_%s_mae=%.6f\n", has_val ? "val" : "train", final_sum / static_cast<double>(rc.repeats));
  if (!rc.checkpoint.empty() && best) {
    save_checkpoint(rc.checkpoint, best_config, best->params);
    std::printf("checkpoint=%s seed=%llu\n", rc.checkpoint.c_str(), static_cast<unsigned long long>(best_config.seed));
  }
  return kExitOk;
}

int cmd_eval(const std::string& data, const std::string& checkpoint) {
  Checkpoint ck = load_checkpoint(checkpoint);
  Dataset ds = load_data_dir(data);
  require_shape(ck.config, ds.samples.front().image, "dataset image");
  std::printf("mae=%.4f\n", evaluate(ds, ck.params, ck.config));
  return kExitOk;
}

int cmd_infer(const std::string& image_path, const std::string& checkpoint) {
  Checkpoint ck = load_checkpoint(checkpoint);
  Tensor image = read_pnm(image_path);
  require_shape(ck.config, image, "image");
  std::printf("age=%.2f\n", predict(image, ck.params, ck.config));
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
  const ModelConfig config = [&] {
    ModelConfig c = ModelConfig::tiny();
    c.seed = seed;
    return c;
  }();
  ModelParams params = init_params(config, seed);
  Rng rng(derive_seed(seed, 7));
  Tensor image({config.image_height, config.image_width, config.channels}, 0.0);
  for (double& v : image.data()) v = static_cast<double>(rng.index(256));
  const double label = rng.uniform(kSynthMinAge, kSynthMaxAge);
  // Start the output away from the label so |pred - label| stays smooth.
  params.head.b2[0] = label + 10.0;

  debug::set_corrupt_backward(corrupt);
  const auto objective = [&](Tape& tape) {
    Var pred = forward(tape, image, params, config);
    return abs(sub(pred, tape.constant(Tensor::scalar(label))));
  };
  const GradCheckReport report = grad_check(objective, params.named());
  debug::set_corrupt_backward(false);

  std::printf("checked=%zu max_rel_error=%.3e worst=%s[%zu] analytic=%.9g numeric=%.9g\n", report.checked,
              report.max_rel_error, report.worst_param.c_str(), report.worst_index, report.worst_analytic,
              report.worst_numeric);
  if (!(report.max_rel_error < 1e-4)) {
    std::fprintf(stderr, "gradient check failed: %s has relative error %.3e\n", report.worst_param.c_str(),
                 report.max_rel_error);
    return kExitVerify;
  }
  return kExitOk;
}

// Patch-level graph of the raw image, scored with seeded edge weights.
int cmd_inspect_graph(RunConfig rc, const std::string& image_path, const std::string& out_path) {
  Tensor image = read_pnm(image_path);
  fit_image_shape(rc.model, image);
  rc.model.validate();
  require_parent_dir(out_path, "output");

  const Tensor nodes = patchify(image, rc.model.grid_side);
  PatchGraph graph = knn_graph(nodes, rc.model.knn, rc.model.metric);
  EdgeWeightParams edge{Tensor({2 * nodes.cols()}, 0.0), Tensor({1}, 0.0)};
  Rng rng(derive_seed(rc.model.seed, 3));
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * nodes.cols() + 1));
  for (double& v : edge.a.data()) v = rng.uniform(-bound, bound);
  graph = compute_edge_weights(nodes, std::move(graph), edge);

  for (const std::string& w : graph.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + out_path + " for writing");
  write_graph_dump(out, graph);
  out.flush();
  if (!out) throw LoadError("failed writing " + out_path);
  std::printf("nodes=%zu edges=%zu\n", graph.node_count, graph.edge_count());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-graph convolutional age regressor"};
  app.require_subcommand(1);

  RunConfig rc;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  std::string synth_out, synth_size = "32x32";
  std::size_t synth_n = 0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", synth_n, "number of images")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "image size HxW");

  auto* trn = app.add_subcommand("train", "train and report per-epoch MAE");
  std::string train_config;
  trn->add_option("--config", train_config, "JSON file with flag-named keys");
  Settings train_settings(*trn, rc);
  train_settings.add_path("data", "dataset directory holding labels.csv", &RunConfig::data, true);
  train_settings.add_path("checkpoint", "where to save the best run", &RunConfig::checkpoint, false);
  train_settings.add_path("log", "CSV file the epoch log is appended to", &RunConfig::log, false);
  train_settings.add_model_keys();
  train_settings.add_train_keys();

  auto* ev = app.add_subcommand("eval", "MAE of a checkpoint on a dataset");
  std::string eval_data, eval_ck;
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--checkpoint", eval_ck, "checkpoint file")->required();

  auto* inf = app.add_subcommand("infer", "predict the age of one image");
  std::string infer_image, infer_ck;
  inf->add_option("--image", infer_image, "PGM or PPM file")->required();
  inf->add_option("--checkpoint", infer_ck, "checkpoint file")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  std::uint64_t gc_seed = 0;
  bool gc_corrupt = false;
  gc->add_option("--seed", gc_seed, "initialization seed");
  gc->add_flag("--corrupt-backward", gc_corrupt)->group("");

  auto* ig = app.add_subcommand("inspect-graph", "dump the patch KNN graph of an image");
  std::string ig_image, ig_out, ig_config;
  ig->add_option("--image", ig_image, "PGM or PPM file")->required();
  ig->add_option("--out", ig_out, "dump file")->required();
  ig->add_option("--config", ig_config, "JSON file with flag-named keys");
  Settings graph_settings(*ig, rc);
  graph_settings.add_model_keys();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_n, synth_seed, synth_size);
    if (trn->parsed()) {
      train_settings.resolve(train_config);
      return cmd_train(rc);
    }
    if (ev->parsed()) return cmd_eval(eval_data, eval_ck);
    if (inf->parsed()) return cmd_infer(infer_image, infer_ck);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_corrupt);
    if (ig->parsed()) {
      graph_settings.resolve(ig_config);
      return cmd_inspect_graph(rc, ig_image, ig_out);
    }
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: parse error at byte %zu: %s\n", e.offset(), e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
