// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "oracles.hpp"
#include "support.hpp"
#include "vigage/checkpoint.hpp"
#include "vigage/dataio.hpp"
#include "vigage/graphconv.hpp"
#include "vigage/network.hpp"
#include "vigage/patchgraph.hpp"
#include "vigage/training.hpp"

using namespace vigage;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch_dir() {
  const fs::path p = fs::temp_directory_path() / ("vigage_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

std::vector<oracle::Mat> mats(const std::vector<Tensor>& ts) {
  std::vector<oracle::Mat> out;
  for (const Tensor& t : ts) out.push_back(oracle::to_mat(t));
  return out;
}

GCParams random_gc(std::mt19937_64& gen, std::size_t d, std::size_t heads) {
  GCParams p = make_gc_params(d, heads);
  for (Tensor* w : {&p.w_r1, &p.w_01, &p.w_r2, &p.w_02}) *w = oracle::random_tensor(gen, w->shape());
  for (Tensor& w : p.update) w = oracle::random_tensor(gen, w.shape());
  return p;
}

AttentionParams random_attention(std::mt19937_64& gen, std::size_t d, std::size_t heads) {
  AttentionParams a;
  for (std::size_t h = 0; h < heads; ++h) {
    a.wq.push_back(oracle::random_tensor(gen, {d, d / heads}, -0.5, 0.5));
    a.wk.push_back(oracle::random_tensor(gen, {d, d / heads}, -0.5, 0.5));
    a.wv.push_back(oracle::random_tensor(gen, {d, d / heads}));
  }
  return a;
}

// ---- 1 ------------------------------------------------------------------------

Outcome gradient_correctness(const fs::path& dir) {
  const fs::path out = dir / "gradcheck.txt";
  const auto t0 = Clock::now();
  const int code = run(std::string(VIGAGE_BIN) + " gradcheck > " + out.string() + " 2>&1");
  const double secs = seconds_since(t0);
  std::string text = read_file(out);
  while (!text.empty() && text.back() == '\n') text.pop_back();
  return {code == 0 && secs < 60.0, text + ", " + fmt("%.2f s", secs)};
}

// ---- 2 ------------------------------------------------------------------------

Outcome oracle_equivalence() {
  std::mt19937_64 gen(2);
  std::size_t knn_bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 20)(gen);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 8)(gen);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(gen);
    const oracle::Mat x = oracle::random_mat(gen, n, d);
    for (Metric m : {Metric::cosine, Metric::euclidean}) {
      const PatchGraph g = knn_graph(oracle::to_tensor(x), k, m);
      std::vector<std::vector<std::size_t>> got;
      for (std::size_t i = 0; i < n; ++i) {
        auto nb = g.neighbors(i);
        got.emplace_back(nb.begin(), nb.end());
      }
      knn_bad += got != oracle::knn(x, k, m == Metric::cosine);
    }
  }
  double e1 = 0, e2 = 0, e3 = 0, e4 = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const oracle::Graph g = oracle::random_graph(gen, 8, 5);
    const PatchGraph pg = testing_support::to_patch_graph(g);
    const GCParams p = random_gc(gen, 6, 3);
    const oracle::Mat x = oracle::random_mat(gen, 8, 6);
    e1 = std::max(e1, oracle::max_abs_diff(oracle::gc_step1(x, g, oracle::to_mat(p.w_r1), oracle::to_mat(p.w_01)),
                                           gc_step1(oracle::to_tensor(x), pg, p)));
    for (bool norm : {false, true}) {
      e2 = std::max(e2, oracle::max_abs_diff(oracle::gc_step2(x, g, oracle::to_mat(p.w_r2), oracle::to_mat(p.w_02), norm),
                                             gc_step2(oracle::to_tensor(x), pg, p, norm)));
    }
    e3 = std::max(e3, oracle::max_abs_diff(oracle::multihead_update(x, mats(p.update)),
                                           multihead_update(oracle::to_tensor(x), p)));
    const AttentionParams a = random_attention(gen, 6, 2);
    const oracle::Mat k = oracle::random_mat(gen, 5, 6), v = oracle::random_mat(gen, 5, 6);
    for (bool scaled : {false, true}) {
      e4 = std::max(e4, oracle::max_abs_diff(oracle::attention(x, k, v, mats(a.wq), mats(a.wk), mats(a.wv), scaled),
                                             multi_head_attention(oracle::to_tensor(x), oracle::to_tensor(k),
                                                                  oracle::to_tensor(v), a, scaled)));
    }
  }
  const bool ok = knn_bad == 0 && std::max({e1, e2, e3, e4}) <= 1e-10;
  return {ok, "knn mismatches " + std::to_string(knn_bad) + "/200, max err step1 " + fmt("%.1e", e1) + " step2 " +
                  fmt("%.1e", e2) + " update " + fmt("%.1e", e3) + " attention " + fmt("%.1e", e4)};
}

// ---- 3 ------------------------------------------------------------------------

Outcome residual_identities() {
  std::mt19937_64 gen(3);
  const ModelConfig c = ModelConfig::desk();
  bool ok = true;
  for (int rep = 0; rep < 10; ++rep) {
    ModelParams p = init_params(c, static_cast<std::uint64_t>(rep));
    BlockParams b = p.blocks[0];
    const Tensor o = oracle::random_tensor(gen, {c.node_count(), c.dim});
    b.w_out = Tensor(b.w_out.shape());
    ok = ok && grapher_block(o, b, c) == o;
    b.ffn_w2 = Tensor(b.ffn_w2.shape());
    ok = ok && ffn_block(o, b) == o;
  }
  return {ok, ok ? "grapher and ffn exact identity on 10 instances" : "identity broken"};
}

// ---- 4 ------------------------------------------------------------------------

bool distinct_similarities(const Tensor& x) {
  const std::size_t d = x.cols();
  auto row = [&](std::size_t i) { return std::span<const double>(x.data().data() + i * d, d); };
  std::vector<double> s;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) s.push_back(node_similarity(row(i), row(j), Metric::cosine));
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end(), [](double a, double b) { return b - a < 1e-9; }) == s.end();
}

Outcome permutation_equivariance() {
  std::mt19937_64 gen(4);
  double worst = 0.0;
  int done = 0;
  while (done < 20) {
    const std::size_t n = 12, d = 8;
    const Tensor x = oracle::random_tensor(gen, {n, d});
    if (!distinct_similarities(x)) continue;
    const GCParams p = random_gc(gen, d, 2);
    const AttentionParams a = random_attention(gen, d, 2);
    const EdgeWeightParams e{oracle::random_tensor(gen, {2 * d}), oracle::random_tensor(gen, {1})};
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Tensor xp({n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) xp(perm[i], k) = x(i, k);
    const GCLayerOptions opt{true, false, done % 2 == 1};
    const Tensor y = gc_layer(x, compute_edge_weights(x, knn_graph(x, 4, Metric::cosine), e), p, a, opt);
    const Tensor yp = gc_layer(xp, compute_edge_weights(xp, knn_graph(xp, 4, Metric::cosine), e), p, a, opt);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::fabs(yp(perm[i], k) - y(i, k)));
    ++done;
  }
  return {worst <= 1e-10, "20 instances, max deviation " + fmt("%.1e", worst)};
}

// ---- 5 ------------------------------------------------------------------------

struct StopTraining {};

Outcome overfit() {
  const Dataset d = synth_dataset(32, 7, 32, 32);
  ModelConfig mc;  // defaults
  TrainConfig tc;
  tc.val_fraction = 0.0;
  const std::size_t steps_per_epoch = (d.size() + tc.batch_size - 1) / tc.batch_size;
  tc.epochs = 2000 / steps_per_epoch;
  std::size_t reached = 0;
  double last = std::numeric_limits<double>::infinity();
  const auto t0 = Clock::now();
  try {
    train(d, mc, tc, [&](const EpochRecord& r) {
      last = r.train_mae;
      if (r.train_mae <= 0.5) {
        reached = r.epoch * steps_per_epoch;
        throw StopTraining{};
      }
    });
  } catch (const StopTraining&) {
  }
  const double secs = seconds_since(t0);
  const bool ok = reached > 0 && reached <= 2000 && secs < 300.0;
  return {ok, (reached ? "train MAE " + fmt("%.3f", last) + " after " + std::to_string(reached) + " steps"
                       : "train MAE still " + fmt("%.3f", last) + " after 2000 steps") +
                  ", " + fmt("%.1f s", secs)};
}

// ---- 6 and 7 --------------------------------------------------------------------

struct GeneralizationRuns {
  std::vector<std::vector<EpochRecord>> histories;
  double baseline = 0.0;
  double seconds = 0.0;
};

GeneralizationRuns generalization_runs() {
  GeneralizationRuns g;
  const Dataset d = synth_dataset(640, 11, 32, 32);
  const DatasetSplit split = split_dataset(d, 0.2);
  double mean = 0.0;
  for (const Sample& s : split.train.samples) mean += s.label;
  mean /= static_cast<double>(split.train.size());
  for (const Sample& s : split.val.samples) g.baseline += std::fabs(s.label - mean);
  g.baseline /= static_cast<double>(split.val.size());

  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ModelConfig mc = ModelConfig::desk();
    mc.seed = seed;
    TrainConfig tc;
    tc.epochs = 30;
    tc.seed = seed;
    tc.val_fraction = 0.2;
    tc.schedule = LrSchedule::cosine;
    g.histories.push_back(train(d, mc, tc).state.history);
  }
  g.seconds = seconds_since(t0);
  return g;
}

Outcome generalization(const GeneralizationRuns& g) {
  double mean_val = 0.0;
  for (const auto& h : g.histories) mean_val += h.back().val_mae;
  mean_val /= static_cast<double>(g.histories.size());
  const double ratio = mean_val / g.baseline;
  return {ratio <= 0.7, "mean val MAE " + fmt("%.3f", mean_val) + " vs baseline " + fmt("%.3f", g.baseline) + " (ratio " +
                            fmt("%.3f", ratio) + "), 3 repeats in " + fmt("%.1f s", g.seconds)};
}

Outcome curve_shape(const GeneralizationRuns& g) {
  bool ok = true;
  std::string detail;
  for (std::size_t r = 0; r < g.histories.size(); ++r) {
    const auto& h = g.histories[r];
    bool rep_ok = h.back().train_mae < h.front().train_mae;
    std::string pts;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t e = 10; e <= h.size(); e += 5) {
      const double v = h[e - 1].train_mae;
      rep_ok = rep_ok && v <= prev;
      prev = v;
      pts += (pts.empty() ? "" : "/") + fmt("%.2f", v);
    }
    ok = ok && rep_ok;
    detail += (r ? "; " : "") + std::string("seed ") + std::to_string(r) + " e1 " + fmt("%.2f", h.front().train_mae) +
              " e10..30 " + pts;
  }
  return {ok, detail};
}

// ---- 8 ------------------------------------------------------------------------

Outcome determinism(const fs::path& dir) {
  const fs::path data = dir / "det_data";
  if (run(std::string(VIGAGE_BIN) + " synth --out " + data.string() + " --n 24 --seed 3 --size 16x16 > /dev/null") != 0)
    return {false, "synth failed"};
  std::vector<std::string> logs, cks;
  for (int i = 0; i < 2; ++i) {
    const fs::path log = dir / ("det_log" + std::to_string(i) + ".csv");
    const fs::path ck = dir / ("det_ck" + std::to_string(i) + ".bin");
    fs::remove(log);
    const int code = run(std::string(VIGAGE_BIN) + " train --data " + data.string() + " --preset tiny --epochs 4 --seed 5 " +
                         "--batch-size 4 --log " + log.string() + " --checkpoint " + ck.string() + " > /dev/null");
    if (code != 0) return {false, "train exited " + std::to_string(code)};
    logs.push_back(read_file(log));
    cks.push_back(read_file(ck));
  }
  const bool ok = !logs[0].empty() && logs[0] == logs[1] && !cks[0].empty() && cks[0] == cks[1];
  return {ok, "log " + std::to_string(logs[0].size()) + " B and checkpoint " + std::to_string(cks[0].size()) + " B " +
                  (ok ? "identical" : "differ")};
}

// ---- 9 ------------------------------------------------------------------------

Outcome over_smoothing() {
  ModelConfig on = ModelConfig::desk();
  on.blocks = 8;
  on.stages = 1;
  ModelConfig off = on;
  off.residual = false;
  const ModelParams p = init_params(on, 9);
  const Tensor img = synth_dataset(1, 9, 32, 32).samples[0].image;
  ForwardTrace t_on, t_off;
  predict(img, p, on, &t_on);
  predict(img, p, off, &t_off);
  const double d_on = feature_diversity(t_on.ffn_outputs.back());
  const double d_off = feature_diversity(t_off.ffn_outputs.back());
  return {d_on > d_off, "node feature std after 8 blocks: residual on " + fmt("%.4g", d_on) + ", off " + fmt("%.4g", d_off)};
}

// ---- 10 -----------------------------------------------------------------------

Outcome round_trips(const fs::path& dir) {
  std::size_t files = 0, bad = 0;
  for (const auto& entry : fs::directory_iterator(VIGAGE_FIXTURES)) {
    const std::string raw = read_file(entry.path());
    const std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
    PnmHeader h;
    const Tensor img = decode_pnm(bytes, &h);
    bad += encode_pnm(img, h.maxval) != bytes;
    ++files;
  }
  std::size_t ck_bad = 0;
  for (ModelConfig c : {ModelConfig::tiny(), ModelConfig::desk(), ModelConfig{}}) {
    const fs::path a = dir / "ck_a.bin", b = dir / "ck_b.bin";
    save_checkpoint(a, c, init_params(c, 17));
    const Checkpoint ck = load_checkpoint(a);
    save_checkpoint(b, ck.config, ck.params);
    ck_bad += read_file(a) != read_file(b);
  }
  return {files >= 4 && bad == 0 && ck_bad == 0, std::to_string(files - bad) + "/" + std::to_string(files) +
                                                      " PNM fixtures and " + std::to_string(3 - ck_bad) +
                                                      "/3 checkpoints byte-identical"};
}

}  // namespace

int main() {
  const fs::path dir = scratch_dir();
  bool all = true;
  auto report = [&](int n, const Outcome& o) {
    std::printf("criterion %2d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  };
  auto guarded = [&](int n, const std::function<Outcome()>& f) {
    try {
      report(n, f());
    } catch (const std::exception& e) {
      report(n, {false, std::string("error: ") + e.what()});
    }
  };
  guarded(1, [&] { return gradient_correctness(dir); });
  guarded(2, oracle_equivalence);
  guarded(3, residual_identities);
  guarded(4, permutation_equivariance);
  guarded(5, overfit);
  GeneralizationRuns runs;
  try {
    runs = generalization_runs();
  } catch (const std::exception& e) {
    report(6, {false, std::string("error: ") + e.what()});
    report(7, {false, std::string("error: ") + e.what()});
  }
  if (!runs.histories.empty()) {
    report(6, generalization(runs));
    report(7, curve_shape(runs));
  }
  guarded(8, [&] { return determinism(dir); });
  guarded(9, over_smoothing);
  guarded(10, [&] { return round_trips(dir); });
  fs::remove_all(dir);
  return all ? 0 : 1;
}
