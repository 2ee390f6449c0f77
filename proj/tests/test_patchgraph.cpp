// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "vigage/errors.hpp"
#include "vigage/gradcheck.hpp"
#include "vigage/ops.hpp"
#include "vigage/patchgraph.hpp"

using namespace vigage;

namespace {

Tensor random_image(std::mt19937_64& gen, std::size_t h, std::size_t w, std::size_t c) {
  std::uniform_int_distribution<int> px(0, 255);
  Tensor img({h, w, c});
  for (double& v : img.data()) v = px(gen);
  return img;
}

std::vector<std::vector<std::size_t>> lists(const PatchGraph& g) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < g.node_count; ++i) {
    auto n = g.neighbors(i);
    out.emplace_back(n.begin(), n.end());
  }
  return out;
}

}  // namespace

TEST(Patchify, Shapes) {
  std::mt19937_64 gen(1);
  EXPECT_EQ(patchify(random_image(gen, 32, 32, 3), 4).shape(), (Shape{16, 192}));
  const Tensor img = random_image(gen, 8, 8, 1);
  const Tensor nodes = patchify(img, 8);
  ASSERT_EQ(nodes.shape(), (Shape{64, 1}));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_DOUBLE_EQ(nodes(i, 0), img[i] / 255.0);
}

TEST(Patchify, RowIsRowMajorCell) {
  std::mt19937_64 gen(2);
  const Tensor img = random_image(gen, 6, 4, 3);
  const Tensor nodes = patchify(img, 2, 1.0);
  // cell (1, 0) is node 2: pixel rows 3..5, cols 0..1
  std::size_t k = 0;
  for (std::size_t r = 3; r < 6; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(nodes(2, k++), img.at(r, c, ch));
}

TEST(Patchify, NonDivisibleNamesSizes) {
  try {
    patchify(Tensor({10, 12, 1}), 4);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("10"), std::string::npos) << m;
    EXPECT_NE(m.find("12"), std::string::npos) << m;
    EXPECT_NE(m.find("4"), std::string::npos) << m;
  }
}

TEST(Patchify, ConstantImageGivesIdenticalRows) {
  const Tensor nodes = patchify(Tensor({16, 16, 1}, 77.0), 4);
  for (std::size_t i = 1; i < nodes.rows(); ++i)
    for (std::size_t k = 0; k < nodes.cols(); ++k) EXPECT_EQ(nodes(i, k), nodes(0, k));
}

TEST(Patchify, LosslessRoundTrip) {
  std::mt19937_64 gen(3);
  for (std::size_t c : {1u, 3u}) {
    const Tensor img = random_image(gen, 12, 8, c);
    EXPECT_EQ(unpatchify(patchify(img, 4, 1.0), 4, 12, 8, c), img);
  }
}

TEST(Knn, CompleteGraphWhenKIsNMinusOne) {
  std::mt19937_64 gen(4);
  const Tensor x = oracle::random_tensor(gen, {7, 3});
  const PatchGraph g = knn_graph(x, 6, Metric::cosine);
  EXPECT_TRUE(g.warnings.empty() || g.warnings[0].find("clamped") == std::string::npos);
  for (std::size_t i = 0; i < 7; ++i) {
    auto n = g.neighbors(i);
    std::set<std::size_t> s(n.begin(), n.end());
    EXPECT_EQ(s.size(), 6u);
    EXPECT_FALSE(s.count(i));
  }
}

TEST(Knn, UnitBasisTieBreak) {
  const Tensor x = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const PatchGraph g = knn_graph(x, 1, Metric::cosine);
  EXPECT_EQ(lists(g), (std::vector<std::vector<std::size_t>>{{1}, {0}, {0}}));
  EXPECT_FALSE(g.warnings.empty());
}

TEST(Knn, MatchesExhaustiveSortOracle) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<std::size_t> nd(2, 20), dd(1, 8);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = nd(gen), d = dd(gen);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(gen);
    const oracle::Mat x = oracle::random_mat(gen, n, d);
    for (Metric m : {Metric::cosine, Metric::euclidean}) {
      const auto expect = oracle::knn(x, k, m == Metric::cosine);
      EXPECT_EQ(lists(knn_graph(oracle::to_tensor(x), k, m)), expect) << "rep " << rep << " " << metric_name(m);
    }
  }
}

TEST(Knn, ClampsLargeKWithWarning) {
  std::mt19937_64 gen(6);
  const PatchGraph g = knn_graph(oracle::random_tensor(gen, {4, 2}), 10, Metric::euclidean);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.neighbors(i).size(), 3u);
  ASSERT_FALSE(g.warnings.empty());
  EXPECT_NE(g.warnings[0].find("clamped"), std::string::npos);
}

TEST(Knn, RejectsZeroK) {
  EXPECT_THROW(knn_graph(Tensor({3, 2}, 1.0), 0, Metric::cosine), ArgumentError);
}

TEST(Knn, CosineIgnoresPositiveRowScaling) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor x = oracle::random_tensor(gen, {12, 5});
    Tensor y = x;
    for (std::size_t i = 0; i < 12; ++i) {
      const double s = scale(gen);
      for (std::size_t k = 0; k < 5; ++k) y(i, k) *= s;
    }
    EXPECT_EQ(lists(knn_graph(x, 4, Metric::cosine)), lists(knn_graph(y, 4, Metric::cosine)));
  }
}

TEST(Knn, PermutationRelabelsLists) {
  std::mt19937_64 gen(8);
  const oracle::Mat x = oracle::random_mat(gen, 10, 4);
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  const auto base = lists(knn_graph(oracle::to_tensor(x), 3, Metric::cosine));
  const auto moved = lists(knn_graph(oracle::to_tensor(testing_support::permute_rows(x, perm)), 3, Metric::cosine));
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<std::size_t> relabeled;
    for (std::size_t j : base[i]) relabeled.push_back(perm[j]);
    EXPECT_EQ(moved[perm[i]], relabeled);
  }
}

TEST(Knn, ZeroRowsHaveZeroCosine) {
  const std::vector<double> zero{0, 0}, one{1, 2};
  EXPECT_EQ(node_similarity(zero, one, Metric::cosine), 0.0);
  EXPECT_EQ(node_similarity(zero, zero, Metric::cosine), 0.0);
  const PatchGraph g = knn_graph(Tensor::from_rows({{0, 0}, {1, 0}, {0, 1}}), 2, Metric::cosine);
  EXPECT_EQ(g.neighbors(0).size(), 2u);
}

TEST(EdgeWeights, ZeroParamsGiveOneHalf) {
  std::mt19937_64 gen(9);
  const Tensor x = oracle::random_tensor(gen, {5, 3});
  const PatchGraph g = compute_edge_weights(x, knn_graph(x, 2, Metric::cosine), {Tensor({6}), Tensor({1})});
  for (double a : g.edge_alpha) EXPECT_EQ(a, 0.5);
  for (double a : g.self_alpha) EXPECT_EQ(a, 0.5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g.degree[i], 2.0);
}

TEST(EdgeWeights, LargeBiasSaturates) {
  std::mt19937_64 gen(10);
  const Tensor x = oracle::random_tensor(gen, {5, 3});
  const PatchGraph g = compute_edge_weights(x, knn_graph(x, 2, Metric::cosine), {Tensor({6}), Tensor({1}, 30.0)});
  for (double a : g.edge_alpha) EXPECT_GT(a, 1.0 - 1e-9);
}

TEST(EdgeWeights, MatchesPerEdgeOracle) {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 10; ++rep) {
    const oracle::Mat x = oracle::random_mat(gen, 5, 3);
    const oracle::Vec a = oracle::random_mat(gen, 1, 6)[0];
    const double b = oracle::random_mat(gen, 1, 1)[0][0];
    const PatchGraph g = compute_edge_weights(oracle::to_tensor(x), knn_graph(oracle::to_tensor(x), 3, Metric::cosine),
                                              {Tensor::vector(a), Tensor::vector({b})});
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(g.self_alpha[i], oracle::edge_alpha(x[i], x[i], a, b), 1e-12);
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
        EXPECT_NEAR(g.edge_alpha[e], oracle::edge_alpha(x[i], x[g.targets[e]], a, b), 1e-12);
      EXPECT_EQ(g.degree[i], 3.0);
    }
  }
}

TEST(EdgeWeights, LengthMismatchIsDimensionError) {
  const Tensor x({4, 3}, 1.0);
  EXPECT_THROW(compute_edge_weights(x, knn_graph(x, 1, Metric::cosine), {Tensor({5}), Tensor({1})}), DimensionError);
}

TEST(EdgeWeights, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(12);
  Tensor x = oracle::random_tensor(gen, {6, 3});
  EdgeWeightParams p{oracle::random_tensor(gen, {6}), oracle::random_tensor(gen, {1})};
  Tensor probe_e = oracle::random_tensor(gen, {12});
  Tensor probe_s = oracle::random_tensor(gen, {6});
  const PatchGraph g = knn_graph(x, 2, Metric::cosine);
  const auto r = grad_check(
      [&](Tape& t) {
        EdgeWeightVars w = edge_weights(t.param(x), g, p);
        return add(sum(mul(w.edge, t.constant(probe_e))), sum(mul(w.self, t.constant(probe_s))));
      },
      {{"x", &x}, {"a", &p.a}, {"b", &p.b}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST(GraphDump, FormatAndOrder) {
  const Tensor x = Tensor::from_rows({{1, 0}, {0.9, 0.1}, {0, 1}});
  const PatchGraph g = compute_edge_weights(x, knn_graph(x, 2, Metric::cosine), {Tensor({4}), Tensor({1})});
  std::ostringstream out;
  write_graph_dump(out, g);
  EXPECT_EQ(out.str(), "0\t1\t0.500000\n0\t2\t0.500000\n1\t0\t0.500000\n1\t2\t0.500000\n2\t1\t0.500000\n2\t0\t0.500000\n");
  std::ostringstream unweighted;
  EXPECT_THROW(write_graph_dump(unweighted, knn_graph(x, 1, Metric::cosine)), StateError);
}
