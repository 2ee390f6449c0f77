// SPDX-License-Identifier: Apache-2.0
// Reference implementations used only by the tests. Everything here works on
// plain nested vectors with explicit loops and shares no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "vigage/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat to_mat(const vigage::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline vigage::Tensor to_tensor(const Mat& m) {
  vigage::Tensor t({m.size(), m.at(0).size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) t(i, j) = m[i][j];
  return t;
}

inline double max_abs_diff(const Mat& a, const vigage::Tensor& b) {
  if (b.rank() != 2 || a.size() != b.rows() || a.at(0).size() != b.cols()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::fabs(a[i][j] - b(i, j)));
  return worst;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t m = a.size(), k = b.size(), n = b.at(0).size();
  Mat c(m, Vec(n, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i][p] * b[p][j];
      c[i][j] = s;
    }
  return c;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---- KNN --------------------------------------------------------------------

inline double cosine(const Vec& x, const Vec& y) {
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    xy += x[k] * y[k];
    xx += x[k] * x[k];
    yy += y[k] * y[k];
  }
  if (xx == 0.0 || yy == 0.0) return 0.0;
  return xy / (std::sqrt(xx) * std::sqrt(yy));
}

inline double sq_dist(const Vec& x, const Vec& y) {
  double s = 0;
  for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
  return s;
}

// Full sort of every other node; cosine by descending similarity, euclidean by
// ascending distance, ties by lower index.
inline std::vector<std::vector<std::size_t>> knn(const Mat& x, std::size_t k, bool use_cosine) {
  const std::size_t n = x.size();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double key = use_cosine ? -cosine(x[i], x[j]) : sq_dist(x[i], x[j]);
      cand.push_back({key, j});
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t r = 0; r < std::min(k, cand.size()); ++r) out[i].push_back(cand[r].second);
  }
  return out;
}

// ---- graph convolution -------------------------------------------------------

// A weighted directed graph in the plainest possible form.
struct Graph {
  std::vector<std::vector<std::size_t>> nbr;
  std::vector<std::vector<double>> alpha;  // parallel to nbr
  Vec self_alpha;
};

inline double edge_alpha(const Vec& xi, const Vec& xj, const Vec& a, double b) {
  double s = b;
  for (std::size_t k = 0; k < xi.size(); ++k) s += a[k] * xi[k];
  for (std::size_t k = 0; k < xj.size(); ++k) s += a[xi.size() + k] * xj[k];
  return sigmoid(s);
}

// h_i = relu( sum_j (alpha_ij / |N_i|) g_j W_r + alpha_ii g_i W_0 )
inline Mat gc_step1(const Mat& g, const Graph& gr, const Mat& w_r, const Mat& w_0) {
  const std::size_t n = g.size(), d = g[0].size();
  Mat h(n, Vec(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double c = static_cast<double>(gr.nbr[i].size());
    for (std::size_t o = 0; o < d; ++o) {
      double s = 0.0;
      for (std::size_t e = 0; e < gr.nbr[i].size(); ++e) {
        const std::size_t j = gr.nbr[i][e];
        for (std::size_t p = 0; p < d; ++p) s += gr.alpha[i][e] / c * g[j][p] * w_r[p][o];
      }
      for (std::size_t p = 0; p < d; ++p) s += gr.self_alpha[i] * g[i][p] * w_0[p][o];
      h[i][o] = relu(s);
    }
  }
  return h;
}

// h_i = relu( sum_j h_j W_r + h_i W_0 ), or the step-1 weighting when normalized.
inline Mat gc_step2(const Mat& h1, const Graph& gr, const Mat& w_r, const Mat& w_0, bool normalized) {
  if (normalized) return gc_step1(h1, gr, w_r, w_0);
  const std::size_t n = h1.size(), d = h1[0].size();
  Mat h(n, Vec(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      double s = 0.0;
      for (std::size_t j : gr.nbr[i])
        for (std::size_t p = 0; p < d; ++p) s += h1[j][p] * w_r[p][o];
      for (std::size_t p = 0; p < d; ++p) s += h1[i][p] * w_0[p][o];
      h[i][o] = relu(s);
    }
  return h;
}

// Block-diagonal matrix built from the per-head updates, then one product.
inline Mat multihead_update(const Mat& h2, const std::vector<Mat>& heads) {
  const std::size_t d = h2[0].size(), c = heads[0].size();
  Mat block(d, Vec(d, 0.0));
  for (std::size_t t = 0; t < heads.size(); ++t)
    for (std::size_t r = 0; r < c; ++r)
      for (std::size_t s = 0; s < c; ++s) block[t * c + r][t * c + s] = heads[t][r][s];
  return matmul(h2, block);
}

// head_t[i] = sum_j softmax_j(q_i . k_j * temp) v_j, every weight written out.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, const std::vector<Mat>& wq, const std::vector<Mat>& wk,
                     const std::vector<Mat>& wv, bool scaled) {
  const std::size_t tq = q.size(), tk = k.size(), dm = wq[0][0].size();
  Mat out(tq, Vec(wq.size() * dm, 0.0));
  for (std::size_t h = 0; h < wq.size(); ++h) {
    const Mat Q = matmul(q, wq[h]), K = matmul(k, wk[h]), V = matmul(v, wv[h]);
    const double temp = scaled ? 1.0 / std::sqrt(static_cast<double>(dm)) : 1.0;
    for (std::size_t i = 0; i < tq; ++i) {
      Vec logit(tk);
      for (std::size_t j = 0; j < tk; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < dm; ++p) s += Q[i][p] * K[j][p];
        logit[j] = s * temp;
      }
      const double mx = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < tk; ++j)
        for (std::size_t p = 0; p < dm; ++p) out[i][h * dm + p] += logit[j] / z * V[j][p];
    }
  }
  return out;
}

// ---- network pieces ----------------------------------------------------------

// For each output cell, concatenate the four source rows in reading order and project.
inline Mat downsample(const Mat& o, std::size_t side, const Mat& proj) {
  const std::size_t half = side / 2, d = o[0].size();
  Mat gathered;
  for (std::size_t r = 0; r < half; ++r)
    for (std::size_t c = 0; c < half; ++c) {
      Vec row;
      for (std::size_t dr = 0; dr < 2; ++dr)
        for (std::size_t dc = 0; dc < 2; ++dc) {
          const Vec& src = o[(2 * r + dr) * side + (2 * c + dc)];
          row.insert(row.end(), src.begin(), src.begin() + static_cast<std::ptrdiff_t>(d));
        }
      gathered.push_back(row);
    }
  return matmul(gathered, proj);
}

// mean over nodes of relu(o_n K1 + b1) K2 + b2, one node at a time
inline double head(const Mat& o, const Mat& k1, const Vec& b1, const Mat& k2, double b2) {
  double total = 0.0;
  for (const Vec& row : o) {
    double y = b2;
    for (std::size_t h = 0; h < k1[0].size(); ++h) {
      double z = b1[h];
      for (std::size_t p = 0; p < row.size(); ++p) z += row[p] * k1[p][h];
      y += relu(z) * k2[h][0];
    }
    total += y;
  }
  return total / static_cast<double>(o.size());
}

// ---- random helpers ------------------------------------------------------------

inline Mat random_mat(std::mt19937_64& gen, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, Vec(c));
  for (auto& row : m)
    for (double& v : row) v = u(gen);
  return m;
}

inline vigage::Tensor random_tensor(std::mt19937_64& gen, vigage::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  vigage::Tensor t(shape);
  for (double& v : t.data()) v = u(gen);
  return t;
}

// Random directed graph: each node gets a random subset of the others.
inline Graph random_graph(std::mt19937_64& gen, std::size_t n, std::size_t max_deg) {
  Graph g;
  g.nbr.resize(n);
  g.alpha.resize(n);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::shuffle(others.begin(), others.end(), gen);
    const std::size_t deg = std::min(others.size(), std::uniform_int_distribution<std::size_t>(0, max_deg)(gen));
    for (std::size_t e = 0; e < deg; ++e) {
      g.nbr[i].push_back(others[e]);
      g.alpha[i].push_back(u(gen));
    }
    g.self_alpha.push_back(u(gen));
  }
  return g;
}

}  // namespace oracle
