// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "oracles.hpp"
#include "vigage/patchgraph.hpp"

namespace testing_support {

// Library graph holding exactly the oracle graph's edges and weights.
inline vigage::PatchGraph to_patch_graph(const oracle::Graph& g) {
  vigage::PatchGraph pg;
  pg.node_count = g.nbr.size();
  pg.offsets.push_back(0);
  for (std::size_t i = 0; i < g.nbr.size(); ++i) {
    for (std::size_t e = 0; e < g.nbr[i].size(); ++e) {
      pg.targets.push_back(g.nbr[i][e]);
      pg.edge_alpha.push_back(g.alpha[i][e]);
    }
    pg.offsets.push_back(pg.targets.size());
    pg.degree.push_back(static_cast<double>(g.nbr[i].size()));
  }
  pg.self_alpha = g.self_alpha;
  return pg;
}

inline oracle::Graph permuted(const oracle::Graph& g, const std::vector<std::size_t>& perm) {
  // perm[old] = new
  oracle::Graph out;
  const std::size_t n = g.nbr.size();
  out.nbr.resize(n);
  out.alpha.resize(n);
  out.self_alpha.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < g.nbr[i].size(); ++e) {
      out.nbr[perm[i]].push_back(perm[g.nbr[i][e]]);
      out.alpha[perm[i]].push_back(g.alpha[i][e]);
    }
    out.self_alpha[perm[i]] = g.self_alpha[i];
  }
  return out;
}

inline oracle::Mat permute_rows(const oracle::Mat& m, const std::vector<std::size_t>& perm) {
  oracle::Mat out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[perm[i]] = m[i];
  return out;
}

}  // namespace testing_support
