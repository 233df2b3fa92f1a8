#pragma once

// Test-only reference implementations. These stay independent of the library
// code paths they are used to check: paths are enumerated by DFS rather than
// BFS, attention oracles loop over the written-out formulas, and Adam is
// re-stepped by hand.

#include <cmath>
#include <optional>
#include <vector>

#include "kog/data.hpp"
#include "kog/graph.hpp"
#include "kog/rng.hpp"

namespace oracle {

inline kog::SkeletonGraph chain(int n) {
  kog::SkeletonGraph g;
  g.num_nodes = n;
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

// Random labelled tree: node i attaches to a uniform parent among 0..i-1,
// then labels are permuted so the root is not special.
inline kog::SkeletonGraph random_tree(int n, kog::Rng& rng) {
  std::vector<int> label(n);
  for (int i = 0; i < n; ++i) label[i] = i;
  for (int i = n; i > 1; --i)
    std::swap(label[i - 1], label[rng.next_index(static_cast<std::uint64_t>(i))]);
  kog::SkeletonGraph g;
  g.num_nodes = n;
  for (int i = 1; i < n; ++i) {
    int p = i == 1 ? 0 : static_cast<int>(rng.next_index(static_cast<std::uint64_t>(i)));
    int a = label[p], b = label[i];
    if (a > b) std::swap(a, b);
    g.edges.emplace_back(a, b);
  }
  return g;
}

// Unique tree path from a to b found by depth-first search; returns the node
// sequence including both endpoints.
inline std::optional<std::vector<int>> dfs_path(const kog::SkeletonGraph& g,
                                                int a, int b) {
  auto adj = g.adjacency();
  std::vector<int> stack{a};
  std::vector<int> prev(g.num_nodes, -1);
  std::vector<bool> seen(g.num_nodes, false);
  seen[a] = true;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    if (u == b) {
      std::vector<int> path{b};
      while (path.back() != a) path.push_back(prev[path.back()]);
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        prev[v] = u;
        stack.push_back(v);
      }
    }
  }
  return std::nullopt;
}

// Signed distance by exhaustive path enumeration (small -> large is negative).
inline int signed_path_length(const kog::SkeletonGraph& g, int from, int to) {
  if (from == to) return 0;
  auto path = dfs_path(g, from, to);
  const int len = static_cast<int>(path->size()) - 1;
  return from < to ? -len : len;
}

// Hand-stepped Adam on a single scalar, mirroring the update rule definition.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double step(double w, double g, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, t));
    const double vhat = v / (1.0 - std::pow(beta2, t));
    return w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace oracle
