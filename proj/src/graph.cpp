#include "kog/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kog {

void SkeletonGraph::validate() const {
  if (num_nodes <= 0) throw StructureError("skeleton must have at least one node");
  std::set<std::pair<int, int>> seen;
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= num_nodes || b < 0 || b >= num_nodes)
      throw StructureError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                           ") references a node outside [0, " +
                           std::to_string(num_nodes) + ")");
    if (a == b)
      throw StructureError("self-loop at node " + std::to_string(a));
    auto key = std::minmax(a, b);
    if (!seen.insert(key).second)
      throw StructureError("duplicate edge (" + std::to_string(key.first) + ", " +
                           std::to_string(key.second) + ")");
  }

  // Connectivity from node 0.
  auto adj = adjacency();
  std::vector<int> parent(num_nodes, -2);
  std::queue<int> q;
  q.push(0);
  parent[0] = -1;
  int visited = 0;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    ++visited;
    for (int v : adj[u]) {
      if (parent[v] == -2) {
        parent[v] = u;
        q.push(v);
      }
    }
  }
  if (visited != num_nodes) {
    for (int v = 0; v < num_nodes; ++v)
      if (parent[v] == -2)
        throw StructureError("disconnected graph: node " + std::to_string(v) +
                             " is unreachable from node 0");
  }

  if (static_cast<int>(edges.size()) != num_nodes - 1) {
    // Connected with >= num_nodes edges: some edge closes a cycle. Report it.
    std::vector<int> depth(num_nodes, 0);
    for (int v = 0; v < num_nodes; ++v) {
      int u = v;
      while (parent[u] >= 0) {
        depth[v]++;
        u = parent[u];
      }
    }
    for (const auto& [a, b] : edges) {
      if (parent[a] == b || parent[b] == a) continue;
      // Walk both endpoints up to their common ancestor.
      std::vector<int> cycle_a{a}, cycle_b{b};
      int x = a, y = b;
      while (x != y) {
        if (depth[x] >= depth[y] && parent[x] >= -1) {
          x = parent[x];
          cycle_a.push_back(x);
        } else {
          y = parent[y];
          cycle_b.push_back(y);
        }
        if (x < 0 || y < 0) break;
      }
      // cycle_a ends at the meeting node, which cycle_b also carries; skip
      // the duplicate when stitching the two halves together.
      std::string path;
      for (int u : cycle_a) path += std::to_string(u) + " ";
      for (auto it = std::next(cycle_b.rbegin()); it != cycle_b.rend(); ++it)
        path += std::to_string(*it) + " ";
      throw StructureError("cyclic graph: edge (" + std::to_string(a) + ", " +
                           std::to_string(b) + ") closes the cycle " + path);
    }
    throw StructureError("edge count " + std::to_string(edges.size()) +
                         " does not match tree requirement " +
                         std::to_string(num_nodes - 1));
  }
}

std::vector<std::vector<int>> SkeletonGraph::adjacency() const {
  std::vector<std::vector<int>> adj(num_nodes);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

SkeletonGraph SkeletonGraph::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("skeleton JSON parse failure: ") + e.what());
  }
  if (!j.is_object() || !j.contains("num_nodes") || !j.contains("edges"))
    throw IoError("skeleton JSON must be an object with num_nodes and edges");
  SkeletonGraph g;
  g.num_nodes = j.at("num_nodes").get<int>();
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2)
      throw IoError("skeleton edge entries must be [a, b] pairs");
    int a = e[0].get<int>();
    int b = e[1].get<int>();
    if (a > b) std::swap(a, b);
    g.edges.emplace_back(a, b);
  }
  g.validate();
  return g;
}

SkeletonGraph SkeletonGraph::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open skeleton file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string SkeletonGraph::to_json_text() const {
  nlohmann::json j;
  j["num_nodes"] = num_nodes;
  auto arr = nlohmann::json::array();
  for (const auto& [a, b] : edges) arr.push_back({a, b});
  j["edges"] = arr;
  return j.dump();
}

int SignedDistanceMatrix::diameter() const {
  int d = 0;
  for (int v : entries) d = std::max(d, std::abs(v));
  return d;
}

SignedDistanceMatrix build_signed_distance(const SkeletonGraph& graph) {
  graph.validate();
  const int l = graph.num_nodes;
  auto adj = graph.adjacency();
  SignedDistanceMatrix dist;
  dist.num_nodes = l;
  dist.entries.assign(static_cast<std::size_t>(l) * l, 0);

  std::vector<int> d(l);
  for (int src = 0; src < l; ++src) {
    std::fill(d.begin(), d.end(), -1);
    d[src] = 0;
    std::queue<int> q;
    q.push(src);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u]) {
        if (d[v] < 0) {
          d[v] = d[u] + 1;
          q.push(v);
        }
      }
    }
    for (int tgt = 0; tgt < l; ++tgt) {
      // Small source index to large target index counts as negative.
      int signed_d = src < tgt ? -d[tgt] : d[tgt];
      dist.entries[static_cast<std::size_t>(src) * l + tgt] = signed_d;
    }
  }
  return dist;
}

RelativeIndexMap build_relative_index_map(const SignedDistanceMatrix& dist,
                                          int delta, bool directed) {
  if (delta < 1)
    throw ConfigError("relative index map requires delta >= 1, got " +
                      std::to_string(delta));
  const int l = dist.num_nodes;
  RelativeIndexMap map;
  map.num_nodes = l;
  map.delta = delta;
  map.directed = directed;
  map.indices.resize(static_cast<std::size_t>(l) * l);
  for (std::size_t p = 0; p < map.indices.size(); ++p) {
    int h = dist.entries[p];
    map.indices[p] = directed ? std::min(std::max(-delta, h), delta) + delta
                              : std::min(std::abs(h), delta);
  }
  return map;
}

OrderMaskSet build_order_masks(const SkeletonGraph& graph, int order) {
  if (order < 0) throw ConfigError("mask order must be >= 0");
  auto dist = build_signed_distance(graph);  // validates
  const int l = graph.num_nodes;
  OrderMaskSet masks;
  masks.num_nodes = l;
  masks.order = order;
  masks.admit.assign(order + 1,
                     std::vector<std::uint8_t>(static_cast<std::size_t>(l) * l, 0));
  for (int i = 0; i <= order; ++i)
    for (std::size_t p = 0; p < masks.admit[i].size(); ++p)
      masks.admit[i][p] = std::abs(dist.entries[p]) == i ? 1 : 0;
  return masks;
}

double symmetric_max_eigenvalue(const std::vector<double>& matrix, int n) {
  // Cyclic Jacobi rotations; plenty for the node counts skeletons reach.
  std::vector<double> a = matrix;
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(at(p, q)) < 1e-300) continue;
        double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  double lmax = at(0, 0);
  for (int i = 1; i < n; ++i) lmax = std::max(lmax, at(i, i));
  return lmax;
}

ScaledLaplacian build_scaled_laplacian(const SkeletonGraph& graph) {
  graph.validate();
  const int l = graph.num_nodes;
  std::vector<double> deg(l, 0.0);
  for (const auto& [a, b] : graph.edges) {
    deg[a] += 1.0;
    deg[b] += 1.0;
  }

  // L = I - D^{-1/2} A D^{-1/2}; isolated single-node graphs keep L = 0.
  std::vector<double> lap(static_cast<std::size_t>(l) * l, 0.0);
  for (int i = 0; i < l; ++i)
    lap[static_cast<std::size_t>(i) * l + i] = deg[i] > 0.0 ? 1.0 : 0.0;
  for (const auto& [a, b] : graph.edges) {
    double w = -1.0 / std::sqrt(deg[a] * deg[b]);
    lap[static_cast<std::size_t>(a) * l + b] = w;
    lap[static_cast<std::size_t>(b) * l + a] = w;
  }

  ScaledLaplacian out;
  out.num_nodes = l;
  out.lambda_max = symmetric_max_eigenvalue(lap, l);

  // Guard the degenerate single-node spectrum {0}; any divisor >= the true
  // lambda_max keeps eigenvalues inside [-1, 1].
  double divisor = std::max(out.lambda_max, 1e-12);
  out.entries.resize(lap.size());
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < l; ++j) {
      double v = 2.0 * lap[static_cast<std::size_t>(i) * l + j] / divisor;
      if (i == j) v -= 1.0;
      out.entries[static_cast<std::size_t>(i) * l + j] = v;
    }
  return out;
}

}  // namespace kog
