#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "kog/common.hpp"

namespace kog {

// Undirected acyclic skeleton: num_nodes nodes, exactly num_nodes - 1 edges,
// connected, no self-loops or duplicates. The node indexing of the skeleton
// file is canonical; the sign convention of SignedDistanceMatrix is defined
// relative to it.
struct SkeletonGraph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // stored with first < second

  // Throws StructureError naming the offending node/edge/cycle.
  void validate() const;

  std::vector<std::vector<int>> adjacency() const;

  static SkeletonGraph from_json_text(const std::string& text);
  static SkeletonGraph from_json_file(const std::string& path);
  std::string to_json_text() const;
};

// Tree shortest-path lengths with the index-order sign rule: the entry for
// (source m, target n) is negative when m < n, positive when m > n, zero on
// the diagonal.
struct SignedDistanceMatrix {
  int num_nodes = 0;
  std::vector<int> entries;  // row-major num_nodes x num_nodes

  int at(int m, int n) const { return entries[static_cast<std::size_t>(m) * num_nodes + n]; }
  int magnitude(int m, int n) const { return std::abs(at(m, n)); }
  int diameter() const;
};

// Additive attention masks for neighbor orders 0..order. admit[i] marks the
// pairs (m, n) with tree distance exactly i; everything else is masked. The
// additive form maps admitted pairs to 0 and masked pairs to the most
// negative finite value of the working precision, so softmax underflows to
// exactly zero instead of producing inf - inf NaNs.
struct OrderMaskSet {
  int num_nodes = 0;
  int order = 0;
  std::vector<std::vector<std::uint8_t>> admit;  // (order+1) matrices, row-major

  bool admitted(int i, int m, int n) const {
    return admit[i][static_cast<std::size_t>(m) * num_nodes + n] != 0;
  }

  template <typename T>
  std::vector<T> additive_matrix(int i) const {
    const T masked = std::numeric_limits<T>::lowest();
    std::vector<T> out(admit[i].size());
    for (std::size_t p = 0; p < out.size(); ++p)
      out[p] = admit[i][p] ? T(0) : masked;
    return out;
  }
};

// Clamped signed (or unsigned) graph distance mapped to a table index:
//   directed:   min(max(-delta, H[m][n]), delta) + delta   in [0, 2*delta]
//   undirected: min(|H[m][n]|, delta)                      in [0, delta]
struct RelativeIndexMap {
  int num_nodes = 0;
  int delta = 0;
  bool directed = true;
  std::vector<int> indices;  // row-major

  int at(int m, int n) const { return indices[static_cast<std::size_t>(m) * num_nodes + n]; }
  // Number of positional-encoding vectors the map addresses.
  int table_size() const { return directed ? 2 * delta + 1 : delta + 1; }
};

// Symmetric-normalized graph Laplacian rescaled so the spectrum lies in
// [-1, 1]: L_hat = 2 L / lambda_max - I. lambda_max is computed exactly (by
// a dense symmetric eigensolve) rather than assuming the usual ~2 bound, and
// kept for reproducibility.
struct ScaledLaplacian {
  int num_nodes = 0;
  std::vector<double> entries;  // row-major
  double lambda_max = 0.0;      // eigenvalue estimate used for the rescale

  double at(int m, int n) const { return entries[static_cast<std::size_t>(m) * num_nodes + n]; }
};

SignedDistanceMatrix build_signed_distance(const SkeletonGraph& graph);

RelativeIndexMap build_relative_index_map(const SignedDistanceMatrix& dist,
                                          int delta, bool directed);

OrderMaskSet build_order_masks(const SkeletonGraph& graph, int order);

ScaledLaplacian build_scaled_laplacian(const SkeletonGraph& graph);

// Largest eigenvalue of a dense symmetric matrix (cyclic Jacobi sweeps).
double symmetric_max_eigenvalue(const std::vector<double>& matrix, int n);

}  // namespace kog
