#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causeway/rng.hpp"

namespace causeway::graph {

// Directed acyclic graph over n nodes, adjacency stored dense row-major:
// adj[i*n+j] == 1 iff edge i -> j. Ground truth and predictions share this
// representation.
struct Dag {
  int n = 0;
  std::vector<uint8_t> adj;  // n*n, zero diagonal, acyclic

  Dag() = default;
  explicit Dag(int nodes) : n(nodes), adj(static_cast<size_t>(nodes) * nodes, 0) {}

  uint8_t at(int i, int j) const { return adj[static_cast<size_t>(i) * n + j]; }
  void set(int i, int j, uint8_t v) { adj[static_cast<size_t>(i) * n + j] = v; }

  int edge_count() const {
    int c = 0;
    for (uint8_t v : adj) c += v;
    return c;
  }

  std::vector<std::pair<int, int>> edges() const;  // lexicographic order
  bool operator==(const Dag& o) const = default;
};

// reach[i*n+j] == 1 iff a directed path i ~> j of length >= 1 exists.
struct ReachabilityMatrix {
  int n = 0;
  std::vector<uint8_t> reach;

  ReachabilityMatrix() = default;
  explicit ReachabilityMatrix(int nodes) : n(nodes), reach(static_cast<size_t>(nodes) * nodes, 0) {}

  uint8_t at(int i, int j) const { return reach[static_cast<size_t>(i) * n + j]; }
  void set(int i, int j, uint8_t v) { reach[static_cast<size_t>(i) * n + j] = v; }
  bool operator==(const ReachabilityMatrix& o) const = default;
};

bool is_acyclic(const std::vector<uint8_t>& adj, int n);
bool is_acyclic(const Dag& d);

// Throws CycleError (naming one cycle) on cyclic input.
std::vector<int> topological_order(const Dag& d);

// Uniform edge count in [edge_range.first, edge_range.second]; acyclic by
// construction: a node permutation is drawn first and edges are chosen only
// among strictly ordered pairs under it.
Dag sample_er_dag(int n, std::pair<int, int> edge_range, uint64_t seed);

ReachabilityMatrix transitive_closure(const Dag& d);

// Structural Hamming distance. Edits are edge insertion, deletion, and
// reversal; a reversed edge costs 1.
int shd(const Dag& pred, const Dag& truth);

// F1 over directed edge sets. Both empty -> 1.0; P+R == 0 -> 0.0.
double f1(const Dag& pred, const Dag& truth);

// Text record {n, edges} with lexicographic edge order; byte-stable.
std::string to_text(const Dag& d);
Dag dag_from_text(const std::string& text);

// Throws InvalidInputError when the matrix violates a Dag invariant.
void validate(const Dag& d);

}  // namespace causeway::graph
