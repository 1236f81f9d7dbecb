#pragma once

// Test-only oracles, kept independent of the implementation paths they
// check: breadth-first edit distance over digraph space, exhaustive path
// enumeration for reachability, and factorial assignment search.

#include <functional>
#include <map>
#include <queue>
#include <vector>

#include "causeway/graph.hpp"

namespace causeway::testing {

// Minimum edit count from `pred` to `truth` where one edit inserts,
// deletes, or reverses a directed edge; intermediate states may be any
// digraph. BFS over the 2^(n(n-1)) state space; n <= 4 only.
inline int shd_bfs_oracle(const graph::Dag& pred, const graph::Dag& truth) {
  int n = pred.n;
  std::vector<std::pair<int, int>> slots;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) slots.emplace_back(i, j);
  auto encode = [&](const std::vector<uint8_t>& adj) {
    uint32_t code = 0;
    for (size_t k = 0; k < slots.size(); ++k)
      if (adj[static_cast<size_t>(slots[k].first) * n + slots[k].second]) code |= 1u << k;
    return code;
  };
  auto slot_index = [&](int i, int j) {
    for (size_t k = 0; k < slots.size(); ++k)
      if (slots[k] == std::make_pair(i, j)) return k;
    return slots.size();
  };

  uint32_t start = encode(pred.adj), goal = encode(truth.adj);
  std::map<uint32_t, int> dist{{start, 0}};
  std::queue<uint32_t> q;
  q.push(start);
  while (!q.empty()) {
    uint32_t cur = q.front();
    q.pop();
    if (cur == goal) return dist[cur];
    int d = dist[cur];
    for (size_t k = 0; k < slots.size(); ++k) {
      auto [i, j] = slots[k];
      uint32_t bit = 1u << k;
      // insert/delete
      uint32_t flip = cur ^ bit;
      if (!dist.count(flip)) {
        dist[flip] = d + 1;
        q.push(flip);
      }
      // reversal, only when the edge exists
      if (cur & bit) {
        uint32_t rev_bit = 1u << slot_index(j, i);
        uint32_t rev = (cur & ~bit) | rev_bit;
        if (!dist.count(rev)) {
          dist[rev] = d + 1;
          q.push(rev);
        }
      }
    }
  }
  return -1;
}

// Path existence by exhaustive DFS over all simple paths.
inline bool path_exists_dfs(const graph::Dag& d, int from, int to) {
  std::vector<uint8_t> on_path(static_cast<size_t>(d.n), 0);
  std::function<bool(int)> dfs = [&](int u) -> bool {
    if (u == to) return true;
    on_path[static_cast<size_t>(u)] = 1;
    for (int v = 0; v < d.n; ++v)
      if (d.at(u, v) && !on_path[static_cast<size_t>(v)] && dfs(v)) return true;
    on_path[static_cast<size_t>(u)] = 0;
    return false;
  };
  if (from == to) return false;  // length >= 1 paths only
  bool found = false;
  for (int v = 0; v < d.n && !found; ++v)
    if (d.at(from, v)) found = v == to || dfs(v);
  return found;
}

// All DAGs on n labeled nodes (tiny n).
inline std::vector<graph::Dag> enumerate_dags(int n) {
  std::vector<std::pair<int, int>> slots;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) slots.emplace_back(i, j);
  std::vector<graph::Dag> out;
  for (uint32_t code = 0; code < (1u << slots.size()); ++code) {
    graph::Dag d(n);
    for (size_t k = 0; k < slots.size(); ++k)
      if (code & (1u << k)) d.set(slots[k].first, slots[k].second, 1);
    if (graph::is_acyclic(d)) out.push_back(std::move(d));
  }
  return out;
}

}  // namespace causeway::testing
