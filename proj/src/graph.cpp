#include "causeway/graph.hpp"

#include <algorithm>
#include <sstream>

#include "causeway/errors.hpp"

#include <json.hpp>

namespace causeway::graph {

std::vector<std::pair<int, int>> Dag::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (at(i, j)) out.emplace_back(i, j);
  return out;  // row-major scan is already lexicographic
}

bool is_acyclic(const std::vector<uint8_t>& adj, int n) {
  if (static_cast<size_t>(n) * n != adj.size()) throw InvalidInputError("is_acyclic: matrix not n*n");
  // Kahn's algorithm.
  std::vector<int> indeg(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (adj[static_cast<size_t>(i) * n + j]) ++indeg[j];
  std::vector<int> stack;
  for (int j = 0; j < n; ++j)
    if (indeg[j] == 0) stack.push_back(j);
  int seen = 0;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    ++seen;
    for (int v = 0; v < n; ++v)
      if (adj[static_cast<size_t>(u) * n + v] && --indeg[v] == 0) stack.push_back(v);
  }
  return seen == n;
}

bool is_acyclic(const Dag& d) { return is_acyclic(d.adj, d.n); }

namespace {

bool cycle_dfs(const Dag& d, int u, std::vector<int>& state, std::vector<int>& path, std::string& out) {
  state[u] = 1;
  path.push_back(u);
  for (int v = 0; v < d.n; ++v) {
    if (!d.at(u, v)) continue;
    if (state[v] == 1) {
      std::ostringstream os;
      auto it = std::find(path.begin(), path.end(), v);
      for (; it != path.end(); ++it) os << *it << " -> ";
      os << v;
      out = os.str();
      return true;
    }
    if (state[v] == 0 && cycle_dfs(d, v, state, path, out)) return true;
  }
  path.pop_back();
  state[u] = 2;
  return false;
}

// Finds any directed cycle and formats it as "a -> b -> ... -> a".
std::string find_cycle(const Dag& d) {
  std::vector<int> state(d.n, 0), path;
  std::string out;
  for (int s = 0; s < d.n; ++s)
    if (state[s] == 0 && cycle_dfs(d, s, state, path, out)) return out;
  return "unknown";
}

}  // namespace

std::vector<int> topological_order(const Dag& d) {
  std::vector<int> indeg(d.n, 0);
  for (int i = 0; i < d.n; ++i)
    for (int j = 0; j < d.n; ++j)
      if (d.at(i, j)) ++indeg[j];
  std::vector<int> order;
  order.reserve(d.n);
  std::vector<int> ready;
  for (int j = d.n - 1; j >= 0; --j)
    if (indeg[j] == 0) ready.push_back(j);
  while (!ready.empty()) {
    int u = ready.back();
    ready.pop_back();
    order.push_back(u);
    for (int v = d.n - 1; v >= 0; --v)
      if (d.at(u, v) && --indeg[v] == 0) ready.push_back(v);
  }
  if (static_cast<int>(order.size()) != d.n) throw CycleError(find_cycle(d));
  return order;
}

Dag sample_er_dag(int n, std::pair<int, int> edge_range, uint64_t seed) {
  if (n < 1) throw InvalidConfigError("sample_er_dag: n must be >= 1");
  int max_edges = n * (n - 1) / 2;
  if (edge_range.first < 0 || edge_range.second < edge_range.first)
    throw InvalidConfigError("sample_er_dag: malformed edge range");
  if (edge_range.second > max_edges)
    throw InvalidConfigError("sample_er_dag: edge range upper bound exceeds n(n-1)/2");

  Rng rng(seed);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);

  int m = static_cast<int>(rng.uniform_int(edge_range.first, edge_range.second));

  // All strictly ordered position pairs (p, q), p < q; pick m without
  // replacement via partial Fisher-Yates.
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(max_edges);
  for (int p = 0; p < n; ++p)
    for (int q = p + 1; q < n; ++q) pairs.emplace_back(p, q);
  Dag d(n);
  for (int k = 0; k < m; ++k) {
    int j = static_cast<int>(rng.uniform_int(k, static_cast<int64_t>(pairs.size()) - 1));
    std::swap(pairs[k], pairs[j]);
    d.set(perm[pairs[k].first], perm[pairs[k].second], 1);
  }
  return d;
}

ReachabilityMatrix transitive_closure(const Dag& d) {
  ReachabilityMatrix r(d.n);
  // BFS from every node; n stays small enough that this is cheap.
  std::vector<int> queue;
  for (int s = 0; s < d.n; ++s) {
    std::vector<uint8_t> seen(d.n, 0);
    queue.clear();
    queue.push_back(s);
    size_t head = 0;
    while (head < queue.size()) {
      int u = queue[head++];
      for (int v = 0; v < d.n; ++v) {
        if (d.at(u, v) && !seen[v]) {
          seen[v] = 1;
          queue.push_back(v);
        }
      }
    }
    for (int v = 0; v < d.n; ++v) r.set(s, v, seen[v]);
  }
  return r;
}

int shd(const Dag& pred, const Dag& truth) {
  if (pred.n != truth.n) throw InvalidInputError("shd: node counts differ");
  int cost = 0;
  for (int i = 0; i < pred.n; ++i) {
    for (int j = i + 1; j < pred.n; ++j) {
      // State of the unordered pair in each graph: 0 none, 1 i->j, 2 j->i.
      int a = pred.at(i, j) ? 1 : (pred.at(j, i) ? 2 : 0);
      int b = truth.at(i, j) ? 1 : (truth.at(j, i) ? 2 : 0);
      if (a != b) ++cost;  // insert, delete, or reverse: each one edit
    }
  }
  return cost;
}

double f1(const Dag& pred, const Dag& truth) {
  if (pred.n != truth.n) throw InvalidInputError("f1: node counts differ");
  int tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < pred.n; ++i) {
    for (int j = 0; j < pred.n; ++j) {
      bool p = pred.at(i, j), t = truth.at(i, j);
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;  // both empty
  if (tp == 0) return 0.0;
  double prec = static_cast<double>(tp) / (tp + fp);
  double rec = static_cast<double>(tp) / (tp + fn);
  return 2.0 * prec * rec / (prec + rec);
}

std::string to_text(const Dag& d) {
  nlohmann::json j;
  j["n"] = d.n;
  auto es = d.edges();
  nlohmann::json arr = nlohmann::json::array();
  for (auto& [a, b] : es) arr.push_back({a, b});
  j["edges"] = arr;
  return j.dump();
}

Dag dag_from_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Dag d(j.at("n").get<int>());
  for (auto& e : j.at("edges")) {
    int a = e.at(0).get<int>(), b = e.at(1).get<int>();
    if (a < 0 || a >= d.n || b < 0 || b >= d.n) throw InvalidInputError("dag_from_text: edge out of range");
    d.set(a, b, 1);
  }
  validate(d);
  return d;
}

void validate(const Dag& d) {
  if (static_cast<size_t>(d.n) * d.n != d.adj.size()) throw InvalidInputError("dag: adjacency not n*n");
  for (int i = 0; i < d.n; ++i)
    if (d.at(i, i)) throw InvalidInputError("dag: nonzero diagonal");
  for (uint8_t v : d.adj)
    if (v > 1) throw InvalidInputError("dag: entries must be 0 or 1");
  if (!is_acyclic(d)) throw CycleError(find_cycle(d));
}

}  // namespace causeway::graph
