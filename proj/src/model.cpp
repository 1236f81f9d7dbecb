#include "causeway/model.hpp"

namespace causeway::model {

namespace {

bool is_permutation(const Eigen::MatrixXd& q) {
  if (q.rows() != q.cols()) return false;
  int n = static_cast<int>(q.rows());
  for (int i = 0; i < n; ++i) {
    int row_ones = 0, col_ones = 0;
    for (int j = 0; j < n; ++j) {
      double r = q(i, j), c = q(j, i);
      if (r != 0.0 && r != 1.0) return false;
      row_ones += r == 1.0;
      col_ones += c == 1.0;
    }
    if (row_ones != 1 || col_ones != 1) return false;
  }
  return true;
}

}  // namespace

Eigen::MatrixXd assemble_graph(const Eigen::MatrixXd& q_hard, const Eigen::MatrixXd& phi) {
  if (!is_permutation(q_hard)) throw InvalidInputError("assemble_graph: Q is not a permutation matrix");
  if (phi.rows() != q_hard.rows() || phi.cols() != q_hard.cols())
    throw InvalidInputError("assemble_graph: shape mismatch");
  return q_hard * phi * q_hard.transpose();
}

std::vector<graph::Dag> sample_graphs(const Eigen::MatrixXd& g_hat, int k, uint64_t seed) {
  int n = static_cast<int>(g_hat.rows());
  if (g_hat.cols() != n) throw InvalidInputError("sample_graphs: matrix must be square");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (g_hat(i, j) < 0.0 || g_hat(i, j) > 1.0)
        throw InvalidInputError("sample_graphs: probabilities must lie in [0, 1]");
  Rng rng(seed);
  std::vector<graph::Dag> out;
  out.reserve(static_cast<size_t>(k));
  for (int s = 0; s < k; ++s) {
    graph::Dag d(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && rng.bernoulli(g_hat(i, j))) d.set(i, j, 1);
    out.push_back(std::move(d));
  }
  return out;
}

graph::Dag threshold_graph(const Eigen::MatrixXd& g_hat, double threshold) {
  int n = static_cast<int>(g_hat.rows());
  graph::Dag d(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && g_hat(i, j) > threshold) d.set(i, j, 1);
  return d;
}

}  // namespace causeway::model
