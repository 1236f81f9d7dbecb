#include "causeway/assignment.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "causeway/errors.hpp"

namespace causeway::assignment {

Assignment max_assignment(const Eigen::MatrixXd& weights) {
  if (weights.rows() != weights.cols()) throw InvalidInputError("assignment: matrix must be square");
  const int n = static_cast<int>(weights.rows());
  if (n == 0) return {};

  // Minimize cost = -weight with 1-based JV shortest augmenting path.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  auto cost = [&](int i, int j) { return -weights(i - 1, j - 1); };

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  Assignment a;
  a.col_of_row.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) a.col_of_row[p[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) a.score += weights(i, a.col_of_row[i]);
  return a;
}

Assignment max_assignment_brute(const Eigen::MatrixXd& weights) {
  if (weights.rows() != weights.cols()) throw InvalidInputError("assignment: matrix must be square");
  const int n = static_cast<int>(weights.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  best.score = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += weights(i, perm[i]);
    if (s > best.score) {
      best.score = s;
      best.col_of_row = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Eigen::MatrixXd to_permutation_matrix(const Assignment& a, int n) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) p(i, a.col_of_row[i]) = 1.0;
  return p;
}

}  // namespace causeway::assignment
