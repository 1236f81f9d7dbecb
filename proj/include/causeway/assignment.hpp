#pragma once

#include <Eigen/Dense>
#include <vector>

namespace causeway::assignment {

struct Assignment {
  std::vector<int> col_of_row;  // row i assigned to column col_of_row[i]
  double score = 0.0;           // sum of selected weights
};

// Maximum-weight perfect assignment on a square weight matrix
// (Jonker-Volgenant shortest augmenting path, O(n^3)).
Assignment max_assignment(const Eigen::MatrixXd& weights);

// Exhaustive n! search; test oracle for small n.
Assignment max_assignment_brute(const Eigen::MatrixXd& weights);

// Permutation matrix P with P(i, col_of_row[i]) = 1.
Eigen::MatrixXd to_permutation_matrix(const Assignment& a, int n);

}  // namespace causeway::assignment
