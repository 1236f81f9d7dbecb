#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "causeway/graph.hpp"

namespace causeway::knowledge {

enum class PriorSource : uint8_t { Reachability = 0, GroundTruth = 1 };
enum class PriorPolarity : uint8_t { WithPositives = 0, NegOnly = 1 };

// Coarse structural prior over variable pairs:
//   -1 unknown, 0 impossible, 1 may-cause.
// Positives are antisymmetric and the diagonal is fixed to 0.
struct KnowledgePrior {
  int n = 0;
  std::vector<int8_t> r;  // n*n
  PriorSource source = PriorSource::Reachability;
  PriorPolarity polarity = PriorPolarity::WithPositives;

  KnowledgePrior() = default;
  explicit KnowledgePrior(int nodes) : n(nodes), r(static_cast<size_t>(nodes) * nodes, 0) {}

  int8_t at(int i, int j) const { return r[static_cast<size_t>(i) * n + j]; }
  void set(int i, int j, int8_t v) { r[static_cast<size_t>(i) * n + j] = v; }
  bool operator==(const KnowledgePrior& o) const {
    return n == o.n && r == o.r;
  }
};

struct MaskConfig {
  double rho = 1.0;  // preservation rate in [0, 1]
};

// Value substituted for "impossible"/padding cells at the model boundary so
// those positions keep a live gradient path.
inline constexpr double kSoftZero = 1e-10;

// Data and prior padded up to the model's maximum variable count. The prior
// block is already numerically encoded: {-1, 0, 1} -> {-1.0, softzero, 1.0}
// off-diagonal, exact 0.0 on every diagonal cell.
struct PaddedInstance {
  Eigen::MatrixXd x_pad;      // S x n_max
  Eigen::MatrixXd prior_pad;  // n_max x n_max
  int n_effective = 0;
};

// Positive entries are exactly the transitive closure of the DAG.
KnowledgePrior encode_prior(const graph::Dag& dag);

// Adjacency (direct edges) as the positive set; used for ground-truth priors.
KnowledgePrior encode_prior_ground_truth(const graph::Dag& dag);

// Bernoulli(rho) retention per maskable entry; dropped entries become -1.
// Exempt and never masked: the diagonal, and the anti-position (j, i) of
// every positive r[i][j]=1 that survives its own retention draw. Positives
// are resolved first, then the remaining entries.
KnowledgePrior mask_prior(const KnowledgePrior& prior, const MaskConfig& cfg, uint64_t seed);

// Weaker prior: every 1 becomes -1 (only "impossible" knowledge survives).
KnowledgePrior to_neg_only(const KnowledgePrior& prior);

// Categorical over Table-type priors:
//   (Reachability, WithPositives) 0.45, (Reachability, NegOnly) 0.45,
//   (GroundTruth, WithPositives) 0.05, (GroundTruth, NegOnly)  0.05.
std::pair<PriorSource, PriorPolarity> sample_prior_type(uint64_t seed);
std::pair<PriorSource, PriorPolarity> sample_prior_type(Rng& rng);

// Zero-extends X columns to n_max; encodes and pads the prior with soft
// zeros off-diagonal and exact zeros on the diagonal.
PaddedInstance pad(const Eigen::MatrixXd& x, const KnowledgePrior& prior, int n_max);

// Numeric encoding of a single prior value at the model boundary.
inline double encode_value(int8_t v) { return v == 0 ? kSoftZero : static_cast<double>(v); }

// Text matrix format: one-line header with n, then n rows of {-1,0,1}.
std::string to_text(const KnowledgePrior& prior);
KnowledgePrior prior_from_text(const std::string& text);

void validate(const KnowledgePrior& prior);

}  // namespace causeway::knowledge
