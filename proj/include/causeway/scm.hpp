#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "causeway/graph.hpp"
#include "causeway/knowledge.hpp"

namespace causeway::scm {

enum class MechanismKind : uint8_t { Linear = 0, Mlp = 1, MlpOod = 2, External = 3 };

std::string mechanism_name(MechanismKind k);
MechanismKind mechanism_from_name(const std::string& name);

enum class LatentDist : uint8_t {
  Uniform = 0,       // U(-1, 1)
  Gamma11 = 1,       // Gamma(1, 1)
  GaussGammaScale = 2,  // N(0, d^2), d ~ Gamma(1, 1) per node per graph
  Gamma2525 = 3,     // Gamma(2.5, 2.5); out-of-distribution recipe
};

std::string latent_name(LatentDist d);
LatentDist latent_from_name(const std::string& name);

struct MechanismConfig {
  MechanismKind kind = MechanismKind::Linear;
  // Linear
  std::pair<double, double> weight_range{-10.0, 10.0};
  std::pair<double, double> noise_gamma{2.5, 2.5};  // (shape, scale) for sigma_i
  // MLP family
  LatentDist latent_dist = LatentDist::Uniform;
  int hidden_width = 32;
  int depth = 3;

  static MechanismConfig linear(std::pair<double, double> noise_gamma);
  static MechanismConfig mlp(LatentDist latent);
  static MechanismConfig mlp_ood();
};

struct ScmDataset {
  Eigen::MatrixXd x;  // S x n, all finite
  graph::Dag dag;
  MechanismConfig mechanism;
  uint64_t seed = 0;
};

// Ancestral sampling of a linear SCM: X_i = sum_j w_ij X_j + eps_i with
// w_ij ~ U(-10,10) per edge, sigma_i ~ Gamma(shape, scale) per node, and
// eps_i ~ N(0, sigma_i^2) per sample.
ScmDataset gen_linear(const graph::Dag& dag, int s, std::pair<double, double> noise_gamma, uint64_t seed);

// Per-node 3-layer MLP over (parents ++ latent); layer 1 consumes the raw
// concatenation, layers 2..depth apply leaky-ReLU to the previous output.
ScmDataset gen_mlp(const graph::Dag& dag, int s, LatentDist latent, uint64_t seed);

// Out-of-distribution variant: depth 5, sigmoid activations, weights from
// U(-50, 50), latent Gamma(2.5, 2.5).
ScmDataset gen_ood(const graph::Dag& dag, int s, uint64_t seed);

ScmDataset generate(const graph::Dag& dag, int s, const MechanismConfig& mech, uint64_t seed);

// Per-column z-score (sample std, ddof = 1); constant columns map to zeros.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x);

struct CorpusCell {
  int n = 0;
  std::pair<int, int> edge_range{0, 0};
  MechanismConfig mechanism;
  int graph_count = 0;
};

struct CorpusSpec {
  std::vector<CorpusCell> cells;
  int samples_per_graph = 200;
  uint64_t byte_budget = 4ull << 30;  // refuse generation beyond this estimate

  // Table-style full-scale recipe: N in {20,30,40}, |E| in [N, 3N], linear
  // and MLP mechanism mix.
  static CorpusSpec default_spec();
  size_t total_records() const;
  size_t estimated_bytes() const;
};

// Deterministic per-record seed; any record is regenerable in isolation.
uint64_t record_seed(uint64_t master, int cell_index, int record_index);

// Emits graph_count datasets per cell, in cell order. Throws
// ResourceBudgetError before generating anything if the estimate exceeds
// the configured budget.
void build_corpus(const CorpusSpec& spec, uint64_t seed,
                  const std::function<void(const ScmDataset&, int cell_index, int record_index)>& sink);

// ---------------------------------------------------------------------------
// Dataset container: appendable binary record file plus an index file that
// maps record id -> byte offset. See README for the exact layout.

struct ContainerRecord {
  uint32_t n = 0;
  uint32_t s = 0;
  MechanismKind mechanism = MechanismKind::Linear;
  uint64_t seed = 0;
  graph::Dag dag;                    // all-zeros when no ground truth is known
  bool has_truth = true;
  std::vector<float> x;              // row-major S x n
  std::optional<knowledge::KnowledgePrior> prior;  // optional external prior
};

ContainerRecord to_record(const ScmDataset& ds);
ScmDataset from_record(const ContainerRecord& rec);

class ContainerWriter {
 public:
  // Creates <path> and <path>.idx, truncating existing files.
  explicit ContainerWriter(const std::string& path);
  ~ContainerWriter();
  void append(const ContainerRecord& rec);
  void close();
  size_t count() const { return count_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  size_t count_ = 0;
};

class ContainerReader {
 public:
  explicit ContainerReader(const std::string& path);
  ~ContainerReader();
  size_t count() const;
  ContainerRecord read(size_t record_id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// FNV-1a over the record file bytes; pins the byte layout in tests.
uint64_t container_checksum(const std::string& path);

}  // namespace causeway::scm
