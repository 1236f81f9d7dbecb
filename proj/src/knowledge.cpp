#include "causeway/knowledge.hpp"

#include <sstream>

#include "causeway/errors.hpp"

namespace causeway::knowledge {

KnowledgePrior encode_prior(const graph::Dag& dag) {
  auto closure = graph::transitive_closure(dag);
  KnowledgePrior p(dag.n);
  p.source = PriorSource::Reachability;
  for (int i = 0; i < dag.n; ++i)
    for (int j = 0; j < dag.n; ++j)
      if (i != j) p.set(i, j, closure.at(i, j) ? 1 : 0);
  return p;
}

KnowledgePrior encode_prior_ground_truth(const graph::Dag& dag) {
  KnowledgePrior p(dag.n);
  p.source = PriorSource::GroundTruth;
  for (int i = 0; i < dag.n; ++i)
    for (int j = 0; j < dag.n; ++j)
      if (i != j) p.set(i, j, dag.at(i, j) ? 1 : 0);
  return p;
}

KnowledgePrior mask_prior(const KnowledgePrior& prior, const MaskConfig& cfg, uint64_t seed) {
  if (cfg.rho < 0.0 || cfg.rho > 1.0) throw InvalidConfigError("mask_prior: rho outside [0, 1]");
  Rng rng(seed);
  KnowledgePrior out = prior;

  // Pass 1: retention draw for positives.
  std::vector<uint8_t> exempt(static_cast<size_t>(prior.n) * prior.n, 0);
  for (int i = 0; i < prior.n; ++i) {
    for (int j = 0; j < prior.n; ++j) {
      if (i == j || prior.at(i, j) != 1) continue;
      if (rng.bernoulli(cfg.rho)) {
        exempt[static_cast<size_t>(j) * prior.n + i] = 1;  // keep the anti-position 0
      } else {
        out.set(i, j, -1);
      }
    }
  }
  // Pass 2: remaining known entries (zeros); -1 inputs stay -1.
  for (int i = 0; i < prior.n; ++i) {
    for (int j = 0; j < prior.n; ++j) {
      if (i == j || prior.at(i, j) != 0) continue;
      if (exempt[static_cast<size_t>(i) * prior.n + j]) continue;
      if (!rng.bernoulli(cfg.rho)) out.set(i, j, -1);
    }
  }
  return out;
}

KnowledgePrior to_neg_only(const KnowledgePrior& prior) {
  KnowledgePrior out = prior;
  out.polarity = PriorPolarity::NegOnly;
  for (auto& v : out.r)
    if (v == 1) v = -1;
  return out;
}

std::pair<PriorSource, PriorPolarity> sample_prior_type(Rng& rng) {
  double u = rng.uniform();
  if (u < 0.45) return {PriorSource::Reachability, PriorPolarity::WithPositives};
  if (u < 0.90) return {PriorSource::Reachability, PriorPolarity::NegOnly};
  if (u < 0.95) return {PriorSource::GroundTruth, PriorPolarity::WithPositives};
  return {PriorSource::GroundTruth, PriorPolarity::NegOnly};
}

std::pair<PriorSource, PriorPolarity> sample_prior_type(uint64_t seed) {
  Rng rng(seed);
  return sample_prior_type(rng);
}

PaddedInstance pad(const Eigen::MatrixXd& x, const KnowledgePrior& prior, int n_max) {
  int n = prior.n;
  if (x.cols() != n) throw InvalidInputError("pad: X column count does not match prior");
  if (n > n_max) throw InvalidConfigError("pad: instance larger than n_max");

  PaddedInstance inst;
  inst.n_effective = n;
  inst.x_pad = Eigen::MatrixXd::Zero(x.rows(), n_max);
  inst.x_pad.leftCols(n) = x;

  inst.prior_pad = Eigen::MatrixXd::Constant(n_max, n_max, kSoftZero);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) inst.prior_pad(i, j) = encode_value(prior.at(i, j));
  inst.prior_pad.diagonal().setZero();
  return inst;
}

std::string to_text(const KnowledgePrior& prior) {
  std::ostringstream os;
  os << prior.n << "\n";
  for (int i = 0; i < prior.n; ++i) {
    for (int j = 0; j < prior.n; ++j) {
      if (j) os << ' ';
      os << static_cast<int>(prior.at(i, j));
    }
    os << "\n";
  }
  return os.str();
}

KnowledgePrior prior_from_text(const std::string& text) {
  std::istringstream is(text);
  int n = 0;
  if (!(is >> n) || n < 1) throw InvalidInputError("prior_from_text: bad header");
  KnowledgePrior p(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int v;
      if (!(is >> v)) throw InvalidInputError("prior_from_text: truncated matrix");
      if (v < -1 || v > 1) throw InvalidInputError("prior_from_text: entries must be in {-1, 0, 1}");
      p.set(i, j, static_cast<int8_t>(v));
    }
  }
  validate(p);
  return p;
}

void validate(const KnowledgePrior& prior) {
  if (static_cast<size_t>(prior.n) * prior.n != prior.r.size())
    throw InvalidInputError("prior: matrix not n*n");
  for (int i = 0; i < prior.n; ++i) {
    if (prior.at(i, i) != 0) throw InvalidInputError("prior: diagonal must be 0");
    for (int j = 0; j < prior.n; ++j)
      if (prior.at(i, j) == 1 && prior.at(j, i) == 1)
        throw InvalidInputError("prior: positives must be antisymmetric");
  }
}

}  // namespace causeway::knowledge
