#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "causeway/graph.hpp"
#include "causeway/model.hpp"
#include "causeway/nn/tape.hpp"

namespace causeway::training {

struct LossConfig {
  double alpha = 0.1;        // similarity regularizer weight
  int k = 16;                // Monte Carlo permutation samples
  double prob_floor = 1e-6;  // likelihood clamp

  void validate() const {
    if (alpha < 0.0) throw InvalidConfigError("loss: alpha must be >= 0");
    if (k < 1) throw InvalidConfigError("loss: k must be >= 1");
    if (prob_floor <= 0.0 || prob_floor >= 0.5) throw InvalidConfigError("loss: prob_floor must lie in (0, 0.5)");
  }
};

// Off-diagonal indicator masks for the Bernoulli log-likelihood terms.
template <class S>
std::pair<nn::Tensor<S>, nn::Tensor<S>> truth_masks(const graph::Dag& truth) {
  int n = truth.n;
  nn::Tensor<S> pos({n, n}), neg({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (truth.at(i, j))
        pos.at(static_cast<int64_t>(i) * n + j) = S(1);
      else
        neg.at(static_cast<int64_t>(i) * n + j) = S(1);
    }
  return {std::move(pos), std::move(neg)};
}

// Monte-Carlo graph NLL: -log( (1/K) sum_k p(truth | G^(k)) ), with the
// average taken in log space and edge probabilities clamped away from 0/1.
template <class S>
typename nn::Tape<S>::Var loss_graph(nn::Tape<S>& t, const std::vector<typename nn::Tape<S>::Var>& g_samples,
                                     const graph::Dag& truth, const LossConfig& cfg) {
  if (g_samples.empty()) throw InvalidInputError("loss_graph: no samples");
  auto [pos, neg] = truth_masks<S>(truth);
  S lo = static_cast<S>(cfg.prob_floor), hi = static_cast<S>(1.0 - cfg.prob_floor);
  std::vector<typename nn::Tape<S>::Var> lls;
  lls.reserve(g_samples.size());
  for (auto g : g_samples) {
    auto p = t.clamp(g, lo, hi);
    auto ll_pos = t.sum_weighted(t.log(p), pos);
    auto ll_neg = t.sum_weighted(t.log(t.affine(p, S(-1), S(1))), neg);
    lls.push_back(t.add(ll_pos, ll_neg));
  }
  auto stacked = t.reshape(t.stack0(lls), {static_cast<int>(lls.size())});
  auto lse = t.logsumexp(stacked);
  // loss = -(lse - log K)
  auto out = t.affine(lse, S(-1), static_cast<S>(std::log(static_cast<double>(lls.size()))));
  if (!std::isfinite(static_cast<double>(t.val(out).at(0)))) {
    const auto& g0 = t.val(g_samples[0]);
    int64_t bad = -1;
    for (int64_t i = 0; i < g0.numel(); ++i)
      if (!std::isfinite(static_cast<double>(g0.at(i)))) bad = i;
    throw NumericalError("loss_graph: non-finite loss (first offending entry index " + std::to_string(bad) + ")");
  }
  return out;
}

// Plain-value twin of loss_graph for oracles and reports (no gradients).
double loss_graph_value(const std::vector<Eigen::MatrixXd>& g_samples, const graph::Dag& truth,
                        double prob_floor);

// Similarity alignment over a batch: one mean-pooled summary vector and one
// flattened predicted graph per item. B < 2 yields 0 (no pairs).
template <class S>
typename nn::Tape<S>::Var loss_sim(nn::Tape<S>& t, const std::vector<typename nn::Tape<S>::Var>& h_per_item,
                                   const std::vector<typename nn::Tape<S>::Var>& g_per_item,
                                   int* zero_norm_count = nullptr) {
  if (h_per_item.size() != g_per_item.size()) throw InvalidInputError("loss_sim: batch size mismatch");
  int b = static_cast<int>(h_per_item.size());
  if (b < 2) return t.leaf(nn::Tensor<S>::full({1}, S(0)));
  std::vector<typename nn::Tape<S>::Var> embeds, flats;
  embeds.reserve(h_per_item.size());
  flats.reserve(g_per_item.size());
  for (size_t i = 0; i < h_per_item.size(); ++i) {
    embeds.push_back(t.mean_axis0(h_per_item[i]));  // (1, d)
    const auto& g = t.val(g_per_item[i]);
    flats.push_back(t.reshape(g_per_item[i], {1, static_cast<int>(g.numel())}));
  }
  auto e = t.reshape(t.stack0(embeds), {b, t.val(embeds[0]).cols()});
  auto y = t.reshape(t.stack0(flats), {b, t.val(flats[0]).cols()});
  return t.similarity_alignment_loss(e, y, zero_norm_count);
}

template <class S>
typename nn::Tape<S>::Var total_loss(nn::Tape<S>& t, typename nn::Tape<S>::Var l_graph,
                                     typename nn::Tape<S>::Var l_sim, double alpha) {
  return t.add(l_graph, t.scale(l_sim, static_cast<S>(alpha)));
}

}  // namespace causeway::training
