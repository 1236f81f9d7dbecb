#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "causeway/assignment.hpp"
#include "causeway/graph.hpp"
#include "causeway/nn/module.hpp"
#include "causeway/nn/tape.hpp"
#include "causeway/rng.hpp"

namespace causeway::model {

struct ModelConfig {
  int d = 64;            // embedding width
  int layers = 4;        // alternating-attention layer count, even
  int heads = 4;
  double eps = 0.01;     // knowledge bias strength, must stay << 1
  double tau = 1.0;      // sinkhorn temperature
  int sinkhorn_iters = 20;
  int n_max = 8;
  int mc_samples = 16;   // permutation samples per forward pass
  int ffn_mult = 2;      // feed-forward hidden = ffn_mult * d
  double score_bound = 0.0;  // tanh bound on permutation scores; <= 0 disables

  void validate() const {
    if (d < 1 || heads < 1 || d % heads != 0) throw InvalidConfigError("model: heads must divide d");
    if (layers < 2 || layers % 2 != 0) throw InvalidConfigError("model: layer count must be even and >= 2");
    if (eps < 0.0 || eps > 0.1) throw InvalidConfigError("model: eps must lie in [0, 0.1]");
    if (tau <= 0.0) throw InvalidConfigError("model: tau must be positive");
    if (sinkhorn_iters < 1) throw InvalidConfigError("model: sinkhorn_iters must be >= 1");
    if (n_max < 1) throw InvalidConfigError("model: n_max must be >= 1");
    if (mc_samples < 1) throw InvalidConfigError("model: mc_samples must be >= 1");
    if (ffn_mult < 1) throw InvalidConfigError("model: ffn_mult must be >= 1");
  }
};

// How the permutation is used in the forward pass.
//   TrainHard: hard permutation forward, gradients through the soft matrix
//              (the hard minus soft difference enters as a constant).
//   Soft:      the relaxed doubly-stochastic matrix is used everywhere.
//   Frozen:    like TrainHard, but the hard-soft offsets are supplied by the
//              caller instead of recomputed (finite-difference probes).
enum class PermMode { TrainHard, Soft, Frozen };

template <class S>
struct NoisePack {
  std::vector<nn::Tensor<S>> gumbel;  // one (N, N) draw per permutation sample

  static NoisePack sample(int k, int n, Rng& rng) {
    NoisePack p;
    p.gumbel.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      nn::Tensor<S> g({n, n});
      for (auto& v : g.data) v = static_cast<S>(rng.gumbel());
      p.gumbel.push_back(std::move(g));
    }
    return p;
  }

  static NoisePack zeros(int k, int n) {
    NoisePack p;
    for (int i = 0; i < k; ++i) p.gumbel.push_back(nn::Tensor<S>({n, n}));
    return p;
  }
};

template <class S>
struct EncoderVars {
  using Var = typename nn::Tape<S>::Var;
  Var e_p = -1;  // (N, N, d)
  Var e_x = -1;  // (S, N, d)
  Var z = -1;    // (N+S, N, d)
  int s = 0;
  int n = 0;
};

template <class S>
struct PermSample {
  using Var = typename nn::Tape<S>::Var;
  Var q_soft = -1;             // (N, N) doubly stochastic
  Var q_used = -1;             // q_soft plus the hard offset (or q_soft itself)
  Var g_hat = -1;              // (N, N) edge probabilities under this sample
  Eigen::MatrixXd q_hard;      // hard permutation matrix
  nn::Tensor<S> offset;        // hard - soft, the straight-through constant
};

template <class S>
struct DecodeVars {
  using Var = typename nn::Tape<S>::Var;
  Var theta = -1;      // (N, N, d) pairwise features
  Var scores = -1;     // (N, N) permutation scores
  Var phi_pair = -1;   // (N, N) directed pair probabilities, sigmoid range
  std::vector<PermSample<S>> samples;
};

template <class S>
struct ForwardVars {
  using Var = typename nn::Tape<S>::Var;
  EncoderVars<S> enc;
  Var q = -1;         // (N, d) pooled prior query
  Var h = -1;         // (N, d) cross-attention summary
  Var h_biased = -1;  // (N, d) = h + eps * q
  DecodeVars<S> dec;
};

// Deterministic evaluation output (noise off, hard permutation).
struct EvalDecode {
  Eigen::MatrixXd q_soft;
  Eigen::MatrixXd q_hard;
  Eigen::MatrixXd pair_probs;  // directed pair probabilities before masking
  Eigen::MatrixXd phi_slot;    // strictly upper-triangular, slot-indexed
  Eigen::MatrixXd g_hat;       // q_hard * phi_slot * q_hard^T
};

inline Eigen::MatrixXd strict_upper_mask(int n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = 1.0;
  return m;
}

// G = Q * Phi * Q^T for a hard permutation Q; the support stays acyclic for
// every permutation because Phi lives on strictly ordered slot pairs.
Eigen::MatrixXd assemble_graph(const Eigen::MatrixXd& q_hard, const Eigen::MatrixXd& phi);

// Independent Bernoulli draw per edge probability.
std::vector<graph::Dag> sample_graphs(const Eigen::MatrixXd& g_hat, int k, uint64_t seed);

// Hard threshold; entries strictly above `threshold` become edges.
graph::Dag threshold_graph(const Eigen::MatrixXd& g_hat, double threshold);

// Dual-source encoder plus permutation/triangular decoder.
template <class S>
class DualSourceModel {
 public:
  using Var = typename nn::Tape<S>::Var;
  using Tape = nn::Tape<S>;

  ModelConfig cfg;
  nn::ParamStore<S> store;

  explicit DualSourceModel(ModelConfig config) : cfg(config) {
    cfg.validate();
    int d = cfg.d;
    embed_x_ = nn::Linear<S>::create(store, "embed_x", 1, d);
    embed_p_ = nn::Linear<S>::create(store, "embed_p", 1, d);
    for (int l = 0; l < cfg.layers; ++l)
      blocks_.push_back(nn::Block<S>::create(store, "enc." + std::to_string(l), d, cfg.heads, cfg.ffn_mult * d));
    ln_q_ = nn::LayerNorm<S>::create(store, "cross.ln_q", d);
    ln_kv_ = nn::LayerNorm<S>::create(store, "cross.ln_kv", d);
    cross_ = nn::Attention<S>::create(store, "cross.attn", d, cfg.heads);
    dec_block_ = nn::Block<S>::create(store, "dec.block", d, cfg.heads, cfg.ffn_mult * d);
    dec_ln_out_ = nn::LayerNorm<S>::create(store, "dec.ln_out", d);
    pair_src_ = nn::Linear<S>::create(store, "dec.pair_src", d, d);
    pair_dst_ = nn::Linear<S>::create(store, "dec.pair_dst", d, d);
    pair_gate_src_ = nn::Linear<S>::create(store, "dec.pair_gate_src", d, d);
    pair_gate_dst_ = nn::Linear<S>::create(store, "dec.pair_gate_dst", d, d);
    pair_bias_ = store.make("dec.pair_bias", {1, d});
    score_proj_ = nn::Linear<S>::create(store, "dec.score_proj", d, d);
    slot_emb_ = store.make("dec.slot_emb", {cfg.n_max, d});
    edge_head_ = nn::Linear<S>::create(store, "dec.edge_head", d, 1);
  }

  void init(uint64_t seed) {
    Rng rng(seed);
    embed_x_.init(rng);
    embed_p_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    ln_q_.init();
    ln_kv_.init();
    cross_.init(rng);
    dec_block_.init(rng);
    dec_ln_out_.init();
    for (auto* l : {&pair_src_, &pair_dst_, &pair_gate_src_, &pair_gate_dst_}) l->init(rng);
    std::fill(pair_bias_->value.data.begin(), pair_bias_->value.data.end(), S(0));
    score_proj_.init(rng);
    nn::init_uniform(slot_emb_, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
    edge_head_.init(rng);
  }

  // Scalar affine lift of data and prior entries into the shared width,
  // then concatenation along the token axis.
  EncoderVars<S> embed_inputs(Tape& t, const Eigen::MatrixXd& x_pad, const Eigen::MatrixXd& prior_pad) const {
    int n = static_cast<int>(prior_pad.rows());
    int s = static_cast<int>(x_pad.rows());
    if (n != cfg.n_max || prior_pad.cols() != n) throw InvalidInputError("embed_inputs: prior must be n_max x n_max");
    if (x_pad.cols() != n) throw InvalidInputError("embed_inputs: X must be padded to n_max columns");

    nn::Tensor<S> xt = nn::Tensor<S>::from_matrix(x_pad);
    xt.shape = {s * n, 1};
    nn::Tensor<S> pt = nn::Tensor<S>::from_matrix(prior_pad);
    pt.shape = {n * n, 1};

    EncoderVars<S> enc;
    enc.s = s;
    enc.n = n;
    enc.e_x = t.reshape(embed_x_.apply(t, t.leaf(std::move(xt))), {s, n, cfg.d});
    enc.e_p = t.reshape(embed_p_.apply(t, t.leaf(std::move(pt))), {n, n, cfg.d});
    enc.z = t.concat0(enc.e_p, enc.e_x);
    return enc;
  }

  // One encoder layer. Even layers attend along the token axis separately
  // for the prior block and the data block with one shared module; odd
  // layers attend along the variable axis on the full stack.
  Var encoder_layer(Tape& t, Var z, int s, int layer) const {
    int n = cfg.n_max;
    const auto& b = blocks_[static_cast<size_t>(layer)];
    Var normed = b.ln_attn.apply(t, z);
    Var attn_out;
    if (layer % 2 == 0) {
      Var ep = t.slice0(normed, 0, n);              // (N, N, d)
      Var ex = t.slice0(normed, n, n + s);          // (S, N, d)
      Var ap = t.transpose01(b.attn.self(t, t.transpose01(ep)));
      Var ax = t.transpose01(b.attn.self(t, t.transpose01(ex)));
      attn_out = t.concat0(ap, ax);
    } else {
      attn_out = b.attn.self(t, normed);            // batch = tokens, seq = variables
    }
    Var zr = t.add(z, attn_out);
    return b.ffn_residual(t, zr);
  }

  Var alternating_attention(Tape& t, Var z, int s) const {
    for (int l = 0; l < cfg.layers; ++l) z = encoder_layer(t, z, s, l);
    return z;
  }

  // q: mean-pooled prior embedding per variable (un-normalized, so its norm
  // can carry signal); h: per-variable attention over that variable's
  // sample column.
  std::pair<Var, Var> cross_attend(Tape& t, Var z_final, int s) const {
    int n = cfg.n_max;
    Var ep = t.slice0(z_final, 0, n);
    Var q = t.mean_axis1(ep);                             // (N, d)
    Var ex = t.transpose01(t.slice0(z_final, n, n + s));  // (N, S, d)
    Var h = cross_.cross(t, ln_q_.apply(t, q), ln_kv_.apply(t, ex));
    return {q, h};
  }

  Var knowledge_bias(Tape& t, Var h, Var q) const { return t.add(h, t.scale(q, static_cast<S>(cfg.eps))); }

  // Shared decoder trunk: one attention block over the biased summaries.
  // The closing norm keeps the pair and score heads bounded however large
  // the un-normalized knowledge bias grows.
  Var decode_trunk(Tape& t, Var h_biased) const {
    int n = cfg.n_max;
    Var u = t.reshape(h_biased, {1, n, cfg.d});
    Var a = dec_block_.attn.self(t, dec_block_.ln_attn.apply(t, u));
    u = dec_block_.ffn_residual(t, t.add(u, a));
    return dec_ln_out_.apply(t, t.reshape(u, {n, cfg.d}));
  }

  // Pairwise feature block: additive + bilinear combination of the trunk
  // features for every directed variable pair.
  Var make_theta(Tape& t, Var trunk) const {
    Var pre = t.add(t.outer_add(pair_src_.apply(t, trunk), pair_dst_.apply(t, trunk)),
                    t.outer_mul(pair_gate_src_.apply(t, trunk), pair_gate_dst_.apply(t, trunk)));
    pre = t.add_bias(pre, t.param(*pair_bias_));
    return t.leaky_relu(pre, S(0.01));
  }

  // Variable-to-slot affinities against a learned position table. Content
  // alone cannot address the index-ordered slots of the triangular mask, so
  // the readout scores each variable's features against every slot
  // embedding; the assembled graph stays equivariant because slots are
  // internal to the decode. The tanh bound keeps the Gumbel noise relevant
  // however far training pushes the logits.
  Var score_matrix(Tape& t, Var trunk) const {
    Var raw = t.scale(t.matmul(score_proj_.apply(t, trunk), t.param(*slot_emb_), false, true),
                      S(1.0 / std::sqrt(static_cast<double>(cfg.d))));
    if (cfg.score_bound <= 0.0) return raw;
    S b = static_cast<S>(cfg.score_bound);
    return t.scale(t.tanh(t.scale(raw, S(1) / b)), b);
  }

  Var edge_probabilities(Tape& t, Var theta) const {
    int n = cfg.n_max;
    return t.sigmoid(t.reshape(edge_head_.apply(t, theta), {n, n}));
  }

  // Triangular head applied to a feature block whose indices are already in
  // slot order: probabilities on i < j, exact zeros elsewhere.
  Var lt_decode(Tape& t, Var theta) const {
    Var probs = edge_probabilities(t, theta);
    Var mask = t.leaf(nn::Tensor<S>::from_matrix(strict_upper_mask(cfg.n_max)));
    return t.mul(probs, mask);
  }

  // Permutation + edge decode with mc_samples independent Gumbel draws.
  DecodeVars<S> decode(Tape& t, Var h_biased, const NoisePack<S>& noise, PermMode mode, double tau,
                       const std::vector<nn::Tensor<S>>* frozen_offsets = nullptr) const {
    return decode_from_trunk(t, decode_trunk(t, h_biased), noise, mode, tau, frozen_offsets);
  }

  DecodeVars<S> decode_from_trunk(Tape& t, Var trunk, const NoisePack<S>& noise, PermMode mode, double tau,
                                  const std::vector<nn::Tensor<S>>* frozen_offsets = nullptr) const {
    int n = cfg.n_max;
    DecodeVars<S> dec;
    dec.theta = make_theta(t, trunk);
    dec.scores = score_matrix(t, trunk);
    dec.phi_pair = edge_probabilities(t, dec.theta);

    Var mask_leaf = t.leaf(nn::Tensor<S>::from_matrix(strict_upper_mask(n)));
    Var scaled = t.scale(dec.scores, static_cast<S>(1.0 / tau));

    int k = static_cast<int>(noise.gumbel.size());
    if (mode == PermMode::Frozen && (!frozen_offsets || static_cast<int>(frozen_offsets->size()) != k))
      throw InvalidInputError("decode: frozen mode needs one offset per sample");
    for (int s = 0; s < k; ++s) {
      PermSample<S> ps;
      Var noisy = t.add_const(scaled, noise.gumbel[static_cast<size_t>(s)]);
      ps.q_soft = t.sinkhorn(noisy, cfg.sinkhorn_iters, tau);
      switch (mode) {
        case PermMode::Soft: {
          ps.q_used = ps.q_soft;
          auto a = assignment::max_assignment(t.val(ps.q_soft).to_matrix());
          ps.q_hard = assignment::to_permutation_matrix(a, n);
          break;
        }
        case PermMode::TrainHard: {
          auto a = assignment::max_assignment(t.val(ps.q_soft).to_matrix());
          ps.q_hard = assignment::to_permutation_matrix(a, n);
          nn::Tensor<S> off = nn::Tensor<S>::from_matrix(ps.q_hard);
          off.mat() -= t.val(ps.q_soft).mat();
          ps.offset = off;
          ps.q_used = t.add_const(ps.q_soft, off);
          break;
        }
        case PermMode::Frozen: {
          ps.offset = (*frozen_offsets)[static_cast<size_t>(s)];
          ps.q_used = t.add_const(ps.q_soft, ps.offset);
          nn::Tensor<S> hard = t.val(ps.q_soft);
          hard.mat() += ps.offset.mat();
          ps.q_hard = hard.to_matrix();
          break;
        }
      }
      // G = phi .* (Q M Q^T): ordered-pair probabilities gated by the
      // sampled topological order.
      Var order_mask = t.matmul(t.matmul(ps.q_used, mask_leaf), ps.q_used, false, true);
      ps.g_hat = t.mul(dec.phi_pair, order_mask);
      dec.samples.push_back(std::move(ps));
    }
    return dec;
  }

  ForwardVars<S> forward(Tape& t, const Eigen::MatrixXd& x_pad, const Eigen::MatrixXd& prior_pad,
                         const NoisePack<S>& noise, PermMode mode, double tau,
                         const std::vector<nn::Tensor<S>>* frozen_offsets = nullptr) const {
    ForwardVars<S> fv;
    fv.enc = embed_inputs(t, x_pad, prior_pad);
    fv.enc.z = alternating_attention(t, fv.enc.z, fv.enc.s);
    std::tie(fv.q, fv.h) = cross_attend(t, fv.enc.z, fv.enc.s);
    fv.h_biased = knowledge_bias(t, fv.h, fv.q);
    fv.dec = decode(t, fv.h_biased, noise, mode, tau, frozen_offsets);
    return fv;
  }

  // Noise-free hard decode used at evaluation time.
  EvalDecode infer(const Eigen::MatrixXd& x_pad, const Eigen::MatrixXd& prior_pad, double tau) const {
    Tape t;
    ForwardVars<S> fv;
    fv.enc = embed_inputs(t, x_pad, prior_pad);
    fv.enc.z = alternating_attention(t, fv.enc.z, fv.enc.s);
    std::tie(fv.q, fv.h) = cross_attend(t, fv.enc.z, fv.enc.s);
    fv.h_biased = knowledge_bias(t, fv.h, fv.q);
    Var trunk = decode_trunk(t, fv.h_biased);
    Var theta = make_theta(t, trunk);
    Var scores = score_matrix(t, trunk);
    Var phi_pair = edge_probabilities(t, theta);
    Var q_soft = t.sinkhorn(t.scale(scores, static_cast<S>(1.0 / tau)), cfg.sinkhorn_iters, tau);

    EvalDecode out;
    out.q_soft = t.val(q_soft).to_matrix();
    auto a = assignment::max_assignment(out.q_soft);
    out.q_hard = assignment::to_permutation_matrix(a, cfg.n_max);
    out.pair_probs = t.val(phi_pair).to_matrix();
    Eigen::MatrixXd order_mask = out.q_hard * strict_upper_mask(cfg.n_max) * out.q_hard.transpose();
    out.g_hat = out.pair_probs.cwiseProduct(order_mask);
    out.phi_slot = out.q_hard.transpose() * out.g_hat * out.q_hard;
    return out;
  }

  const nn::Attention<S>& encoder_attention(int layer) const { return blocks_[static_cast<size_t>(layer)].attn; }

 private:
  nn::Linear<S> embed_x_, embed_p_;
  std::vector<nn::Block<S>> blocks_;
  nn::LayerNorm<S> ln_q_, ln_kv_;
  nn::Attention<S> cross_;
  nn::Block<S> dec_block_;
  nn::LayerNorm<S> dec_ln_out_;
  nn::Linear<S> pair_src_, pair_dst_, pair_gate_src_, pair_gate_dst_;
  nn::Parameter<S>* pair_bias_ = nullptr;
  nn::Linear<S> score_proj_;
  nn::Parameter<S>* slot_emb_ = nullptr;
  nn::Linear<S> edge_head_;
};

}  // namespace causeway::model
