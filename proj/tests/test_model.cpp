#include <doctest.h>

#include "causeway/model.hpp"
#include "causeway/knowledge.hpp"
#include "causeway/scm.hpp"

using namespace causeway;
using namespace causeway::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.n_max = 4;
  cfg.mc_samples = 2;
  cfg.sinkhorn_iters = 15;
  cfg.eps = 0.05;
  return cfg;
}

// A padded instance from a random dag/dataset.
template <class S>
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> tiny_instance(int n, int s_rows, int n_max, uint64_t seed) {
  auto dag = graph::sample_er_dag(n, {1, n * (n - 1) / 2}, seed);
  auto ds = scm::gen_linear(dag, s_rows, {1.0, 1.0}, mix_seed(seed, 1));
  auto prior = knowledge::encode_prior(dag);
  auto inst = knowledge::pad(scm::standardize(ds.x), prior, n_max);
  return {inst.x_pad, inst.prior_pad};
}

}  // namespace

TEST_CASE("model config validation") {
  auto build = [](ModelConfig c) { DualSourceModel<double> m(c); };
  ModelConfig bad = tiny_config();
  bad.layers = 3;
  CHECK_THROWS_AS(build(bad), InvalidConfigError);
  bad = tiny_config();
  bad.eps = 0.5;
  CHECK_THROWS_AS(build(bad), InvalidConfigError);
  bad = tiny_config();
  bad.heads = 3;
  CHECK_THROWS_AS(build(bad), InvalidConfigError);
}

TEST_CASE("embed_inputs shapes and sample-permutation equivariance") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(3);
  auto [x, p] = tiny_instance<double>(3, 6, cfg.n_max, 5);

  nn::Tape<double> t;
  auto enc = m.embed_inputs(t, x, p);
  CHECK(t.val(enc.e_x).shape == std::vector<int>{6, 4, 8});
  CHECK(t.val(enc.e_p).shape == std::vector<int>{4, 4, 8});
  CHECK(t.val(enc.z).shape == std::vector<int>{10, 4, 8});

  // embedding is deterministic
  nn::Tape<double> t2;
  auto enc2 = m.embed_inputs(t2, x, p);
  CHECK(t.val(enc.z).data == t2.val(enc2.z).data);

  // permuting sample rows permutes E_X rows and leaves E_P unchanged
  Eigen::MatrixXd x_perm = x;
  x_perm.row(0) = x.row(5);
  x_perm.row(5) = x.row(0);
  nn::Tape<double> t3;
  auto enc3 = m.embed_inputs(t3, x_perm, p);
  CHECK(t3.val(enc3.e_p).data == t.val(enc.e_p).data);
  auto row = [&](auto var, nn::Tape<double>& tp, int r) {
    std::vector<double> out;
    for (int j = 0; j < 4 * 8; ++j) out.push_back(tp.val(var).at(r * 4 * 8 + j));
    return out;
  };
  CHECK(row(enc3.e_x, t3, 0) == row(enc.e_x, t, 5));
  CHECK(row(enc3.e_x, t3, 5) == row(enc.e_x, t, 0));
}

TEST_CASE("even layers keep prior and data streams separate") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(11);
  auto [x, p] = tiny_instance<double>(4, 5, cfg.n_max, 6);

  nn::Tape<double> ta;
  auto enc_a = m.embed_inputs(ta, x, p);
  auto za = m.encoder_layer(ta, enc_a.z, enc_a.s, 0);

  // zero the data block before layer 0: the prior block's update must not move
  Eigen::MatrixXd x_zero = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  nn::Tape<double> tb;
  auto enc_b = m.embed_inputs(tb, x_zero, p);
  auto zb = m.encoder_layer(tb, enc_b.z, enc_b.s, 0);

  int n = cfg.n_max, d = cfg.d;
  for (int i = 0; i < n * n * d; ++i)
    CHECK(ta.val(za).at(i) == doctest::Approx(tb.val(zb).at(i)).epsilon(1e-12));
}

TEST_CASE("odd layers mix across variables") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(13);
  auto [x, p] = tiny_instance<double>(4, 5, cfg.n_max, 8);

  nn::Tape<double> ta;
  auto enc_a = m.embed_inputs(ta, x, p);
  auto za = m.encoder_layer(ta, m.encoder_layer(ta, enc_a.z, enc_a.s, 0), enc_a.s, 1);

  Eigen::MatrixXd x2 = x;
  x2.col(1).array() += 0.75;  // perturb variable 1 only
  nn::Tape<double> tb;
  auto enc_b = m.embed_inputs(tb, x2, p);
  auto zb = m.encoder_layer(tb, m.encoder_layer(tb, enc_b.z, enc_b.s, 0), enc_b.s, 1);

  // some other variable's column must change after the odd layer
  int n = cfg.n_max, d = cfg.d;
  double delta = 0.0;
  for (int tok = n; tok < n + 5; ++tok)
    for (int var = 0; var < n; ++var) {
      if (var == 1) continue;
      for (int c = 0; c < d; ++c) {
        int64_t idx = (static_cast<int64_t>(tok) * n + var) * d + c;
        delta = std::max(delta, std::abs(ta.val(za).at(idx) - tb.val(zb).at(idx)));
      }
    }
  CHECK(delta > 1e-8);
}

TEST_CASE("cross attention output shape and duplication invariance") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(17);
  auto [x, p] = tiny_instance<double>(4, 6, cfg.n_max, 9);

  nn::Tape<double> t;
  auto enc = m.embed_inputs(t, x, p);
  auto z = m.alternating_attention(t, enc.z, enc.s);
  auto [q, h] = m.cross_attend(t, z, enc.s);
  CHECK(t.val(h).shape == std::vector<int>{4, 8});
  CHECK(t.val(q).shape == std::vector<int>{4, 8});

  // duplicate every sample row: H must not move
  Eigen::MatrixXd x_dup(x.rows() * 2, x.cols());
  x_dup << x, x;
  nn::Tape<double> t2;
  auto enc2 = m.embed_inputs(t2, x_dup, p);
  auto z2 = m.alternating_attention(t2, enc2.z, enc2.s);
  auto [q2, h2] = m.cross_attend(t2, z2, enc2.s);
  for (int i = 0; i < 4 * 8; ++i) CHECK(t2.val(h2).at(i) == doctest::Approx(t.val(h).at(i)).epsilon(1e-9));
}

TEST_CASE("knowledge bias is additive") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(19);
  nn::Tape<double> t;
  nn::Tensor<double> hv({4, 8}), qv({4, 8});
  Rng rng(3);
  for (auto& v : hv.data) v = rng.uniform(-1, 1);
  for (auto& v : qv.data) v = rng.uniform(-1, 1);
  auto h = t.leaf(hv);
  auto q = t.leaf(qv);
  auto hb = m.knowledge_bias(t, h, q);
  for (int64_t i = 0; i < 32; ++i)
    CHECK(t.val(hb).at(i) == doctest::Approx(hv.at(i) + cfg.eps * qv.at(i)).epsilon(1e-12));

  // eps = 0 keeps H; q = 0 keeps H
  auto zero_q = t.leaf(nn::Tensor<double>({4, 8}));
  auto hb2 = m.knowledge_bias(t, h, zero_q);
  for (int64_t i = 0; i < 32; ++i) CHECK(t.val(hb2).at(i) == hv.at(i));
}

TEST_CASE("sinkhorn saturates to the dominant permutation and equalizes ties") {
  nn::Tape<double> t;
  Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(5, 5);
  std::vector<int> p{3, 1, 4, 0, 2};
  for (int i = 0; i < 5; ++i) perm(i, p[static_cast<size_t>(i)]) = 1.0;
  auto scores = t.leaf(nn::Tensor<double>::from_matrix(40.0 * perm));
  auto q = t.sinkhorn(scores, 30, 1.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(t.val(q).at(i * 5 + j) == doctest::Approx(perm(i, j)).epsilon(1e-3));

  auto hard = assignment::max_assignment(t.val(q).to_matrix());
  for (int i = 0; i < 5; ++i) CHECK(hard.col_of_row[static_cast<size_t>(i)] == p[static_cast<size_t>(i)]);

  // all-equal scores: uniform doubly stochastic matrix
  auto flat = t.leaf(nn::Tensor<double>::full({5, 5}, 1.7));
  auto qu = t.sinkhorn(flat, 10, 1.0);
  for (int64_t i = 0; i < 25; ++i) CHECK(t.val(qu).at(i) == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("decode produces doubly stochastic soft and valid hard permutations") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(23);
  auto [x, p] = tiny_instance<double>(4, 6, cfg.n_max, 10);

  nn::Tape<double> t;
  Rng noise_rng(5);
  auto noise = NoisePack<double>::sample(cfg.mc_samples, cfg.n_max, noise_rng);
  auto fv = m.forward(t, x, p, noise, PermMode::TrainHard, 1.0);

  CHECK(t.val(fv.dec.theta).shape == std::vector<int>{4, 4, 8});
  CHECK(t.val(fv.dec.scores).shape == std::vector<int>{4, 4});
  REQUIRE(fv.dec.samples.size() == 2);
  for (const auto& s : fv.dec.samples) {
    const auto& qs = t.val(s.q_soft);
    for (int r = 0; r < 4; ++r) {
      double rs = 0.0, cs = 0.0;
      for (int c = 0; c < 4; ++c) {
        rs += qs.at(r * 4 + c);
        cs += qs.at(c * 4 + r);
      }
      CHECK(rs == doctest::Approx(1.0).epsilon(1e-4));
      CHECK(cs == doctest::Approx(1.0).epsilon(1e-4));
    }
    // hard matrix is a permutation
    CHECK((s.q_hard.rowwise().sum().array() == 1.0).all());
    CHECK((s.q_hard.colwise().sum().array() == 1.0).all());
    // q_used value equals the hard permutation
    for (int64_t i = 0; i < 16; ++i)
      CHECK(t.val(s.q_used).at(i) == doctest::Approx(s.q_hard(i / 4, i % 4)).epsilon(1e-12));
  }
}

TEST_CASE("lt_decode support and ranges") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(29);
  nn::Tape<double> t;
  nn::Tensor<double> theta({4, 4, 8});
  Rng rng(6);
  for (auto& v : theta.data) v = rng.uniform(-2, 2);
  auto phi = m.lt_decode(t, t.leaf(theta));
  const auto& pv = t.val(phi);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double v = pv.at(i * 4 + j);
      if (i >= j)
        CHECK(v == 0.0);
      else {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }

  ModelConfig one = tiny_config();
  one.n_max = 1;
  DualSourceModel<double> m1(one);
  m1.init(1);
  nn::Tape<double> t1;
  nn::Tensor<double> th1({1, 1, 8});
  auto phi1 = m1.lt_decode(t1, t1.leaf(th1));
  CHECK(t1.val(phi1).at(0) == 0.0);
}

TEST_CASE("assemble_graph identity, relabeling, and validation") {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(4, 4);
  Rng rng(9);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) phi(i, j) = rng.uniform();

  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 4);
  CHECK((assemble_graph(id, phi) - phi).cwiseAbs().maxCoeff() == 0.0);

  // relabeling: assemble with P*Q equals relabeling assemble-with-Q by P
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 4);
  q(0, 2) = q(1, 0) = q(2, 3) = q(3, 1) = 1.0;
  Eigen::MatrixXd pp = Eigen::MatrixXd::Zero(4, 4);
  pp(0, 1) = pp(1, 0) = pp(2, 2) = pp(3, 3) = 1.0;
  Eigen::MatrixXd lhs = assemble_graph(pp * q, phi);
  Eigen::MatrixXd rhs = pp * assemble_graph(q, phi) * pp.transpose();
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);

  Eigen::MatrixXd not_perm = Eigen::MatrixXd::Constant(4, 4, 0.25);
  CHECK_THROWS_AS(assemble_graph(not_perm, phi), InvalidInputError);
}

TEST_CASE("thresholded assembled graphs are acyclic for fuzzed inputs") {
  Rng rng(31);
  for (int trial = 0; trial < 2000; ++trial) {
    int n = 3 + static_cast<int>(rng.uniform_int(0, 5));
    // random permutation
    std::vector<int> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    rng.shuffle(p);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) q(i, p[static_cast<size_t>(i)]) = 1.0;
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) phi(i, j) = rng.uniform();
    auto g = assemble_graph(q, phi);
    double thr = rng.uniform(0.01, 0.99);
    auto dag = threshold_graph(g, thr);
    CHECK(graph::is_acyclic(dag));
  }
}

TEST_CASE("full decode + threshold stays acyclic under fuzzed weights") {
  auto cfg = tiny_config();
  for (uint64_t seed = 0; seed < 20; ++seed) {
    DualSourceModel<double> m(cfg);
    m.init(seed);
    auto [x, p] = tiny_instance<double>(3 + seed % 2, 5, cfg.n_max, seed + 100);
    auto dec = m.infer(x, p, 0.7);
    for (double thr : {0.1, 0.5, 0.9}) CHECK(graph::is_acyclic(threshold_graph(dec.g_hat, thr)));
    // phi_slot strictly upper triangular
    for (int i = 0; i < cfg.n_max; ++i)
      for (int j = 0; j <= i; ++j) CHECK(dec.phi_slot(i, j) == 0.0);
    // g_hat equals the two-route assembly
    Eigen::MatrixXd rebuilt = assemble_graph(dec.q_hard, dec.phi_slot);
    CHECK((rebuilt - dec.g_hat).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("sample_graphs rates, degenerate entries, and acyclicity") {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, 3);
  auto empty = sample_graphs(g, 5, 1);
  for (const auto& d : empty) CHECK(d.edge_count() == 0);

  g(0, 1) = 1.0;
  auto certain = sample_graphs(g, 5, 2);
  for (const auto& d : certain) CHECK(d.at(0, 1) == 1);

  g(0, 2) = 0.3;
  int hits = 0;
  auto many = sample_graphs(g, 10000, 3);
  for (const auto& d : many) hits += d.at(0, 2);
  CHECK(static_cast<double>(hits) / 10000 == doctest::Approx(0.3).epsilon(0.07));

  Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(2, 2, 1.5);
  CHECK_THROWS_AS(sample_graphs(bad, 1, 1), InvalidInputError);
}

TEST_CASE("straight-through gradients equal the frozen-offset surrogate") {
  // Analytic gradients of the hard forward must match finite differences of
  // the same forward with the hard-soft offsets held constant.
  auto cfg = tiny_config();
  cfg.mc_samples = 2;
  DualSourceModel<double> m(cfg);
  m.init(37);
  auto [x, p] = tiny_instance<double>(4, 5, cfg.n_max, 55);

  Rng noise_rng(8);
  auto noise = NoisePack<double>::sample(cfg.mc_samples, cfg.n_max, noise_rng);

  // hard forward, collect analytic grads and the offsets
  nn::Tape<double> t;
  auto fv = m.forward(t, x, p, noise, PermMode::TrainHard, 1.0);
  nn::Tensor<double> w(t.val(fv.dec.samples[0].g_hat).shape);
  Rng wr(4);
  for (auto& v : w.data) v = wr.uniform(0.1, 1.0);
  auto loss = t.add(t.sum_weighted(fv.dec.samples[0].g_hat, w), t.sum_weighted(fv.dec.samples[1].g_hat, w));
  m.store.zero_grad();
  t.backward(loss);

  std::vector<nn::Tensor<double>> offsets;
  for (auto& s : fv.dec.samples) offsets.push_back(s.offset);

  auto eval_frozen = [&]() {
    nn::Tape<double> t2;
    auto fv2 = m.forward(t2, x, p, noise, PermMode::Frozen, 1.0, &offsets);
    auto l2 = t2.add(t2.sum_weighted(fv2.dec.samples[0].g_hat, w), t2.sum_weighted(fv2.dec.samples[1].g_hat, w));
    return t2.val(l2).at(0);
  };

  // frozen forward reproduces the hard value exactly
  CHECK(eval_frozen() == doctest::Approx(t.val(loss).at(0)).epsilon(1e-12));

  // spot-check several parameters against central differences
  auto params = m.store.all();
  Rng pick(12);
  double h = 1e-6;
  for (int probe = 0; probe < 12; ++probe) {
    auto* par = params[static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(params.size()) - 1))];
    int64_t i = pick.uniform_int(0, par->numel() - 1);
    double saved = par->value.at(i);
    par->value.at(i) = saved + h;
    double f_plus = eval_frozen();
    par->value.at(i) = saved - h;
    double f_minus = eval_frozen();
    par->value.at(i) = saved;
    double fd = (f_plus - f_minus) / (2 * h);
    double an = par->grad.at(i);
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}) < 1e-4);
  }
}

TEST_CASE("forward is deterministic given weights, input, and noise") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(41);
  auto [x, p] = tiny_instance<double>(4, 6, cfg.n_max, 77);
  Rng nr1(9), nr2(9);
  auto n1 = NoisePack<double>::sample(2, cfg.n_max, nr1);
  auto n2 = NoisePack<double>::sample(2, cfg.n_max, nr2);

  nn::Tape<double> t1, t2;
  auto f1v = m.forward(t1, x, p, n1, PermMode::TrainHard, 0.8);
  auto f2v = m.forward(t2, x, p, n2, PermMode::TrainHard, 0.8);
  CHECK(t1.val(f1v.dec.samples[0].g_hat).data == t2.val(f2v.dec.samples[0].g_hat).data);
  CHECK(f1v.dec.samples[1].q_hard == f2v.dec.samples[1].q_hard);
}

TEST_CASE("variable relabeling equivariance of the eval decode") {
  auto cfg = tiny_config();
  DualSourceModel<double> m(cfg);
  m.init(47);

  // full-size instance so no padding asymmetry interferes
  auto dag = graph::sample_er_dag(4, {2, 5}, 3);
  auto ds = scm::gen_linear(dag, 6, {1.0, 1.0}, 4);
  auto prior = knowledge::encode_prior(dag);
  auto inst = knowledge::pad(scm::standardize(ds.x), prior, 4);

  std::vector<int> perm{2, 0, 3, 1};
  Eigen::MatrixXd pm = Eigen::MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i) pm(perm[static_cast<size_t>(i)], i) = 1.0;  // column i -> row perm[i]

  Eigen::MatrixXd x_rel = inst.x_pad * pm.transpose();
  Eigen::MatrixXd p_rel = pm * inst.prior_pad * pm.transpose();

  auto a = m.infer(inst.x_pad, inst.prior_pad, 1.0);
  auto b = m.infer(x_rel, p_rel, 1.0);

  // Slots are internal, so relabeling permutes q_soft rows only; the pair
  // probabilities and the assembled graph relabel on both axes.
  Eigen::MatrixXd q_expected = pm * a.q_soft;
  CHECK((b.q_soft - q_expected).cwiseAbs().maxCoeff() < 1e-9);
  Eigen::MatrixXd pair_expected = pm * a.pair_probs * pm.transpose();
  CHECK((b.pair_probs - pair_expected).cwiseAbs().maxCoeff() < 1e-9);
  Eigen::MatrixXd g_expected = pm * a.g_hat * pm.transpose();
  CHECK((b.g_hat - g_expected).cwiseAbs().maxCoeff() < 1e-6);
}
