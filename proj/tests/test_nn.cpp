#include <doctest.h>

#include <functional>

#include "causeway/nn/module.hpp"
#include "causeway/nn/tape.hpp"
#include "causeway/rng.hpp"

using namespace causeway;
using namespace causeway::nn;

namespace {

using DTape = Tape<double>;
using DTensor = Tensor<double>;
using Var = DTape::Var;

DTensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  DTensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Builds the graph twice per perturbed element and compares central finite
// differences against the analytic gradient.
void check_gradients(std::vector<DTensor> inputs,
                     const std::function<Var(DTape&, const std::vector<Var>&)>& build, double tol = 1e-6,
                     double h = 1e-6) {
  DTape tape;
  std::vector<Var> vars;
  for (auto& in : inputs) vars.push_back(tape.leaf(in, true));
  Var loss = build(tape, vars);
  REQUIRE(tape.val(loss).numel() == 1);
  tape.backward(loss);

  auto eval = [&](const std::vector<DTensor>& ins) {
    DTape t2;
    std::vector<Var> vs;
    for (const auto& in : ins) vs.push_back(t2.leaf(in, false));
    return t2.val(build(t2, vs)).at(0);
  };

  for (size_t k = 0; k < inputs.size(); ++k) {
    const auto& g = tape.grad(vars[k]);
    REQUIRE(g.numel() == inputs[k].numel());
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      auto plus = inputs;
      plus[k].at(i) += h;
      auto minus = inputs;
      minus[k].at(i) -= h;
      double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      double an = g.at(i);
      double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

// Reduce any tensor to a scalar with fixed pseudo-random weights so every
// output coordinate contributes to the checked gradient.
Var spread_sum(DTape& t, Var x) {
  const auto& v = t.val(x);
  DTensor w(v.shape);
  Rng rng(0xABCDEF);
  for (auto& e : w.data) e = rng.uniform(-1.0, 1.0);
  return t.sum_weighted(x, w);
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);

  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1])));
  });
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.affine(v[0], 2.5, -0.5));
  });
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.leaky_relu(v[0], 0.01));
  });
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.sigmoid(v[0])); });
  check_gradients({a}, [&b](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.add_const(v[0], b)); });
}

TEST_CASE("log and clamp gradients away from kinks") {
  Rng rng(2);
  DTensor a({3, 3});
  for (auto& v : a.data) v = 0.2 + 0.6 * rng.uniform();
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.log(v[0])); });
  // clamp: interior path (identity) and clipped path (zero gradient)
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.clamp(v[0], 1e-6, 1.0 - 1e-6));
  });
  DTape t;
  DTensor big({2});
  big.data = {5.0, -5.0};
  auto v = t.leaf(big, true);
  auto c = t.clamp(v, 0.0, 1.0);
  CHECK(t.val(c).at(0) == 1.0);
  CHECK(t.val(c).at(1) == 0.0);
  auto loss = spread_sum(t, c);
  t.backward(loss);
  CHECK(t.grad(v).at(0) == 0.0);
  CHECK(t.grad(v).at(1) == 0.0);
}

TEST_CASE("shape op gradients") {
  Rng rng(3);
  auto a = random_tensor({2, 3, 4}, rng);
  auto b = random_tensor({3, 3, 4}, rng);

  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.reshape(v[0], {6, 4}));
  });
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.slice0(v[0], 1, 2)); });
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.concat0(v[0], v[1]));
  });
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.concat_many({v[0], v[1], v[0]}));
  });
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.transpose01(v[0])); });
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return t.add(spread_sum(t, t.stack0({t.slice0(v[0], 0, 1), t.slice0(v[1], 2, 3)})), spread_sum(t, v[1]));
  });
}

TEST_CASE("reduction gradients") {
  Rng rng(4);
  auto a = random_tensor({3, 4, 5}, rng);
  auto m = random_tensor({4, 5}, rng);
  check_gradients({a}, [](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.mean_axis1(v[0])); });
  check_gradients({m}, [](DTape& t, const std::vector<Var>& v) { return spread_sum(t, t.mean_axis0(v[0])); });
  auto k = random_tensor({6}, rng);
  check_gradients({k}, [](DTape& t, const std::vector<Var>& v) { return t.logsumexp(v[0]); });
}

TEST_CASE("linear and matmul gradients") {
  Rng rng(5);
  auto x = random_tensor({2, 3, 4}, rng);
  auto w = random_tensor({4, 6}, rng);
  auto b = random_tensor({1, 6}, rng);
  check_gradients({x, w, b}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.linear(v[0], v[1], v[2]));
  });

  auto a = random_tensor({3, 4}, rng);
  auto c = random_tensor({4, 5}, rng);
  check_gradients({a, c}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.matmul(v[0], v[1]));
  });
  auto ct = random_tensor({5, 4}, rng);
  check_gradients({a, ct}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.matmul(v[0], v[1], false, true));
  });
  auto at = random_tensor({4, 3}, rng);
  check_gradients({at, c}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.matmul(v[0], v[1], true, false));
  });
}

TEST_CASE("layer_norm gradients") {
  Rng rng(6);
  auto x = random_tensor({5, 8}, rng, 2.0);
  auto gamma = random_tensor({1, 8}, rng);
  auto beta = random_tensor({1, 8}, rng);
  check_gradients({x, gamma, beta}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.layer_norm(v[0], v[1], v[2]));
  }, 1e-5);
}

TEST_CASE("pairwise op gradients") {
  Rng rng(7);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({4, 3}, rng);
  auto bias = random_tensor({1, 3}, rng);
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.outer_add(v[0], v[1]));
  });
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.outer_mul(v[0], v[1]));
  });
  check_gradients({a, bias}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.add_bias(v[0], v[1]));
  });
}

TEST_CASE("self attention gradients") {
  Rng rng(8);
  auto x = random_tensor({2, 5, 8}, rng);  // B=2, T=5, d=8
  std::vector<DTensor> params;
  for (int i = 0; i < 4; ++i) {
    params.push_back(random_tensor({8, 8}, rng, 0.5));
    params.push_back(random_tensor({1, 8}, rng, 0.1));
  }
  std::vector<DTensor> inputs{x};
  for (auto& p : params) inputs.push_back(p);
  check_gradients(inputs, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.mha_self(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], 2));
  }, 1e-5);
}

TEST_CASE("cross attention gradients") {
  Rng rng(9);
  auto q = random_tensor({3, 8}, rng);      // B=3 single queries
  auto kv = random_tensor({3, 6, 8}, rng);  // T=6 keys each
  std::vector<DTensor> inputs{q, kv};
  for (int i = 0; i < 4; ++i) {
    inputs.push_back(random_tensor({8, 8}, rng, 0.5));
    inputs.push_back(random_tensor({1, 8}, rng, 0.1));
  }
  check_gradients(inputs, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.mha_cross(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], 2));
  }, 1e-5);
}

TEST_CASE("sinkhorn gradients and row/column sums") {
  Rng rng(10);
  auto scores = random_tensor({5, 5}, rng, 2.0);
  check_gradients({scores}, [](DTape& t, const std::vector<Var>& v) {
    return spread_sum(t, t.sinkhorn(v[0], 12, 1.0));
  }, 1e-5);

  DTape t;
  auto v = t.leaf(scores);
  auto q = t.sinkhorn(v, 30, 1.0);
  const auto& qv = t.val(q);
  for (int r = 0; r < 5; ++r) {
    double rs = 0.0;
    for (int c = 0; c < 5; ++c) rs += qv.at(r * 5 + c);
    CHECK(rs == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (int c = 0; c < 5; ++c) {
    double cs = 0.0;
    for (int r = 0; r < 5; ++r) cs += qv.at(r * 5 + c);
    CHECK(cs == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("similarity alignment loss gradients") {
  Rng rng(11);
  auto e = random_tensor({3, 4}, rng);
  auto y = random_tensor({3, 9}, rng);
  check_gradients({e, y}, [](DTape& t, const std::vector<Var>& v) {
    return t.similarity_alignment_loss(v[0], v[1]);
  }, 1e-5);
}

TEST_CASE("gradient accumulates across multiple uses of a var") {
  DTensor a({2, 2});
  a.data = {1.0, 2.0, 3.0, 4.0};
  DTape t;
  auto v = t.leaf(a, true);
  auto doubled = t.add(v, v);
  DTensor ones({2, 2});
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  auto loss = t.sum_weighted(doubled, ones);
  t.backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(t.grad(v).at(i) == doctest::Approx(2.0));
}

TEST_CASE("parameters receive gradients through the tape") {
  ParamStore<double> store;
  auto lin = Linear<double>::create(store, "lin", 3, 2);
  Rng rng(12);
  lin.init(rng);

  DTape t;
  DTensor x({4, 3});
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
  auto out = lin.apply(t, t.leaf(x));
  auto loss = spread_sum(t, out);
  store.zero_grad();
  t.backward(loss);

  double gsum = 0.0;
  for (auto v : lin.w->grad.data) gsum += std::abs(v);
  CHECK(gsum > 0.0);
}

TEST_CASE("backward requires a scalar root") {
  DTape t;
  DTensor a({2, 2});
  auto v = t.leaf(a, true);
  CHECK_THROWS_AS(t.backward(v), InvalidInputError);
}
