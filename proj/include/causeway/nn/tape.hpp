#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "causeway/nn/tensor.hpp"

namespace causeway::nn {

// Reverse-mode tape. Each op records a closure that scatters the output
// gradient into its parents. A fresh tape is built per forward pass;
// parameter leaves flush their gradients back into Parameter::grad.
template <class S>
class Tape {
 public:
  using Var = int;

  Var leaf(Tensor<S> v, bool requires_grad = false) {
    return push(std::move(v), {}, nullptr, requires_grad);
  }

  Var param(Parameter<S>& p) {
    Var v = push_ref(p.value, {}, nullptr, true);
    bound_.push_back({v, &p});
    return v;
  }

  const Tensor<S>& val(Var v) const { return *nodes_[static_cast<size_t>(v)].val; }
  Tensor<S>& grad(Var v) { return nodes_[static_cast<size_t>(v)].grad; }
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise -----------------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tensor<S> out = val(a);
    out.mat() += val(b).mat();
    return push(std::move(out), {a, b}, [this, a, b](Var o) {
      acc(a, grad(o));
      acc(b, grad(o));
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tensor<S> out = val(a);
    out.mat() -= val(b).mat();
    return push(std::move(out), {a, b}, [this, a, b](Var o) {
      acc(a, grad(o));
      acc_neg(b, grad(o));
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tensor<S> out = val(a);
    out.mat().array() *= val(b).mat().array();
    return push(std::move(out), {a, b}, [this, a, b](Var o) {
      if (requires_grad(a)) acc_prod(a, grad(o), val(b));
      if (requires_grad(b)) acc_prod(b, grad(o), val(a));
    });
  }

  // scale * x + shift, elementwise with scalar constants
  Var affine(Var a, S scale, S shift) {
    Tensor<S> out = val(a);
    out.mat().array() = out.mat().array() * scale + shift;
    return push(std::move(out), {a}, [this, a, scale](Var o) {
      auto& g = grad(o);
      Tensor<S> tmp = g;
      tmp.mat().array() *= scale;
      acc(a, tmp);
    });
  }

  Var scale(Var a, S s) { return affine(a, s, S(0)); }

  // x + c for a constant tensor c (no gradient through c)
  Var add_const(Var a, const Tensor<S>& c) {
    check_shape(a, c.shape, "add_const");
    Tensor<S> out = val(a);
    out.mat() += c.mat();
    return push(std::move(out), {a}, [this, a](Var o) { acc(a, grad(o)); });
  }

  Var leaky_relu(Var a, S slope) {
    Tensor<S> out = val(a);
    out.mat().array() = out.mat().array().max(out.mat().array() * slope);
    Tensor<S> in = val(a);
    return push(std::move(out), {a}, [this, a, slope, in = std::move(in)](Var o) {
      auto& g = grad(o);
      Tensor<S> tmp = g;
      tmp.mat().array() *=
          (in.mat().array() > S(0)).template cast<S>() * (S(1) - slope) + slope;
      acc(a, tmp);
    });
  }

  Var tanh(Var a) {
    Tensor<S> out = val(a);
    for (auto& v : out.data) v = std::tanh(v);
    Tensor<S> saved = out;
    return push(std::move(out), {a}, [this, a, saved = std::move(saved)](Var o) {
      auto& g = grad(o);
      Tensor<S> tmp = g;
      for (int64_t i = 0; i < tmp.numel(); ++i) {
        S y = saved.at(i);
        tmp.at(i) *= S(1) - y * y;
      }
      acc(a, tmp);
    });
  }

  Var sigmoid(Var a) {
    Tensor<S> out = val(a);
    for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
    Tensor<S> saved = out;
    return push(std::move(out), {a}, [this, a, saved = std::move(saved)](Var o) {
      auto& g = grad(o);
      Tensor<S> tmp = g;
      for (int64_t i = 0; i < tmp.numel(); ++i) {
        S y = saved.at(i);
        tmp.at(i) *= y * (S(1) - y);
      }
      acc(a, tmp);
    });
  }

  Var log(Var a) {
    Tensor<S> out = val(a);
    for (auto& v : out.data) v = std::log(v);
    Tensor<S> in = val(a);
    return push(std::move(out), {a}, [this, a, in = std::move(in)](Var o) {
      auto& g = grad(o);
      Tensor<S> tmp = g;
      for (int64_t i = 0; i < tmp.numel(); ++i) tmp.at(i) /= in.at(i);
      acc(a, tmp);
    });
  }

  // Hard clamp; zero gradient outside (lo, hi).
  Var clamp(Var a, S lo, S hi) {
    Tensor<S> out = val(a);
    for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    Tensor<S> in = val(a);
    return push(std::move(out), {a}, [this, a, lo, hi, in = std::move(in)](Var o) {
      auto& g = grad(o);
      Tensor<S> tmp = g;
      for (int64_t i = 0; i < tmp.numel(); ++i)
        if (in.at(i) < lo || in.at(i) > hi) tmp.at(i) = S(0);
      acc(a, tmp);
    });
  }

  // ---- shape plumbing ----------------------------------------------------

  Var reshape(Var a, std::vector<int> new_shape) {
    if (Tensor<S>::numel_of(new_shape) != val(a).numel()) throw InvalidInputError("reshape: numel mismatch");
    Tensor<S> out = val(a);
    out.shape = new_shape;
    return push(std::move(out), {a}, [this, a](Var o) {
      Tensor<S> g = grad(o);
      g.shape = val(a).shape;
      acc(a, g);
    });
  }

  // Slice along axis 0 of a rank-2/3 tensor.
  Var slice0(Var a, int from, int to) {
    const auto& t = val(a);
    if (from < 0 || to > t.dim(0) || from >= to) throw InvalidInputError("slice0: bad range");
    std::vector<int> sh = t.shape;
    sh[0] = to - from;
    int64_t stride = t.numel() / t.dim(0);
    Tensor<S> out(sh);
    std::copy(t.data.begin() + from * stride, t.data.begin() + to * stride, out.data.begin());
    return push(std::move(out), {a}, [this, a, from, stride](Var o) {
      auto& g = grad(o);
      auto& pg = ensure_grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) pg.at(from * stride + i) += g.at(i);
    });
  }

  Var concat0(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.rank() != tb.rank()) throw InvalidInputError("concat0: rank mismatch");
    for (int i = 1; i < ta.rank(); ++i)
      if (ta.dim(i) != tb.dim(i)) throw InvalidInputError("concat0: trailing dims differ");
    std::vector<int> sh = ta.shape;
    sh[0] += tb.dim(0);
    Tensor<S> out(sh);
    std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + ta.numel());
    int64_t na = ta.numel();
    return push(std::move(out), {a, b}, [this, a, b, na](Var o) {
      auto& g = grad(o);
      auto& ga = ensure_grad(a);
      auto& gb = ensure_grad(b);
      for (int64_t i = 0; i < na; ++i) ga.at(i) += g.at(i);
      for (int64_t i = 0; i < gb.numel(); ++i) gb.at(i) += g.at(na + i);
    });
  }

  // Concatenate along axis 0 with a single copy per part.
  Var concat_many(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInputError("concat_many: empty");
    if (parts.size() == 1) return parts[0];
    const auto& first = val(parts[0]);
    std::vector<int> sh = first.shape;
    int64_t total0 = 0;
    for (Var p : parts) {
      const auto& t = val(p);
      if (t.rank() != first.rank()) throw InvalidInputError("concat_many: rank mismatch");
      for (int i = 1; i < t.rank(); ++i)
        if (t.dim(i) != first.dim(i)) throw InvalidInputError("concat_many: trailing dims differ");
      total0 += t.dim(0);
    }
    sh[0] = static_cast<int>(total0);
    Tensor<S> out(sh);
    std::vector<int64_t> offsets;
    offsets.reserve(parts.size());
    int64_t at = 0;
    for (Var p : parts) {
      const auto& t = val(p);
      offsets.push_back(at);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + at);
      at += t.numel();
    }
    return push(std::move(out), parts, [this, parts, offsets](Var o) {
      auto& g = grad(o);
      for (size_t k = 0; k < parts.size(); ++k) {
        if (!requires_grad(parts[k])) continue;
        auto& pg = ensure_grad(parts[k]);
        const S* src = g.data.data() + offsets[k];
        for (int64_t i = 0; i < pg.numel(); ++i) pg.at(i) += src[i];
      }
    });
  }

  // (A, B, C) -> (B, A, C)
  Var transpose01(Var a) {
    const auto& t = val(a);
    if (t.rank() != 3) throw InvalidInputError("transpose01: expects rank 3");
    int A = t.dim(0), B = t.dim(1), C = t.dim(2);
    Tensor<S> out({B, A, C});
    for (int i = 0; i < A; ++i)
      for (int j = 0; j < B; ++j)
        std::copy(t.data.begin() + (static_cast<int64_t>(i) * B + j) * C,
                  t.data.begin() + (static_cast<int64_t>(i) * B + j + 1) * C,
                  out.data.begin() + (static_cast<int64_t>(j) * A + i) * C);
    return push(std::move(out), {a}, [this, a, A, B, C](Var o) {
      auto& g = grad(o);
      auto& pg = ensure_grad(a);
      for (int j = 0; j < B; ++j)
        for (int i = 0; i < A; ++i)
          for (int c = 0; c < C; ++c)
            pg.at((static_cast<int64_t>(i) * B + j) * C + c) += g.at((static_cast<int64_t>(j) * A + i) * C + c);
    });
  }

  // Stack rank-1/2 tensors of identical shape along a new axis 0.
  Var stack0(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInputError("stack0: empty");
    const auto& first = val(parts[0]);
    int64_t stride = first.numel();
    std::vector<int> sh;
    sh.push_back(static_cast<int>(parts.size()));
    for (int i = 0; i < first.rank(); ++i) sh.push_back(first.dim(i));
    Tensor<S> out(sh);
    for (size_t k = 0; k < parts.size(); ++k) {
      const auto& t = val(parts[k]);
      if (t.numel() != stride) throw InvalidInputError("stack0: shape mismatch");
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<int64_t>(k) * stride);
    }
    return push(std::move(out), parts, [this, parts, stride](Var o) {
      auto& g = grad(o);
      for (size_t k = 0; k < parts.size(); ++k) {
        auto& pg = ensure_grad(parts[k]);
        for (int64_t i = 0; i < stride; ++i) pg.at(i) += g.at(static_cast<int64_t>(k) * stride + i);
      }
    });
  }

  // ---- reductions ----------------------------------------------------------

  // (A, B, C) -> (A, C), mean over axis 1
  Var mean_axis1(Var a) {
    const auto& t = val(a);
    if (t.rank() != 3) throw InvalidInputError("mean_axis1: expects rank 3");
    int A = t.dim(0), B = t.dim(1), C = t.dim(2);
    Tensor<S> out({A, C});
    for (int i = 0; i < A; ++i) {
      auto block = t.rows_block(static_cast<int64_t>(i) * B, B);
      out.rows_block(i, 1) = block.colwise().sum() / S(B);
    }
    return push(std::move(out), {a}, [this, a, A, B, C](Var o) {
      auto& g = grad(o);
      auto& pg = ensure_grad(a);
      for (int i = 0; i < A; ++i)
        for (int j = 0; j < B; ++j)
          for (int c = 0; c < C; ++c)
            pg.at((static_cast<int64_t>(i) * B + j) * C + c) += g.at(static_cast<int64_t>(i) * C + c) / S(B);
    });
  }

  // (A, C) -> (1, C), mean over axis 0
  Var mean_axis0(Var a) {
    const auto& t = val(a);
    int64_t rows = t.rows();
    int c = t.cols();
    Tensor<S> out({1, c});
    out.mat() = t.mat().colwise().sum() / S(rows);
    return push(std::move(out), {a}, [this, a, rows](Var o) {
      auto& g = grad(o);
      auto& pg = ensure_grad(a);
      for (int64_t r = 0; r < rows; ++r) pg.rows_block(r, 1) += g.mat() / S(rows);
    });
  }

  // sum(x .* w) for constant weights w -> scalar (shape {1})
  Var sum_weighted(Var a, const Tensor<S>& w) {
    check_shape(a, w.shape, "sum_weighted");
    Tensor<S> out({1});
    out.at(0) = (val(a).mat().array() * w.mat().array()).sum();
    Tensor<S> wc = w;
    return push(std::move(out), {a}, [this, a, wc = std::move(wc)](Var o) {
      S g = grad(o).at(0);
      auto& pg = ensure_grad(a);
      pg.mat().array() += g * wc.mat().array();
    });
  }

  // log(sum(exp(x))) over a rank-1 tensor -> scalar
  Var logsumexp(Var a) {
    const auto& t = val(a);
    S mx = t.data[0];
    for (S v : t.data) mx = std::max(mx, v);
    S acc_ = S(0);
    for (S v : t.data) acc_ += std::exp(v - mx);
    Tensor<S> out({1});
    out.at(0) = mx + std::log(acc_);
    Tensor<S> softmax(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) softmax.at(i) = std::exp(t.at(i) - out.at(0));
    return push(std::move(out), {a}, [this, a, softmax = std::move(softmax)](Var o) {
      S g = grad(o).at(0);
      auto& pg = ensure_grad(a);
      for (int64_t i = 0; i < pg.numel(); ++i) pg.at(i) += g * softmax.at(i);
    });
  }

  // ---- linear algebra -------------------------------------------------------

  // x (R, in) @ W (in, out) + b; collapses leading dims of x into R.
  Var linear(Var x, Var w, Var b) {
    const auto& tx = val(x);
    const auto& tw = val(w);
    int in = tw.dim(0), out_dim = tw.dim(1);
    if (tx.cols() != in) throw InvalidInputError("linear: input width mismatch");
    int64_t rows = tx.rows();
    std::vector<int> sh = tx.shape;
    sh.back() = out_dim;
    Tensor<S> out(sh);
    out.mat(rows, out_dim).noalias() = tx.mat() * tw.mat();
    if (b >= 0) out.mat(rows, out_dim).rowwise() += val(b).mat().row(0);
    return push(std::move(out), {x, w, b >= 0 ? b : x}, [this, x, w, b, rows, in, out_dim](Var o) {
      auto g = grad(o).mat(rows, out_dim);
      if (requires_grad(x)) ensure_grad(x).mat(rows, in).noalias() += g * val(w).mat().transpose();
      if (requires_grad(w)) ensure_grad(w).mat().noalias() += val(x).mat(rows, in).transpose() * g;
      if (b >= 0 && requires_grad(b)) ensure_grad(b).mat().row(0) += g.colwise().sum();
    });
  }

  // General 2-D matmul with transpose flags.
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const auto& A = val(a);
    const auto& B = val(b);
    int64_t ar = ta ? A.cols() : A.rows(), ac = ta ? A.rows() : A.cols();
    int64_t br = tb ? B.cols() : B.rows(), bc = tb ? B.rows() : B.cols();
    if (ac != br) throw InvalidInputError("matmul: inner dims differ");
    Tensor<S> out({static_cast<int>(ar), static_cast<int>(bc)});
    auto Am = A.mat();
    auto Bm = B.mat();
    if (!ta && !tb)
      out.mat().noalias() = Am * Bm;
    else if (ta && !tb)
      out.mat().noalias() = Am.transpose() * Bm;
    else if (!ta && tb)
      out.mat().noalias() = Am * Bm.transpose();
    else
      out.mat().noalias() = Am.transpose() * Bm.transpose();
    return push(std::move(out), {a, b}, [this, a, b, ta, tb](Var o) {
      auto g = grad(o).mat();
      auto Am = val(a).mat();
      auto Bm = val(b).mat();
      if (requires_grad(a)) {
        auto ga = ensure_grad(a).mat();
        if (!ta && !tb)
          ga.noalias() += g * Bm.transpose();
        else if (ta && !tb)
          ga.noalias() += Bm * g.transpose();
        else if (!ta && tb)
          ga.noalias() += g * Bm;
        else
          ga.noalias() += Bm.transpose() * g.transpose();
      }
      if (requires_grad(b)) {
        auto gb = ensure_grad(b).mat();
        if (!ta && !tb)
          gb.noalias() += Am.transpose() * g;
        else if (ta && !tb)
          gb.noalias() += Am * g;
        else if (!ta && tb)
          gb.noalias() += g.transpose() * Am;
        else
          gb.noalias() += g.transpose() * Am.transpose();
      }
    });
  }

  // LayerNorm over the last axis with learned gain/bias.
  Var layer_norm(Var x, Var gamma, Var beta, S eps = S(1e-5)) {
    const auto& t = val(x);
    int c = t.cols();
    int64_t rows = t.rows();
    Tensor<S> out = t;
    Tensor<S> xhat(t.shape);
    Tensor<S> inv_std({static_cast<int>(rows)});
    auto gm = val(gamma).mat();
    auto bm = val(beta).mat();
    for (int64_t r = 0; r < rows; ++r) {
      auto row = t.rows_block(r, 1);
      S mean = row.mean();
      S var = (row.array() - mean).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      inv_std.at(r) = is;
      xhat.rows_block(r, 1) = (row.array() - mean) * is;
      out.rows_block(r, 1).array() = xhat.rows_block(r, 1).array() * gm.array() + bm.array();
    }
    return push(std::move(out), {x, gamma, beta},
                [this, x, gamma, beta, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Var o) {
                  auto g = grad(o).mat(rows, c);
                  auto gm = val(gamma).mat();
                  if (requires_grad(gamma)) {
                    auto gg = ensure_grad(gamma).mat();
                    for (int64_t r = 0; r < rows; ++r)
                      gg.array() += g.row(r).array() * xhat.rows_block(r, 1).array();
                  }
                  if (requires_grad(beta)) ensure_grad(beta).mat() += g.colwise().sum();
                  if (requires_grad(x)) {
                    auto gx = ensure_grad(x).mat(rows, c);
                    for (int64_t r = 0; r < rows; ++r) {
                      // dy/dxhat = gamma; dxhat/dx per layernorm backward
                      Eigen::Array<S, 1, Eigen::Dynamic> gh = g.row(r).array() * gm.array();
                      auto xh = xhat.rows_block(r, 1).array();
                      S m1 = gh.mean();
                      S m2 = (gh * xh).mean();
                      gx.row(r).array() += inv_std.at(r) * (gh - m1 - xh * m2);
                    }
                  }
                });
  }

  // ---- attention -------------------------------------------------------------

  // Batched multi-head self-attention over axis 1 of x: (B, T, d).
  // One shared projection set; per-batch-slice softmax(QK^T/sqrt(dh))V.
  Var mha_self(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo, Var bo, int heads) {
    const auto& t = val(x);
    if (t.rank() != 3) throw InvalidInputError("mha_self: expects (B, T, d)");
    int B = t.dim(0), T = t.dim(1);
    return mha_impl(x, x, wq, bq, wk, bk, wv, bv, wo, bo, heads, B, T, T, /*self=*/true);
  }

  // Cross attention with a single query per batch item: q (B, d), kv (B, T, d).
  Var mha_cross(Var q, Var kv, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo, Var bo, int heads) {
    const auto& tq = val(q);
    const auto& tkv = val(kv);
    if (tq.rank() != 2 || tkv.rank() != 3) throw InvalidInputError("mha_cross: bad ranks");
    int B = tkv.dim(0), T = tkv.dim(1);
    if (tq.dim(0) != B) throw InvalidInputError("mha_cross: batch mismatch");
    return mha_impl(q, kv, wq, bq, wk, bk, wv, bv, wo, bo, heads, B, 1, T, /*self=*/false);
  }

  // ---- Sinkhorn ---------------------------------------------------------------

  // Log-space Sinkhorn normalization: alternating row/column log-sum-exp
  // subtraction for `iters` rounds, then exponentiation. Throws
  // NumericalError naming tau and the iteration when a non-finite value
  // appears.
  Var sinkhorn(Var log_alpha, int iters, double tau_for_diagnostics) {
    const auto& t = val(log_alpha);
    if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw InvalidInputError("sinkhorn: expects square matrix");
    int n = t.dim(0);
    Tensor<S> a = t;
    // Softmaxes after each half-step, as needed by the backward sweep.
    std::vector<Tensor<S>> soft_stages;
    soft_stages.reserve(static_cast<size_t>(iters) * 2);
    auto m = a.mat(n, n);
    for (int it = 0; it < iters; ++it) {
      {
        auto mx = m.rowwise().maxCoeff().eval();
        auto lse = (mx.array() + ((m.colwise() - mx).array().exp().rowwise().sum()).log()).eval();
        m.colwise() -= lse.matrix();
      }
      if (!a.all_finite())
        throw NumericalError("sinkhorn: non-finite after row pass, iteration " + std::to_string(it) +
                             ", tau=" + std::to_string(tau_for_diagnostics));
      {
        Tensor<S> sm = a;
        sm.mat(n, n) = sm.mat(n, n).array().exp();
        soft_stages.push_back(std::move(sm));
      }
      {
        auto mx = m.colwise().maxCoeff().eval();
        auto lse = (mx.array() + ((m.rowwise() - mx).array().exp().colwise().sum()).log()).eval();
        m.rowwise() -= lse.matrix();
      }
      if (!a.all_finite())
        throw NumericalError("sinkhorn: non-finite after column pass, iteration " + std::to_string(it) +
                             ", tau=" + std::to_string(tau_for_diagnostics));
      {
        Tensor<S> sm = a;
        sm.mat(n, n) = sm.mat(n, n).array().exp();
        soft_stages.push_back(std::move(sm));
      }
    }
    Tensor<S> out = soft_stages.back();
    return push(std::move(out), {log_alpha},
                [this, log_alpha, iters, n, soft_stages = std::move(soft_stages)](Var o) {
                  Tensor<S> g = grad(o);
                  auto gm = g.mat(n, n);
                  // out = exp(final log-probabilities)
                  gm.array() *= soft_stages.back().mat(n, n).array();
                  for (int it = iters - 1; it >= 0; --it) {
                    {
                      const auto sm = soft_stages[static_cast<size_t>(2 * it + 1)].mat(n, n);
                      auto colsum = gm.colwise().sum().eval();
                      gm.array() -= sm.array().rowwise() * colsum.array();
                    }
                    {
                      const auto sm = soft_stages[static_cast<size_t>(2 * it)].mat(n, n);
                      auto rowsum = gm.rowwise().sum().eval();
                      gm.array() -= sm.array().colwise() * rowsum.array();
                    }
                  }
                  acc(log_alpha, g);
                });
  }

  // ---- pairwise feature construction ------------------------------------------

  // (N, d) x (N, d) -> (N, N, d): out[i][j] = a[i] + b[j]
  Var outer_add(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    int n = ta.dim(0), d = ta.cols();
    if (tb.dim(0) != n || tb.cols() != d) throw InvalidInputError("outer_add: shape mismatch");
    Tensor<S> out({n, n, d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out.rows_block(static_cast<int64_t>(i) * n + j, 1) = ta.rows_block(i, 1) + tb.rows_block(j, 1);
    return push(std::move(out), {a, b}, [this, a, b, n, d](Var o) {
      auto& g = grad(o);
      if (requires_grad(a)) {
        auto& ga = ensure_grad(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) ga.rows_block(i, 1) += g.rows_block(static_cast<int64_t>(i) * n + j, 1);
      }
      if (requires_grad(b)) {
        auto& gb = ensure_grad(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) gb.rows_block(j, 1) += g.rows_block(static_cast<int64_t>(i) * n + j, 1);
      }
    });
  }

  // (N, d) x (N, d) -> (N, N, d): out[i][j] = a[i] .* b[j]
  Var outer_mul(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    int n = ta.dim(0), d = ta.cols();
    if (tb.dim(0) != n || tb.cols() != d) throw InvalidInputError("outer_mul: shape mismatch");
    Tensor<S> out({n, n, d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out.rows_block(static_cast<int64_t>(i) * n + j, 1) =
            ta.rows_block(i, 1).array() * tb.rows_block(j, 1).array();
    return push(std::move(out), {a, b}, [this, a, b, n, d](Var o) {
      auto& g = grad(o);
      auto am = val(a);
      auto bm = val(b);
      if (requires_grad(a)) {
        auto& ga = ensure_grad(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            ga.rows_block(i, 1).array() +=
                g.rows_block(static_cast<int64_t>(i) * n + j, 1).array() * bm.rows_block(j, 1).array();
      }
      if (requires_grad(b)) {
        auto& gb = ensure_grad(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            gb.rows_block(j, 1).array() +=
                g.rows_block(static_cast<int64_t>(i) * n + j, 1).array() * am.rows_block(i, 1).array();
      }
    });
  }

  // Broadcast-add a (1, d) bias over every row.
  Var add_bias(Var x, Var b) {
    const auto& t = val(x);
    Tensor<S> out = t;
    out.mat().rowwise() += val(b).mat().row(0);
    return push(std::move(out), {x, b}, [this, x, b](Var o) {
      auto& g = grad(o);
      acc(x, g);
      if (requires_grad(b)) ensure_grad(b).mat().row(0) += g.mat().colwise().sum();
    });
  }

  // Batch-level similarity alignment: cosine similarities of `embeds` rows
  // vs inverse-distance similarities of `flats` rows, both z-scored over
  // their off-diagonal entries, compared by mean squared difference.
  // Zero-norm embeddings contribute cosine 0 (counted in *zero_norm_count).
  Var similarity_alignment_loss(Var embeds, Var flats, int* zero_norm_count = nullptr) {
    const auto& E = val(embeds);
    const auto& Y = val(flats);
    int B = E.dim(0);
    if (Y.dim(0) != B) throw InvalidInputError("similarity_alignment_loss: batch mismatch");
    if (B < 2) throw InvalidInputError("similarity_alignment_loss: needs B >= 2");
    const S tiny = S(1e-12);
    int64_t m = static_cast<int64_t>(B) * (B - 1);

    Tensor<S> norms({B});
    for (int i = 0; i < B; ++i) norms.at(i) = E.rows_block(i, 1).norm();
    Tensor<S> A({B, B}), O({B, B}), D({B, B});
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < B; ++j) {
        if (i == j) {
          A.at(static_cast<int64_t>(i) * B + j) = S(0);
          O.at(static_cast<int64_t>(i) * B + j) = S(0);
          continue;
        }
        S ni = norms.at(i), nj = norms.at(j);
        if (ni < tiny || nj < tiny) {
          A.at(static_cast<int64_t>(i) * B + j) = S(0);
          if (zero_norm_count) ++*zero_norm_count;
        } else {
          A.at(static_cast<int64_t>(i) * B + j) =
              (E.rows_block(i, 1).array() * E.rows_block(j, 1).array()).sum() / (ni * nj);
        }
        S dist = (Y.rows_block(i, 1) - Y.rows_block(j, 1)).norm();
        D.at(static_cast<int64_t>(i) * B + j) = dist;
        O.at(static_cast<int64_t>(i) * B + j) = S(1) / (S(1) + dist);
      }
    }

    auto zstats = [&](const Tensor<S>& X) {
      S mu = S(0);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
          if (i != j) mu += X.at(static_cast<int64_t>(i) * B + j);
      mu /= S(m);
      S var = S(0);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
          if (i != j) {
            S u = X.at(static_cast<int64_t>(i) * B + j) - mu;
            var += u * u;
          }
      var /= S(m);
      return std::pair<S, S>(mu, std::sqrt(var));
    };
    auto [mu_a, sd_a] = zstats(A);
    auto [mu_o, sd_o] = zstats(O);

    Tensor<S> za({B, B}), zo({B, B});
    S loss = S(0);
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < B; ++j) {
        if (i == j) continue;
        int64_t ix = static_cast<int64_t>(i) * B + j;
        za.at(ix) = sd_a < tiny ? S(0) : (A.at(ix) - mu_a) / sd_a;
        zo.at(ix) = sd_o < tiny ? S(0) : (O.at(ix) - mu_o) / sd_o;
        S diff = za.at(ix) - zo.at(ix);
        loss += diff * diff;
      }
    }
    loss /= S(m);
    Tensor<S> out({1});
    out.at(0) = loss;

    return push(std::move(out), {embeds, flats},
                [this, embeds, flats, B, m, tiny, norms = std::move(norms), A = std::move(A),
                 O = std::move(O), D = std::move(D), za = std::move(za), zo = std::move(zo), sd_a,
                 sd_o](Var o) {
                  S g = grad(o).at(0);
                  const auto& E = val(embeds);
                  const auto& Y = val(flats);

                  // d loss / d standardized entries
                  Tensor<S> dza({B, B}), dzo({B, B});
                  for (int i = 0; i < B; ++i)
                    for (int j = 0; j < B; ++j)
                      if (i != j) {
                        int64_t ix = static_cast<int64_t>(i) * B + j;
                        S diff = S(2) * (za.at(ix) - zo.at(ix)) / S(m) * g;
                        dza.at(ix) = diff;
                        dzo.at(ix) = -diff;
                      }

                  // z-score backward over the off-diagonal set
                  auto zback = [&](const Tensor<S>& dz, const Tensor<S>& z, S sd) {
                    Tensor<S> dx({B, B});
                    if (sd < tiny) return dx;  // constant matrix: flat region
                    S mean_dz = S(0), mean_dzz = S(0);
                    for (int i = 0; i < B; ++i)
                      for (int j = 0; j < B; ++j)
                        if (i != j) {
                          int64_t ix = static_cast<int64_t>(i) * B + j;
                          mean_dz += dz.at(ix);
                          mean_dzz += dz.at(ix) * z.at(ix);
                        }
                    mean_dz /= S(m);
                    mean_dzz /= S(m);
                    for (int i = 0; i < B; ++i)
                      for (int j = 0; j < B; ++j)
                        if (i != j) {
                          int64_t ix = static_cast<int64_t>(i) * B + j;
                          dx.at(ix) = (dz.at(ix) - mean_dz - z.at(ix) * mean_dzz) / sd;
                        }
                    return dx;
                  };
                  Tensor<S> dA = zback(dza, za, sd_a);
                  Tensor<S> dO = zback(dzo, zo, sd_o);

                  if (requires_grad(embeds)) {
                    auto& gE = ensure_grad(embeds);
                    for (int i = 0; i < B; ++i)
                      for (int j = 0; j < B; ++j) {
                        if (i == j) continue;
                        int64_t ix = static_cast<int64_t>(i) * B + j;
                        S ni = norms.at(i), nj = norms.at(j);
                        if (ni < tiny || nj < tiny || dA.at(ix) == S(0)) continue;
                        S cij = A.at(ix);
                        gE.rows_block(i, 1) +=
                            dA.at(ix) * (val(embeds).rows_block(j, 1) / (ni * nj) -
                                         cij * val(embeds).rows_block(i, 1) / (ni * ni));
                        gE.rows_block(j, 1) +=
                            dA.at(ix) * (val(embeds).rows_block(i, 1) / (ni * nj) -
                                         cij * val(embeds).rows_block(j, 1) / (nj * nj));
                      }
                  }
                  if (requires_grad(flats)) {
                    auto& gY = ensure_grad(flats);
                    for (int i = 0; i < B; ++i)
                      for (int j = 0; j < B; ++j) {
                        if (i == j) continue;
                        int64_t ix = static_cast<int64_t>(i) * B + j;
                        S dist = D.at(ix);
                        if (dist < tiny) continue;
                        S s = S(1) + dist;
                        S dd = -dO.at(ix) / (s * s);
                        gY.rows_block(i, 1) += dd * (Y.rows_block(i, 1) - Y.rows_block(j, 1)) / dist;
                        gY.rows_block(j, 1) -= dd * (Y.rows_block(i, 1) - Y.rows_block(j, 1)) / dist;
                      }
                  }
                });
  }

  // ---- backward ---------------------------------------------------------------

  void backward(Var root) {
    if (val(root).numel() != 1) throw InvalidInputError("backward: root must be scalar");
    for (auto& n : nodes_) {
      if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), S(0));
    }
    ensure_grad(root).at(0) = S(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.back && n.requires_grad && !n.grad.data.empty()) n.back(i);
    }
    for (auto& [v, p] : bound_) {
      auto& g = nodes_[static_cast<size_t>(v)].grad;
      if (!g.data.empty()) p->grad.mat() += g.mat();
    }
  }

 private:
  struct Node {
    std::unique_ptr<Tensor<S>> owned;   // storage when the tape owns the value
    const Tensor<S>* val = nullptr;     // points at owned or external storage
    Tensor<S> grad;                     // sized lazily
    std::function<void(Var)> back;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<Var, Parameter<S>*>> bound_;

  Var push(Tensor<S> v, const std::vector<Var>& parents, std::function<void(Var)> back,
           bool force_requires = false) {
    Node n;
    n.owned = std::make_unique<Tensor<S>>(std::move(v));
    n.val = n.owned.get();
    n.back = std::move(back);
    n.requires_grad = force_requires;
    for (Var p : parents) n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(p)].requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var push_ref(const Tensor<S>& external, const std::vector<Var>& parents, std::function<void(Var)> back,
               bool force_requires) {
    Node n;
    n.val = &external;
    n.back = std::move(back);
    n.requires_grad = force_requires;
    for (Var p : parents) n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(p)].requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  Tensor<S>& ensure_grad(Var v) {
    auto& n = nodes_[static_cast<size_t>(v)];
    if (n.grad.data.empty()) n.grad = Tensor<S>(n.val->shape);
    return n.grad;
  }

  void acc(Var v, const Tensor<S>& g) {
    if (!requires_grad(v)) return;
    ensure_grad(v).mat() += g.mat();
  }

  void acc_neg(Var v, const Tensor<S>& g) {
    if (!requires_grad(v)) return;
    ensure_grad(v).mat() -= g.mat();
  }

  void acc_prod(Var v, const Tensor<S>& g, const Tensor<S>& other) {
    ensure_grad(v).mat().array() += g.mat().array() * other.mat().array();
  }

  void check_same_shape(Var a, Var b, const char* op) {
    if (val(a).shape != val(b).shape) throw InvalidInputError(std::string(op) + ": shape mismatch");
  }

  void check_shape(Var a, const std::vector<int>& sh, const char* op) {
    if (val(a).shape != sh) throw InvalidInputError(std::string(op) + ": shape mismatch");
  }

  // Shared implementation for self and single-query cross attention.
  // q_in: (B, Tq, d) or (B, d) when Tq == 1 and !self; kv_in: (B, Tk, d).
  Var mha_impl(Var q_in, Var kv_in, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo, Var bo,
               int heads, int B, int Tq, int Tk, bool self) {
    const auto& tq = val(q_in);
    const auto& tkv = val(kv_in);
    int d = tkv.cols();
    if (d % heads != 0) throw InvalidConfigError("mha: head count must divide width");
    int dh = d / heads;
    S alpha = S(1) / std::sqrt(static_cast<S>(dh));

    int64_t rq = static_cast<int64_t>(B) * Tq;
    int64_t rk = static_cast<int64_t>(B) * Tk;

    // Projections over all batches at once.
    Tensor<S> Q({B, Tq, d}), K({B, Tk, d}), V({B, Tk, d});
    Q.mat(rq, d).noalias() = tq.mat(rq, d) * val(wq).mat();
    Q.mat(rq, d).rowwise() += val(bq).mat().row(0);
    K.mat(rk, d).noalias() = tkv.mat(rk, d) * val(wk).mat();
    K.mat(rk, d).rowwise() += val(bk).mat().row(0);
    V.mat(rk, d).noalias() = tkv.mat(rk, d) * val(wv).mat();
    V.mat(rk, d).rowwise() += val(bv).mat().row(0);

    // Attention weights per (batch, head), stored for backward.
    Tensor<S> P({B * heads, Tq, Tk});
    Tensor<S> attn_out({B, Tq, d});
    using Mat = typename Tensor<S>::Mat;
    for (int b = 0; b < B; ++b) {
      auto Qb = Q.rows_block(static_cast<int64_t>(b) * Tq, Tq);
      auto Kb = K.rows_block(static_cast<int64_t>(b) * Tk, Tk);
      auto Vb = V.rows_block(static_cast<int64_t>(b) * Tk, Tk);
      auto Ob = attn_out.rows_block(static_cast<int64_t>(b) * Tq, Tq);
      for (int h = 0; h < heads; ++h) {
        Mat Sc = (Qb.middleCols(h * dh, dh) * Kb.middleCols(h * dh, dh).transpose()) * alpha;
        auto mx = Sc.rowwise().maxCoeff().eval();
        Sc = (Sc.colwise() - mx).array().exp();
        auto denom = Sc.rowwise().sum().eval();
        Sc.array().colwise() /= denom.array();
        P.rows_block((static_cast<int64_t>(b) * heads + h) * Tq, Tq) = Sc;
        Ob.middleCols(h * dh, dh).noalias() = Sc * Vb.middleCols(h * dh, dh);
      }
    }

    std::vector<int> out_shape = tq.shape;  // (B, Tq, d) or (B, d)
    Tensor<S> out(out_shape);
    out.mat(rq, d).noalias() = attn_out.mat(rq, d) * val(wo).mat();
    out.mat(rq, d).rowwise() += val(bo).mat().row(0);

    std::vector<Var> parents{q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo};
    return push(std::move(out), parents,
                [this, q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, heads, B, Tq, Tk, dh, alpha, self,
                 Q = std::move(Q), K = std::move(K), V = std::move(V), P = std::move(P),
                 attn_out = std::move(attn_out)](Var o) {
                  int d = dh * heads;
                  int64_t rq = static_cast<int64_t>(B) * Tq;
                  int64_t rk = static_cast<int64_t>(B) * Tk;
                  auto g = grad(o).mat(rq, d);

                  // Output projection.
                  Tensor<S> d_attn({B, Tq, d});
                  d_attn.mat(rq, d).noalias() = g * val(wo).mat().transpose();
                  if (requires_grad(wo)) ensure_grad(wo).mat().noalias() += attn_out.mat(rq, d).transpose() * g;
                  if (requires_grad(bo)) ensure_grad(bo).mat().row(0) += g.colwise().sum();

                  Tensor<S> dQ({B, Tq, d}), dK({B, Tk, d}), dV({B, Tk, d});
                  using Mat = typename Tensor<S>::Mat;
                  for (int b = 0; b < B; ++b) {
                    auto Qb = Q.rows_block(static_cast<int64_t>(b) * Tq, Tq);
                    auto Kb = K.rows_block(static_cast<int64_t>(b) * Tk, Tk);
                    auto Vb = V.rows_block(static_cast<int64_t>(b) * Tk, Tk);
                    auto dOb = d_attn.rows_block(static_cast<int64_t>(b) * Tq, Tq);
                    auto dQb = dQ.rows_block(static_cast<int64_t>(b) * Tq, Tq);
                    auto dKb = dK.rows_block(static_cast<int64_t>(b) * Tk, Tk);
                    auto dVb = dV.rows_block(static_cast<int64_t>(b) * Tk, Tk);
                    for (int h = 0; h < heads; ++h) {
                      auto Pm = P.rows_block((static_cast<int64_t>(b) * heads + h) * Tq, Tq);
                      Mat dP = dOb.middleCols(h * dh, dh) * Vb.middleCols(h * dh, dh).transpose();
                      dVb.middleCols(h * dh, dh).noalias() += Pm.transpose() * dOb.middleCols(h * dh, dh);
                      auto dots = (dP.array() * Pm.array()).rowwise().sum().eval();
                      Mat dS = ((dP.array().colwise() - dots.col(0).array()) * Pm.array() * alpha).matrix();
                      dQb.middleCols(h * dh, dh).noalias() += dS * Kb.middleCols(h * dh, dh);
                      dKb.middleCols(h * dh, dh).noalias() += dS.transpose() * Qb.middleCols(h * dh, dh);
                    }
                  }

                  // Project back through Q/K/V lifts.
                  const auto& tq = val(q_in);
                  const auto& tkv = val(kv_in);
                  if (requires_grad(wq)) ensure_grad(wq).mat().noalias() += tq.mat(rq, d).transpose() * dQ.mat(rq, d);
                  if (requires_grad(bq)) ensure_grad(bq).mat().row(0) += dQ.mat(rq, d).colwise().sum();
                  if (requires_grad(wk)) ensure_grad(wk).mat().noalias() += tkv.mat(rk, d).transpose() * dK.mat(rk, d);
                  if (requires_grad(bk)) ensure_grad(bk).mat().row(0) += dK.mat(rk, d).colwise().sum();
                  if (requires_grad(wv)) ensure_grad(wv).mat().noalias() += tkv.mat(rk, d).transpose() * dV.mat(rk, d);
                  if (requires_grad(bv)) ensure_grad(bv).mat().row(0) += dV.mat(rk, d).colwise().sum();

                  if (self) {
                    if (requires_grad(kv_in)) {
                      auto gkv = ensure_grad(kv_in).mat(rk, d);
                      gkv.noalias() += dK.mat(rk, d) * val(wk).mat().transpose();
                      gkv.noalias() += dV.mat(rk, d) * val(wv).mat().transpose();
                      gkv.noalias() += dQ.mat(rq, d) * val(wq).mat().transpose();
                    }
                  } else {
                    if (requires_grad(q_in))
                      ensure_grad(q_in).mat(rq, d).noalias() += dQ.mat(rq, d) * val(wq).mat().transpose();
                    if (requires_grad(kv_in)) {
                      auto gkv = ensure_grad(kv_in).mat(rk, d);
                      gkv.noalias() += dK.mat(rk, d) * val(wk).mat().transpose();
                      gkv.noalias() += dV.mat(rk, d) * val(wv).mat().transpose();
                    }
                  }
                });
  }
};

}  // namespace causeway::nn
