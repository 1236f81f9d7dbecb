#pragma once

#include <memory>
#include <string>
#include <vector>

#include "causeway/nn/tape.hpp"
#include "causeway/rng.hpp"

namespace causeway::nn {

// Owns every Parameter of a model; iteration order is creation order and is
// the checkpoint order.
template <class S>
class ParamStore {
 public:
  Parameter<S>* make(const std::string& name, std::vector<int> shape) {
    params_.push_back(std::make_unique<Parameter<S>>(name, Tensor<S>(std::move(shape))));
    return params_.back().get();
  }

  std::vector<Parameter<S>*> all() const {
    std::vector<Parameter<S>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter<S>* find(const std::string& name) const {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  int64_t total_params() const {
    int64_t t = 0;
    for (auto& p : params_) t += p->numel();
    return t;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
};

template <class S>
void init_uniform(Parameter<S>* p, Rng& rng, double bound) {
  for (auto& v : p->value.data) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
struct Linear {
  Parameter<S>* w = nullptr;
  Parameter<S>* b = nullptr;

  static Linear create(ParamStore<S>& store, const std::string& name, int in, int out) {
    Linear l;
    l.w = store.make(name + ".w", {in, out});
    l.b = store.make(name + ".b", {1, out});
    return l;
  }

  void init(Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(w->value.dim(0)));
    init_uniform(w, rng, bound);
    init_uniform(b, rng, bound);
  }

  typename Tape<S>::Var apply(Tape<S>& t, typename Tape<S>::Var x) const {
    return t.linear(x, t.param(*w), t.param(*b));
  }
};

template <class S>
struct LayerNorm {
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;

  static LayerNorm create(ParamStore<S>& store, const std::string& name, int d) {
    LayerNorm ln;
    ln.gamma = store.make(name + ".gamma", {1, d});
    ln.beta = store.make(name + ".beta", {1, d});
    return ln;
  }

  void init() {
    std::fill(gamma->value.data.begin(), gamma->value.data.end(), S(1));
    std::fill(beta->value.data.begin(), beta->value.data.end(), S(0));
  }

  typename Tape<S>::Var apply(Tape<S>& t, typename Tape<S>::Var x) const {
    return t.layer_norm(x, t.param(*gamma), t.param(*beta));
  }
};

template <class S>
struct Attention {
  Parameter<S>*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  int heads = 1;

  static Attention create(ParamStore<S>& store, const std::string& name, int d, int heads) {
    Attention a;
    a.heads = heads;
    a.wq = store.make(name + ".wq", {d, d});
    a.bq = store.make(name + ".bq", {1, d});
    a.wk = store.make(name + ".wk", {d, d});
    a.bk = store.make(name + ".bk", {1, d});
    a.wv = store.make(name + ".wv", {d, d});
    a.bv = store.make(name + ".bv", {1, d});
    a.wo = store.make(name + ".wo", {d, d});
    a.bo = store.make(name + ".bo", {1, d});
    return a;
  }

  void init(Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(wq->value.dim(0)));
    for (auto* p : {wq, wk, wv, wo}) init_uniform(p, rng, bound);
    for (auto* p : {bq, bk, bv, bo})
      std::fill(p->value.data.begin(), p->value.data.end(), S(0));
  }

  typename Tape<S>::Var self(Tape<S>& t, typename Tape<S>::Var x) const {
    return t.mha_self(x, t.param(*wq), t.param(*bq), t.param(*wk), t.param(*bk), t.param(*wv),
                      t.param(*bv), t.param(*wo), t.param(*bo), heads);
  }

  typename Tape<S>::Var cross(Tape<S>& t, typename Tape<S>::Var q, typename Tape<S>::Var kv) const {
    return t.mha_cross(q, kv, t.param(*wq), t.param(*bq), t.param(*wk), t.param(*bk), t.param(*wv),
                       t.param(*bv), t.param(*wo), t.param(*bo), heads);
  }
};

template <class S>
struct FeedForward {
  Linear<S> l1, l2;
  S slope = S(0.01);

  static FeedForward create(ParamStore<S>& store, const std::string& name, int d, int hidden) {
    FeedForward f;
    f.l1 = Linear<S>::create(store, name + ".l1", d, hidden);
    f.l2 = Linear<S>::create(store, name + ".l2", hidden, d);
    return f;
  }

  void init(Rng& rng) {
    l1.init(rng);
    l2.init(rng);
  }

  typename Tape<S>::Var apply(Tape<S>& t, typename Tape<S>::Var x) const {
    return l2.apply(t, t.leaky_relu(l1.apply(t, x), slope));
  }
};

// Pre-norm transformer block: x += Attn(LN(x)); x += FFN(LN(x)).
// The attention sub-step is left to the caller (the encoder slices and
// transposes around it), so this only bundles the parameters.
template <class S>
struct Block {
  LayerNorm<S> ln_attn, ln_ffn;
  Attention<S> attn;
  FeedForward<S> ffn;

  static Block create(ParamStore<S>& store, const std::string& name, int d, int heads, int ffn_hidden) {
    Block b;
    b.ln_attn = LayerNorm<S>::create(store, name + ".ln_attn", d);
    b.ln_ffn = LayerNorm<S>::create(store, name + ".ln_ffn", d);
    b.attn = Attention<S>::create(store, name + ".attn", d, heads);
    b.ffn = FeedForward<S>::create(store, name + ".ffn", d, ffn_hidden);
    return b;
  }

  void init(Rng& rng) {
    ln_attn.init();
    ln_ffn.init();
    attn.init(rng);
    ffn.init(rng);
  }

  typename Tape<S>::Var ffn_residual(Tape<S>& t, typename Tape<S>::Var x) const {
    return t.add(x, ffn.apply(t, ln_ffn.apply(t, x)));
  }
};

}  // namespace causeway::nn
