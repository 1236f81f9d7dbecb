#pragma once

#include <cmath>
#include <vector>

#include "causeway/nn/module.hpp"

namespace causeway::training {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;   // global L2 norm; <= 0 disables
  int warmup_steps = 300;
  int total_steps = 10000;  // cosine decay horizon
  double final_lr_frac = 0.1;
};

// Adam with linear warmup and cosine decay. Moments are kept in double so
// checkpoints round-trip bit-exactly regardless of the model scalar type.
template <class S>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<S>*> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }

  double lr_at(int64_t step) const {
    double base = cfg_.lr;
    if (step < cfg_.warmup_steps) return base * static_cast<double>(step + 1) / cfg_.warmup_steps;
    double t = static_cast<double>(step - cfg_.warmup_steps) /
               std::max<int64_t>(1, cfg_.total_steps - cfg_.warmup_steps);
    t = std::min(1.0, t);
    double floor = base * cfg_.final_lr_frac;
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(M_PI * t));
  }

  // Returns the pre-clip global gradient norm.
  double step() {
    double sq = 0.0;
    for (auto* p : params_)
      for (S g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    double norm = std::sqrt(sq);
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;

    ++t_;
    double lr = lr_at(t_ - 1);
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      for (int64_t i = 0; i < p->numel(); ++i) {
        double g = static_cast<double>(p->grad.at(i)) * scale;
        double& m = m_[k][static_cast<size_t>(i)];
        double& v = v_[k][static_cast<size_t>(i)];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps);
        p->value.at(i) = static_cast<S>(static_cast<double>(p->value.at(i)) - update);
      }
    }
    return norm;
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  std::vector<nn::Parameter<S>*> params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace causeway::training
