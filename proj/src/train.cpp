#include "causeway/train.hpp"

namespace causeway::training {

nlohmann::json to_json(const model::ModelConfig& m) {
  return {{"d", m.d},         {"layers", m.layers},
          {"heads", m.heads}, {"eps", m.eps},
          {"tau", m.tau},     {"sinkhorn_iters", m.sinkhorn_iters},
          {"n_max", m.n_max}, {"mc_samples", m.mc_samples},
          {"ffn_mult", m.ffn_mult},
          {"score_bound", m.score_bound}};
}

model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig m;
  m.d = j.value("d", m.d);
  m.layers = j.value("layers", m.layers);
  m.heads = j.value("heads", m.heads);
  m.eps = j.value("eps", m.eps);
  m.tau = j.value("tau", m.tau);
  m.sinkhorn_iters = j.value("sinkhorn_iters", m.sinkhorn_iters);
  m.n_max = j.value("n_max", m.n_max);
  m.mc_samples = j.value("mc_samples", m.mc_samples);
  m.ffn_mult = j.value("ffn_mult", m.ffn_mult);
  m.score_bound = j.value("score_bound", m.score_bound);
  m.validate();
  return m;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["model"] = to_json(c.model);
  j["loss"] = {{"alpha", c.loss.alpha}, {"k", c.loss.k}, {"prob_floor", c.loss.prob_floor}};
  j["optim"] = {{"lr", c.optim.lr},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"adam_eps", c.optim.adam_eps},
                {"grad_clip", c.optim.grad_clip},
                {"warmup_steps", c.optim.warmup_steps},
                {"final_lr_frac", c.optim.final_lr_frac}};
  j["schedule"] = {{"staged_intervals", c.schedule.staged_intervals}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["sample_subset"] = c.sample_subset;
  j["tau_start"] = c.tau_start;
  j["tau_end"] = c.tau_end;
  j["seed"] = c.seed;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["metrics_path"] = c.metrics_path;
  j["eval_threshold"] = c.eval_threshold;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    c.loss.alpha = l.value("alpha", c.loss.alpha);
    c.loss.k = l.value("k", c.loss.k);
    c.loss.prob_floor = l.value("prob_floor", c.loss.prob_floor);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    c.optim.lr = o.value("lr", c.optim.lr);
    c.optim.beta1 = o.value("beta1", c.optim.beta1);
    c.optim.beta2 = o.value("beta2", c.optim.beta2);
    c.optim.adam_eps = o.value("adam_eps", c.optim.adam_eps);
    c.optim.grad_clip = o.value("grad_clip", c.optim.grad_clip);
    c.optim.warmup_steps = o.value("warmup_steps", c.optim.warmup_steps);
    c.optim.final_lr_frac = o.value("final_lr_frac", c.optim.final_lr_frac);
  }
  if (j.contains("schedule")) c.schedule.staged_intervals = j.at("schedule").value("staged_intervals", true);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.sample_subset = j.value("sample_subset", c.sample_subset);
  c.tau_start = j.value("tau_start", c.tau_start);
  c.tau_end = j.value("tau_end", c.tau_end);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.metrics_path = j.value("metrics_path", c.metrics_path);
  c.eval_threshold = j.value("eval_threshold", c.eval_threshold);
  c.loss.validate();
  return c;
}

TrainRecord make_train_record(const scm::ScmDataset& ds) {
  TrainRecord r;
  r.x_std = scm::standardize(ds.x);
  r.dag = ds.dag;
  return r;
}

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j;
  j["epoch"] = m.epoch;
  j["mean_loss"] = m.mean_loss;
  j["skipped_steps"] = m.skipped_steps;
  for (const auto& [k, v] : m.validation) j[k] = v;
  return j;
}

std::string prior_mode_name(PriorMode m) {
  switch (m) {
    case PriorMode::FullPrior: return "full_prior";
    case PriorMode::NegOnly: return "neg_only";
    case PriorMode::None: return "none";
    case PriorMode::GroundTruth: return "ground_truth";
  }
  throw InvalidInputError("unknown prior mode");
}

PriorMode prior_mode_from_name(const std::string& s) {
  if (s == "full_prior") return PriorMode::FullPrior;
  if (s == "neg_only") return PriorMode::NegOnly;
  if (s == "none") return PriorMode::None;
  if (s == "ground_truth") return PriorMode::GroundTruth;
  throw InvalidConfigError("unknown prior mode: " + s);
}

knowledge::KnowledgePrior build_prior(const graph::Dag& dag, knowledge::PriorSource source,
                                      knowledge::PriorPolarity polarity, double retention, uint64_t seed) {
  auto prior = source == knowledge::PriorSource::Reachability ? knowledge::encode_prior(dag)
                                                              : knowledge::encode_prior_ground_truth(dag);
  if (polarity == knowledge::PriorPolarity::NegOnly) prior = knowledge::to_neg_only(prior);
  return knowledge::mask_prior(prior, {retention}, seed);
}

knowledge::KnowledgePrior build_eval_prior(const graph::Dag& dag, PriorMode mode, double retention,
                                           uint64_t seed) {
  switch (mode) {
    case PriorMode::FullPrior:
      return build_prior(dag, knowledge::PriorSource::Reachability, knowledge::PriorPolarity::WithPositives,
                         retention, seed);
    case PriorMode::NegOnly:
      return build_prior(dag, knowledge::PriorSource::Reachability, knowledge::PriorPolarity::NegOnly, retention,
                         seed);
    case PriorMode::None:
      return build_prior(dag, knowledge::PriorSource::Reachability, knowledge::PriorPolarity::WithPositives, 0.0,
                         seed);
    case PriorMode::GroundTruth:
      return knowledge::encode_prior_ground_truth(dag);
  }
  throw InvalidInputError("unknown prior mode");
}

double loss_graph_value(const std::vector<Eigen::MatrixXd>& g_samples, const graph::Dag& truth,
                        double prob_floor) {
  if (g_samples.empty()) throw InvalidInputError("loss_graph_value: no samples");
  int n = truth.n;
  std::vector<double> lls;
  lls.reserve(g_samples.size());
  for (const auto& g : g_samples) {
    if (g.rows() != n || g.cols() != n) throw InvalidInputError("loss_graph_value: shape mismatch");
    double ll = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        double p = std::min(std::max(g(i, j), prob_floor), 1.0 - prob_floor);
        ll += truth.at(i, j) ? std::log(p) : std::log(1.0 - p);
      }
    lls.push_back(ll);
  }
  double mx = *std::max_element(lls.begin(), lls.end());
  double acc = 0.0;
  for (double v : lls) acc += std::exp(v - mx);
  double lse = mx + std::log(acc);
  double loss = -(lse - std::log(static_cast<double>(lls.size())));
  if (!std::isfinite(loss)) throw NumericalError("loss_graph_value: non-finite loss");
  return loss;
}

}  // namespace causeway::training
