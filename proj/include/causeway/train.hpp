#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "causeway/curriculum.hpp"
#include "causeway/knowledge.hpp"
#include "causeway/losses.hpp"
#include "causeway/model.hpp"
#include "causeway/optim.hpp"
#include "causeway/scm.hpp"

namespace causeway::training {

struct TrainConfig {
  model::ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  CurriculumSchedule schedule = CurriculumSchedule::default_schedule();
  int epochs = 50;
  int batch_size = 8;
  int sample_subset = 64;   // observation rows per forward pass; <= 0 keeps all
  double tau_start = 1.0;   // sinkhorn temperature anneal
  double tau_end = 0.3;
  uint64_t seed = 1;
  std::string checkpoint_dir;
  std::string metrics_path;
  int checkpoint_every = 1;  // epochs
  double eval_threshold = 0.5;
  bool log_progress = false;
};

nlohmann::json to_json(const model::ModelConfig& m);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// One training instance: standardized observations plus ground truth.
struct TrainRecord {
  Eigen::MatrixXd x_std;
  graph::Dag dag;
};

TrainRecord make_train_record(const scm::ScmDataset& ds);

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  int skipped_steps = 0;
  // keyed e.g. val_f1_full_50, val_shd_neg_100
  std::map<std::string, double> validation;
};

nlohmann::json to_json(const EpochMetrics& m);

// ---------------------------------------------------------------------------
// Checkpoints: named parameter map + model config + optimizer and schedule
// state, versioned. See README for the byte layout.

template <class S>
struct CheckpointState {
  int next_epoch = 0;
  int64_t global_step = 0;
  uint64_t master_seed = 0;
};

namespace detail {

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void get(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
inline void put_string(std::ofstream& os, const std::string& s) {
  uint64_t len = s.size();
  put(os, len);
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::ifstream& is) {
  uint64_t len = 0;
  get(is, len);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, const model::DualSourceModel<S>& m, Adam<S>* opt,
                     const CheckpointState<S>& state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write("CWCK", 4);
  uint32_t version = 1;
  detail::put(os, version);
  detail::put_string(os, to_json(m.cfg).dump());
  detail::put(os, state.next_epoch);
  detail::put(os, state.global_step);
  detail::put(os, state.master_seed);
  uint8_t scalar_width = sizeof(S);
  detail::put(os, scalar_width);

  auto params = m.store.all();
  uint64_t count = params.size();
  detail::put(os, count);
  for (auto* p : params) {
    detail::put_string(os, p->name);
    uint32_t rank = static_cast<uint32_t>(p->value.shape.size());
    detail::put(os, rank);
    for (int d : p->value.shape) detail::put(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data.data()),
             static_cast<std::streamsize>(p->value.data.size() * sizeof(S)));
  }
  uint8_t has_opt = opt ? 1 : 0;
  detail::put(os, has_opt);
  if (opt) {
    detail::put(os, opt->step_count());
    for (size_t k = 0; k < params.size(); ++k) {
      os.write(reinterpret_cast<const char*>(opt->moments_m()[k].data()),
               static_cast<std::streamsize>(opt->moments_m()[k].size() * sizeof(double)));
      os.write(reinterpret_cast<const char*>(opt->moments_v()[k].data()),
               static_cast<std::streamsize>(opt->moments_v()[k].size() * sizeof(double)));
    }
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

template <class S>
CheckpointState<S> load_checkpoint(const std::string& path, model::DualSourceModel<S>& m, Adam<S>* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::string(magic, 4) != "CWCK") throw IoError("bad checkpoint magic");
  uint32_t version = 0;
  detail::get(is, version);
  if (version != 1) throw IoError("unsupported checkpoint version");
  auto cfg = model_config_from_json(nlohmann::json::parse(detail::get_string(is)));
  if (cfg.n_max != m.cfg.n_max)
    throw InvalidConfigError("checkpoint n_max " + std::to_string(cfg.n_max) + " does not match model n_max " +
                             std::to_string(m.cfg.n_max));
  if (cfg.d != m.cfg.d || cfg.layers != m.cfg.layers || cfg.heads != m.cfg.heads)
    throw InvalidConfigError("checkpoint architecture does not match model");

  CheckpointState<S> st;
  detail::get(is, st.next_epoch);
  detail::get(is, st.global_step);
  detail::get(is, st.master_seed);
  uint8_t scalar_width = 0;
  detail::get(is, scalar_width);
  if (scalar_width != sizeof(S)) throw InvalidConfigError("checkpoint scalar width mismatch");

  uint64_t count = 0;
  detail::get(is, count);
  auto params = m.store.all();
  if (count != params.size()) throw InvalidConfigError("checkpoint parameter count mismatch");
  for (auto* p : params) {
    std::string name = detail::get_string(is);
    if (name != p->name) throw InvalidConfigError("checkpoint parameter order mismatch at " + name);
    uint32_t rank = 0;
    detail::get(is, rank);
    std::vector<int> shape(rank);
    for (auto& d : shape) detail::get(is, d);
    if (shape != p->value.shape) throw InvalidConfigError("checkpoint shape mismatch at " + name);
    is.read(reinterpret_cast<char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * sizeof(S)));
  }
  uint8_t has_opt = 0;
  detail::get(is, has_opt);
  if (opt && !has_opt) throw InvalidConfigError("checkpoint has no optimizer state");
  if (has_opt) {
    int64_t t = 0;
    detail::get(is, t);
    if (opt) {
      opt->set_step_count(t);
      for (size_t k = 0; k < params.size(); ++k) {
        is.read(reinterpret_cast<char*>(opt->moments_m()[k].data()),
                static_cast<std::streamsize>(opt->moments_m()[k].size() * sizeof(double)));
        is.read(reinterpret_cast<char*>(opt->moments_v()[k].data()),
                static_cast<std::streamsize>(opt->moments_v()[k].size() * sizeof(double)));
      }
    } else {
      is.seekg(0, std::ios::end);
    }
  }
  if (!is) throw IoError("checkpoint truncated: " + path);
  return st;
}

// ---------------------------------------------------------------------------
// Prior construction for one training or evaluation instance.

enum class PriorMode { FullPrior, NegOnly, None, GroundTruth };

std::string prior_mode_name(PriorMode m);
PriorMode prior_mode_from_name(const std::string& s);

// encode -> (optional neg-only) -> mask at the given retention.
knowledge::KnowledgePrior build_prior(const graph::Dag& dag, knowledge::PriorSource source,
                                      knowledge::PriorPolarity polarity, double retention, uint64_t seed);

// Evaluation flavor keyed by PriorMode; `None` is full masking,
// `GroundTruth` is the unmasked adjacency prior.
knowledge::KnowledgePrior build_eval_prior(const graph::Dag& dag, PriorMode mode, double retention,
                                           uint64_t seed);

// ---------------------------------------------------------------------------

template <class S>
class Trainer {
 public:
  Trainer(model::DualSourceModel<S>& m, TrainConfig cfg) : model_(m), cfg_(std::move(cfg)) {
    cfg_.loss.validate();
    if (cfg_.batch_size < 1) throw InvalidConfigError("trainer: batch size must be >= 1");
    if (cfg_.epochs < 1) throw InvalidConfigError("trainer: epochs must be >= 1");
  }

  // Trains on `records`; validates on `val` each epoch. Deterministic in
  // (records, config, seed). `run_epochs` caps how many epochs this
  // invocation processes (the schedule horizon stays cfg.epochs), so an
  // interrupted run resumed from its checkpoint replays the uninterrupted
  // run exactly. Returns per-epoch metrics.
  std::vector<EpochMetrics> train(const std::vector<TrainRecord>& records, const std::vector<TrainRecord>& val,
                                  const std::string& resume_path = "", int run_epochs = -1) {
    if (records.empty()) throw InvalidInputError("trainer: empty corpus");
    int steps_per_epoch = (static_cast<int>(records.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    OptimConfig ocfg = cfg_.optim;
    ocfg.total_steps = steps_per_epoch * cfg_.epochs;
    Adam<S> opt(model_.store.all(), ocfg);

    int start_epoch = 0;
    int64_t global_step = 0;
    if (!resume_path.empty()) {
      auto st = load_checkpoint<S>(resume_path, model_, &opt);
      start_epoch = st.next_epoch;
      global_step = st.global_step;
    } else {
      model_.init(mix_seed(cfg_.seed, 0x696e6974ULL));
    }

    std::ofstream metrics;
    if (!cfg_.metrics_path.empty()) {
      metrics.open(cfg_.metrics_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
      if (!metrics) throw IoError("cannot open metrics log " + cfg_.metrics_path);
    }

    int end_epoch = run_epochs < 0 ? cfg_.epochs : std::min(cfg_.epochs, start_epoch + run_epochs);
    std::vector<EpochMetrics> history;
    int consecutive_skips = 0;
    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
      std::vector<int> order(records.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      Rng shuffle_rng(mix_seed(cfg_.seed, 0x73687566ULL, static_cast<uint64_t>(epoch)));
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      int loss_count = 0;
      EpochMetrics em;
      em.epoch = epoch;
      for (int step = 0; step < steps_per_epoch; ++step) {
        int begin = step * cfg_.batch_size;
        int end = std::min<int>(begin + cfg_.batch_size, static_cast<int>(order.size()));
        std::vector<const TrainRecord*> batch;
        for (int i = begin; i < end; ++i) batch.push_back(&records[static_cast<size_t>(order[static_cast<size_t>(i)])]);

        double tau = tau_at(global_step, ocfg.total_steps);
        uint64_t step_seed = mix_seed(cfg_.seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(step));
        double loss = train_step(batch, epoch, step_seed, tau, opt, consecutive_skips, em.skipped_steps);
        if (std::isfinite(loss)) {
          loss_sum += loss;
          ++loss_count;
          consecutive_skips = 0;
        } else {
          ++consecutive_skips;
          ++em.skipped_steps;
          if (consecutive_skips >= 3)
            throw NumericalError("trainer: three consecutive skipped steps at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) + ", tau=" + std::to_string(tau));
        }
        ++global_step;
      }
      em.mean_loss = loss_count ? loss_sum / loss_count : std::numeric_limits<double>::quiet_NaN();
      em.validation = validate(val, epoch);
      history.push_back(em);
      if (metrics.is_open()) {
        metrics << to_json(em).dump() << "\n";
        metrics.flush();
      }
      if (cfg_.log_progress) {
        std::fprintf(stderr, "epoch %d mean_loss %.4f val_f1_full_100 %.3f val_f1_full_0 %.3f\n", epoch,
                     em.mean_loss, em.validation.count("val_f1_full_100") ? em.validation.at("val_f1_full_100") : -1.0,
                     em.validation.count("val_f1_full_0") ? em.validation.at("val_f1_full_0") : -1.0);
      }
      if (!cfg_.checkpoint_dir.empty() && ((epoch + 1) % cfg_.checkpoint_every == 0 || epoch + 1 == end_epoch)) {
        std::filesystem::create_directories(cfg_.checkpoint_dir);
        CheckpointState<S> st{epoch + 1, global_step, cfg_.seed};
        char name[64];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
        save_checkpoint(cfg_.checkpoint_dir + "/" + name, model_, &opt, st);
        save_checkpoint(cfg_.checkpoint_dir + "/latest.ckpt", model_, &opt, st);
      }
    }
    return history;
  }

  double tau_at(int64_t global_step, int64_t total_steps) const {
    double t = total_steps <= 1 ? 1.0 : static_cast<double>(global_step) / static_cast<double>(total_steps - 1);
    t = std::min(1.0, std::max(0.0, t));
    return cfg_.tau_start + (cfg_.tau_end - cfg_.tau_start) * t;
  }

  // Deterministic hard inference for one standardized dataset + prior.
  graph::Dag predict(const Eigen::MatrixXd& x_std, const knowledge::KnowledgePrior& prior) const {
    auto inst = knowledge::pad(x_std, prior, model_.cfg.n_max);
    auto dec = model_.infer(inst.x_pad, inst.prior_pad, cfg_.tau_end);
    Eigen::MatrixXd block = dec.g_hat.topLeftCorner(prior.n, prior.n);
    return model::threshold_graph(block, cfg_.eval_threshold);
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  model::DualSourceModel<S>& model_;
  TrainConfig cfg_;

  double train_step(const std::vector<const TrainRecord*>& batch, int epoch, uint64_t step_seed, double tau,
                    Adam<S>& opt, int consecutive_skips, int& skipped) {
    (void)consecutive_skips;
    nn::Tape<S> tape;

    // One prior-type and retention draw per step (Table-2 categorical plus
    // the curriculum mixture), independent Bernoulli masks per item.
    Rng sched_rng(mix_seed(step_seed, 0x7363686aULL));
    auto [source, polarity] = knowledge::sample_prior_type(sched_rng);
    double rho = curriculum_rho(epoch, cfg_.schedule, sched_rng);

    std::vector<typename nn::Tape<S>::Var> graph_losses, h_items, g_items;
    for (size_t b = 0; b < batch.size(); ++b) {
      const TrainRecord& rec = *batch[b];
      uint64_t item_seed = mix_seed(step_seed, 0x6974656dULL, static_cast<uint64_t>(b));

      auto prior = build_prior(rec.dag, source, polarity, rho, mix_seed(item_seed, 1));
      Eigen::MatrixXd x = subset_rows(rec.x_std, mix_seed(item_seed, 2));
      auto inst = knowledge::pad(x, prior, model_.cfg.n_max);

      Rng noise_rng(mix_seed(item_seed, 3));
      auto noise = model::NoisePack<S>::sample(cfg_.loss.k, model_.cfg.n_max, noise_rng);
      auto fv = model_.forward(tape, inst.x_pad, inst.prior_pad, noise, model::PermMode::TrainHard, tau);

      graph::Dag padded_truth(model_.cfg.n_max);
      for (int i = 0; i < rec.dag.n; ++i)
        for (int j = 0; j < rec.dag.n; ++j)
          if (rec.dag.at(i, j)) padded_truth.set(i, j, 1);

      std::vector<typename nn::Tape<S>::Var> g_samples;
      for (auto& s : fv.dec.samples) g_samples.push_back(s.g_hat);
      graph_losses.push_back(loss_graph<S>(tape, g_samples, padded_truth, cfg_.loss));
      h_items.push_back(fv.h);
      g_items.push_back(fv.dec.samples.front().g_hat);
    }

    auto stacked = tape.reshape(tape.stack0(graph_losses), {static_cast<int>(graph_losses.size())});
    nn::Tensor<S> w = nn::Tensor<S>::full({static_cast<int>(graph_losses.size())},
                                          S(1) / static_cast<S>(graph_losses.size()));
    auto l_graph = tape.sum_weighted(stacked, w);
    int zero_norms = 0;
    auto l_sim = loss_sim<S>(tape, h_items, g_items, &zero_norms);
    auto total = total_loss<S>(tape, l_graph, l_sim, cfg_.loss.alpha);

    double loss_value = static_cast<double>(tape.val(total).at(0));
    if (!std::isfinite(loss_value)) {
      model_.store.zero_grad();
      return std::numeric_limits<double>::quiet_NaN();
    }

    model_.store.zero_grad();
    tape.backward(total);
    for (auto* p : model_.store.all())
      for (S g : p->grad.data)
        if (!std::isfinite(static_cast<double>(g))) {
          model_.store.zero_grad();
          return std::numeric_limits<double>::quiet_NaN();
        }
    opt.step();
    (void)skipped;
    return loss_value;
  }

  Eigen::MatrixXd subset_rows(const Eigen::MatrixXd& x, uint64_t seed) const {
    int s = static_cast<int>(x.rows());
    if (cfg_.sample_subset <= 0 || cfg_.sample_subset >= s) return x;
    std::vector<int> idx(static_cast<size_t>(s));
    for (int i = 0; i < s; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    Eigen::MatrixXd out(cfg_.sample_subset, x.cols());
    for (int i = 0; i < cfg_.sample_subset; ++i) out.row(i) = x.row(idx[static_cast<size_t>(i)]);
    return out;
  }

  std::map<std::string, double> validate(const std::vector<TrainRecord>& val, int epoch) const {
    std::map<std::string, double> out;
    if (val.empty()) return out;
    struct Setting {
      const char* tag;
      knowledge::PriorPolarity polarity;
      double retention;
    };
    const Setting settings[] = {
        {"full_0", knowledge::PriorPolarity::WithPositives, 0.0},
        {"full_50", knowledge::PriorPolarity::WithPositives, 0.5},
        {"full_100", knowledge::PriorPolarity::WithPositives, 1.0},
        {"neg_0", knowledge::PriorPolarity::NegOnly, 0.0},
        {"neg_50", knowledge::PriorPolarity::NegOnly, 0.5},
        {"neg_100", knowledge::PriorPolarity::NegOnly, 1.0},
    };
    for (const auto& st : settings) {
      double f1_sum = 0.0, shd_sum = 0.0;
      for (size_t i = 0; i < val.size(); ++i) {
        uint64_t s = mix_seed(cfg_.seed, 0x76616cULL, mix_seed(static_cast<uint64_t>(epoch), i));
        auto prior = build_prior(val[i].dag, knowledge::PriorSource::Reachability, st.polarity, st.retention, s);
        auto pred = predict(val[i].x_std, prior);
        f1_sum += graph::f1(pred, val[i].dag);
        shd_sum += graph::shd(pred, val[i].dag);
      }
      out["val_f1_" + std::string(st.tag)] = f1_sum / static_cast<double>(val.size());
      out["val_shd_" + std::string(st.tag)] = shd_sum / static_cast<double>(val.size());
    }
    return out;
  }
};

}  // namespace causeway::training
