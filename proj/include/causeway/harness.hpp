#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "causeway/train.hpp"

namespace causeway::harness {

struct SweepSpec {
  std::vector<double> retention_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<training::PriorMode> prior_modes{training::PriorMode::FullPrior, training::PriorMode::NegOnly,
                                               training::PriorMode::None, training::PriorMode::GroundTruth};
  std::vector<scm::MechanismConfig> test_mechanisms{scm::MechanismConfig::linear({2.5, 2.5})};
  int trials = 20;
  int n = 8;
  std::pair<int, int> edge_range{8, 24};
  int samples_per_graph = 200;

  void validate() const;
};

nlohmann::json to_json(const SweepSpec& s);
SweepSpec sweep_spec_from_json(const nlohmann::json& j);

struct EvalCell {
  std::string mechanism;
  int n = 0;
  std::string density;  // edge range, e.g. "[8,24]"
  std::string prior_mode;
  double retention = 0.0;
  double mean_shd = 0.0, mean_f1 = 0.0;
  double std_shd = 0.0, std_f1 = 0.0;
  int trials = 0;
  bool failed = false;
  std::string error;
};

struct EvalReport {
  int schema_version = 1;
  uint64_t seed = 0;
  std::vector<EvalCell> cells;

  bool any_failed() const {
    for (const auto& c : cells)
      if (c.failed) return true;
    return false;
  }
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Correlation-threshold comparator: directed edge i -> j whenever
// |corr(X_i, X_j)| > threshold and i precedes j in a variance ordering
// (stable, so standardized inputs fall back to index order). Acyclic by
// construction. Constant columns count as zero correlation.
graph::Dag null_baseline(const scm::ScmDataset& dataset, double threshold);

// Scores one prior mode / retention on shared test records (paired across
// calls with the same records).
struct ModeScore {
  double mean_f1 = 0.0, mean_shd = 0.0;
  double std_f1 = 0.0, std_shd = 0.0;
  std::vector<double> per_trial_f1;
};

template <class S>
ModeScore score_mode(const model::DualSourceModel<S>& m, const std::vector<training::TrainRecord>& test,
                     training::PriorMode mode, double retention, uint64_t seed, double tau, double threshold) {
  ModeScore out;
  std::vector<double> f1s, shds;
  for (size_t i = 0; i < test.size(); ++i) {
    auto prior = training::build_eval_prior(test[i].dag, mode, retention, mix_seed(seed, i));
    auto inst = knowledge::pad(test[i].x_std, prior, m.cfg.n_max);
    auto dec = m.infer(inst.x_pad, inst.prior_pad, tau);
    Eigen::MatrixXd block = dec.g_hat.topLeftCorner(prior.n, prior.n);
    auto pred = model::threshold_graph(block, threshold);
    f1s.push_back(graph::f1(pred, test[i].dag));
    shds.push_back(static_cast<double>(graph::shd(pred, test[i].dag)));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto stdev = [&](const std::vector<double>& v, double mu) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  out.mean_f1 = mean(f1s);
  out.mean_shd = mean(shds);
  out.std_f1 = stdev(f1s, out.mean_f1);
  out.std_shd = stdev(shds, out.mean_shd);
  out.per_trial_f1 = std::move(f1s);
  return out;
}

// Fresh test graphs per cell (seed-derived); each cell scored independently.
template <class S>
EvalReport run_retention_sweep(const model::DualSourceModel<S>& m, const SweepSpec& spec, uint64_t seed,
                               double tau, double threshold) {
  spec.validate();
  EvalReport report;
  report.seed = seed;
  int cell_id = 0;
  for (size_t mi = 0; mi < spec.test_mechanisms.size(); ++mi) {
    for (auto mode : spec.prior_modes) {
      for (double retention : spec.retention_grid) {
        EvalCell cell;
        cell.mechanism = scm::mechanism_name(spec.test_mechanisms[mi].kind);
        cell.n = spec.n;
        cell.density = "[" + std::to_string(spec.edge_range.first) + "," + std::to_string(spec.edge_range.second) + "]";
        cell.prior_mode = training::prior_mode_name(mode);
        cell.retention = retention;
        cell.trials = spec.trials;
        try {
          std::vector<training::TrainRecord> test;
          for (int t = 0; t < spec.trials; ++t) {
            uint64_t rs = mix_seed(seed, 0x63656c6cULL, mix_seed(static_cast<uint64_t>(cell_id), t));
            auto dag = graph::sample_er_dag(spec.n, spec.edge_range, mix_seed(rs, 1));
            auto ds = scm::generate(dag, spec.samples_per_graph, spec.test_mechanisms[mi], mix_seed(rs, 2));
            test.push_back(training::make_train_record(ds));
          }
          auto score = score_mode(m, test, mode, retention, mix_seed(seed, 0x6d61736bULL, cell_id), tau, threshold);
          cell.mean_f1 = score.mean_f1;
          cell.mean_shd = score.mean_shd;
          cell.std_f1 = score.std_f1;
          cell.std_shd = score.std_shd;
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
        }
        report.cells.push_back(std::move(cell));
        ++cell_id;
      }
    }
  }
  return report;
}

// SVG line plots from a report: one image per (mechanism, metric), one
// series per prior mode, retention on the x-axis. Pure function of the
// report. Returns the written paths.
std::vector<std::string> write_plots(const EvalReport& report, const std::string& out_dir);

// External table ingestion: comma-separated numeric file with a header row;
// variables are columns. The optional prior uses the text matrix format.
scm::ContainerRecord ingest_table(const std::string& csv_path, const std::string& prior_path = "");

}  // namespace causeway::harness
