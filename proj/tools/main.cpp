// Command-line front end: corpus generation, training, evaluation,
// retention sweeps, and external-table ingestion.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "causeway/harness.hpp"
#include "causeway/train.hpp"

using namespace causeway;

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  return nlohmann::json::parse(is);
}

scm::MechanismConfig mechanism_from_json(const nlohmann::json& mj) {
  auto kind = scm::mechanism_from_name(mj.value("kind", "linear"));
  switch (kind) {
    case scm::MechanismKind::Linear: {
      std::pair<double, double> gamma{2.5, 2.5};
      if (mj.contains("noise_gamma"))
        gamma = {mj.at("noise_gamma")[0].get<double>(), mj.at("noise_gamma")[1].get<double>()};
      return scm::MechanismConfig::linear(gamma);
    }
    case scm::MechanismKind::Mlp:
      return scm::MechanismConfig::mlp(scm::latent_from_name(mj.value("latent", "uniform")));
    case scm::MechanismKind::MlpOod:
      return scm::MechanismConfig::mlp_ood();
    case scm::MechanismKind::External:
      break;
  }
  throw InvalidConfigError("gen-data cannot synthesize external mechanisms");
}

scm::CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  scm::CorpusSpec spec;
  spec.samples_per_graph = j.value("samples_per_graph", 200);
  if (j.contains("byte_budget")) spec.byte_budget = j.at("byte_budget").get<uint64_t>();
  if (j.value("default_table", false)) return scm::CorpusSpec::default_spec();
  for (const auto& cj : j.at("cells")) {
    scm::CorpusCell cell;
    cell.n = cj.at("n").get<int>();
    cell.edge_range = {cj.at("edges")[0].get<int>(), cj.at("edges")[1].get<int>()};
    cell.mechanism = mechanism_from_json(cj.value("mechanism", nlohmann::json::object()));
    cell.graph_count = cj.at("graphs").get<int>();
    spec.cells.push_back(cell);
  }
  return spec;
}

std::vector<training::TrainRecord> load_records(const std::string& corpus_path, size_t from, size_t to) {
  scm::ContainerReader reader(corpus_path);
  to = std::min(to, reader.count());
  std::vector<training::TrainRecord> out;
  for (size_t i = from; i < to; ++i) out.push_back(training::make_train_record(scm::from_record(reader.read(i))));
  return out;
}

int cmd_gen_data(const std::string& config, const std::string& out, uint64_t seed) {
  auto spec = corpus_spec_from_json(load_json(config));
  scm::ContainerWriter writer(out);
  scm::build_corpus(spec, seed, [&](const scm::ScmDataset& ds, int, int) { writer.append(scm::to_record(ds)); });
  writer.close();
  std::cout << "wrote " << writer.count() << " records to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, uint64_t seed_override, bool has_seed) {
  auto j = load_json(config_path);
  auto cfg = training::train_config_from_json(j);
  if (has_seed) cfg.seed = seed_override;
  std::string corpus_path = j.at("corpus").get<std::string>();
  int val_count = j.value("val_count", 16);

  scm::ContainerReader reader(corpus_path);
  size_t total = reader.count();
  if (total < static_cast<size_t>(val_count) + 1) throw InvalidConfigError("corpus too small for the validation split");
  auto val = load_records(corpus_path, total - static_cast<size_t>(val_count), total);
  auto records = load_records(corpus_path, 0, total - static_cast<size_t>(val_count));

  model::DualSourceModel<float> m(cfg.model);
  training::Trainer<float> trainer(m, cfg);
  cfg.log_progress = true;
  std::string resume = j.value("resume", "");
  auto history = trainer.train(records, val, resume);
  if (!history.empty()) {
    const auto& last = history.back();
    std::cout << "final epoch " << last.epoch << " mean_loss " << last.mean_loss << "\n";
    for (const auto& [k, v] : last.validation) std::cout << "  " << k << " " << v << "\n";
  }
  return 0;
}

// Reads just the architecture header so the model can be shaped before the
// full parameter load.
model::ModelConfig read_checkpoint_config(const std::string& checkpoint) {
  std::ifstream is(checkpoint, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + checkpoint);
  char magic[4];
  is.read(magic, 4);
  uint32_t version;
  is.read(reinterpret_cast<char*>(&version), 4);
  uint64_t len;
  is.read(reinterpret_cast<char*>(&len), 8);
  std::string cfg_json(len, '\0');
  is.read(cfg_json.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint header truncated: " + checkpoint);
  return training::model_config_from_json(nlohmann::json::parse(cfg_json));
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& prior_path,
             const std::string& prior_mode, double retention, int trials, uint64_t seed,
             const nlohmann::json& gen_opts) {
  model::ModelConfig mcfg = read_checkpoint_config(checkpoint);
  model::DualSourceModel<float> m(mcfg);
  training::load_checkpoint(checkpoint, m, static_cast<training::Adam<float>*>(nullptr));
  training::TrainConfig tcfg;
  tcfg.model = mcfg;
  training::Trainer<float> trainer(m, tcfg);

  if (!data.empty()) {
    // score (or just predict) one external dataset
    scm::ContainerReader reader(data);
    auto rec = reader.read(0);
    auto ds = scm::from_record(rec);
    knowledge::KnowledgePrior prior(static_cast<int>(rec.n));
    if (!prior_path.empty()) {
      std::ifstream ps(prior_path);
      std::stringstream buf;
      buf << ps.rdbuf();
      prior = knowledge::prior_from_text(buf.str());
    } else if (rec.prior) {
      prior = *rec.prior;
    } else {
      for (int i = 0; i < prior.n; ++i)
        for (int j = 0; j < prior.n; ++j)
          if (i != j) prior.set(i, j, -1);
    }
    auto pred = trainer.predict(scm::standardize(ds.x), prior);
    std::cout << graph::to_text(pred) << "\n";
    if (rec.has_truth) {
      std::cout << "shd " << graph::shd(pred, ds.dag) << " f1 " << graph::f1(pred, ds.dag) << "\n";
    }
    return 0;
  }

  // synthetic evaluation at one prior setting
  auto mode = training::prior_mode_from_name(prior_mode);
  int n = gen_opts.value("n", std::min(8, mcfg.n_max));
  std::pair<int, int> er{n, std::min(3 * n, n * (n - 1) / 2)};
  std::vector<training::TrainRecord> test;
  for (int t = 0; t < trials; ++t) {
    uint64_t rs = mix_seed(seed, 0x657661ULL, t);
    auto dag = graph::sample_er_dag(n, er, mix_seed(rs, 1));
    auto ds = scm::gen_linear(dag, gen_opts.value("samples", 200), {2.5, 2.5}, mix_seed(rs, 2));
    test.push_back(training::make_train_record(ds));
  }
  auto score = harness::score_mode(m, test, mode, retention, mix_seed(seed, 0x6d6bULL), tcfg.tau_end, 0.5);
  std::cout << "prior_mode " << prior_mode << " retention " << retention << " trials " << trials << "\n";
  std::cout << "mean_f1 " << score.mean_f1 << " std_f1 " << score.std_f1 << "\n";
  std::cout << "mean_shd " << score.mean_shd << " std_shd " << score.std_shd << "\n";
  return 0;
}

int cmd_sweep(const std::string& checkpoint, const std::string& config, const std::string& out_dir,
              uint64_t seed) {
  model::ModelConfig mcfg = read_checkpoint_config(checkpoint);
  model::DualSourceModel<float> m(mcfg);
  training::load_checkpoint(checkpoint, m, static_cast<training::Adam<float>*>(nullptr));

  harness::SweepSpec spec;
  if (!config.empty()) spec = harness::sweep_spec_from_json(load_json(config));
  auto report = harness::run_retention_sweep(m, spec, seed, 0.3, 0.5);

  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/report.json");
  os << harness::to_json(report).dump(2) << "\n";
  os.close();
  auto plots = harness::write_plots(report, out_dir);
  std::cout << "report " << out_dir << "/report.json plus " << plots.size() << " plots\n";
  if (report.any_failed()) {
    for (const auto& c : report.cells)
      if (c.failed) std::cerr << "failed cell: " << c.mechanism << " " << c.prior_mode << " " << c.retention
                              << ": " << c.error << "\n";
    return 2;
  }
  return 0;
}

int cmd_ingest(const std::string& data, const std::string& prior, const std::string& out) {
  auto rec = harness::ingest_table(data, prior);
  scm::ContainerWriter writer(out);
  writer.append(rec);
  writer.close();
  std::cout << "ingested " << rec.s << " rows x " << rec.n << " variables into " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-informed amortized causal discovery"};
  app.require_subcommand(1);

  std::string config, out = "out", checkpoint, data, prior, prior_mode = "full_prior";
  uint64_t seed = 1;
  bool seed_set = false;
  double retention = 1.0;
  int trials = 20, n = 8, samples = 200;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--config", config, "corpus spec JSON")->required();
  gen->add_option("--out", out, "output container path")->required();
  gen->add_option("--seed", seed, "master seed");

  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config, "training config JSON")->required();
  train->add_option("--seed", seed, "seed override")->each([&](const std::string&) { seed_set = true; });

  auto* eval = app.add_subcommand("eval", "score a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval->add_option("--data", data, "container with one external record");
  eval->add_option("--prior", prior, "prior text file");
  eval->add_option("--prior-mode", prior_mode, "full_prior|neg_only|none|ground_truth");
  eval->add_option("--retention", retention, "prior retention in [0,1]");
  eval->add_option("--trials", trials, "synthetic trials");
  eval->add_option("--n", n, "synthetic test graph size");
  eval->add_option("--samples", samples, "synthetic sample count");
  eval->add_option("--seed", seed, "evaluation seed");

  auto* sweep = app.add_subcommand("sweep", "retention sweep with report and plots");
  sweep->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  sweep->add_option("--config", config, "sweep spec JSON");
  sweep->add_option("--out", out, "output directory");
  sweep->add_option("--seed", seed, "sweep seed");

  auto* ingest = app.add_subcommand("ingest", "convert an external table to the container format");
  ingest->add_option("--data", data, "CSV table with a header row")->required();
  ingest->add_option("--prior", prior, "prior text file");
  ingest->add_option("--out", out, "output container path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config, out, seed);
    if (train->parsed()) return cmd_train(config, seed, seed_set);
    if (eval->parsed()) {
      nlohmann::json gen_opts{{"n", n}, {"samples", samples}};
      return cmd_eval(checkpoint, data, prior, prior_mode, retention, trials, seed, gen_opts);
    }
    if (sweep->parsed()) return cmd_sweep(checkpoint, config, out, seed);
    if (ingest->parsed()) return cmd_ingest(data, prior, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
