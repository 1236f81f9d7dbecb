#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "causeway/train.hpp"

using namespace causeway;
using namespace causeway::training;

namespace {

std::vector<TrainRecord> tiny_corpus(int count, int n, int samples, uint64_t seed) {
  std::vector<TrainRecord> out;
  for (int i = 0; i < count; ++i) {
    uint64_t rs = mix_seed(seed, static_cast<uint64_t>(i));
    auto dag = graph::sample_er_dag(n, {n, std::min(3 * n, n * (n - 1) / 2)}, mix_seed(rs, 1));
    auto ds = scm::gen_linear(dag, samples, {2.5, 2.5}, mix_seed(rs, 2));
    out.push_back(make_train_record(ds));
  }
  return out;
}

TrainConfig tiny_train_config(const std::filesystem::path& dir) {
  TrainConfig cfg;
  cfg.model.d = 8;
  cfg.model.layers = 2;
  cfg.model.heads = 2;
  cfg.model.n_max = 5;
  cfg.model.mc_samples = 2;
  cfg.model.sinkhorn_iters = 10;
  cfg.model.eps = 0.05;
  cfg.loss.k = 2;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.sample_subset = 16;
  cfg.optim.warmup_steps = 4;
  cfg.seed = 7;
  cfg.checkpoint_dir = (dir / "ckpt").string();
  cfg.metrics_path = (dir / "metrics.jsonl").string();
  return cfg;
}

}  // namespace

TEST_CASE("training runs, logs metrics, and is deterministic in the seed") {
  auto dir = std::filesystem::temp_directory_path() / "causeway_train_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  auto corpus = tiny_corpus(16, 4, 24, 5);
  auto val = tiny_corpus(4, 4, 24, 999);
  auto cfg = tiny_train_config(dir);

  model::DualSourceModel<float> m1(cfg.model);
  Trainer<float> t1(m1, cfg);
  auto h1 = t1.train(corpus, val);
  REQUIRE(h1.size() == 3);
  for (const auto& em : h1) {
    CHECK(std::isfinite(em.mean_loss));
    CHECK(em.validation.count("val_f1_full_100") == 1);
    CHECK(em.validation.count("val_shd_neg_0") == 1);
  }

  // metrics file has one record per epoch
  std::ifstream metrics(cfg.metrics_path);
  int lines = 0;
  std::string line;
  while (std::getline(metrics, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 3);

  // same seed, fresh model: identical history
  auto cfg2 = cfg;
  cfg2.checkpoint_dir = (dir / "ckpt2").string();
  cfg2.metrics_path = (dir / "metrics2.jsonl").string();
  model::DualSourceModel<float> m2(cfg2.model);
  Trainer<float> t2(m2, cfg2);
  auto h2 = t2.train(corpus, val);
  for (size_t e = 0; e < h1.size(); ++e) {
    CHECK(h1[e].mean_loss == h2[e].mean_loss);
    CHECK(h1[e].validation == h2[e].validation);
  }
  // parameters agree bit for bit
  auto p1 = m1.store.all(), p2 = m2.store.all();
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value.data == p2[i]->value.data);

  std::filesystem::remove_all(dir);
}

TEST_CASE("resume from checkpoint reproduces the rest of the run bit-for-bit") {
  auto dir = std::filesystem::temp_directory_path() / "causeway_resume_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  auto corpus = tiny_corpus(12, 4, 20, 21);
  auto val = tiny_corpus(3, 4, 20, 22);

  // full 3-epoch run
  auto cfg_full = tiny_train_config(dir);
  cfg_full.checkpoint_dir = (dir / "full").string();
  cfg_full.metrics_path = (dir / "full.jsonl").string();
  model::DualSourceModel<float> m_full(cfg_full.model);
  Trainer<float> t_full(m_full, cfg_full);
  auto h_full = t_full.train(corpus, val);

  // stop after epoch 0 (same schedule horizon), then resume
  auto cfg_a = cfg_full;
  cfg_a.checkpoint_dir = (dir / "partial").string();
  cfg_a.metrics_path = (dir / "partial.jsonl").string();
  model::DualSourceModel<float> m_a(cfg_a.model);
  Trainer<float> t_a(m_a, cfg_a);
  t_a.train(corpus, val, "", 1);

  auto cfg_b = cfg_full;
  cfg_b.checkpoint_dir = (dir / "resumed").string();
  cfg_b.metrics_path = (dir / "resumed.jsonl").string();
  model::DualSourceModel<float> m_b(cfg_b.model);
  Trainer<float> t_b(m_b, cfg_b);
  auto h_b = t_b.train(corpus, val, (dir / "partial" / "latest.ckpt").string());

  // epochs 1..2 of the resumed run match the full run exactly
  REQUIRE(h_b.size() == 2);
  CHECK(h_b[0].mean_loss == h_full[1].mean_loss);
  CHECK(h_b[1].mean_loss == h_full[2].mean_loss);
  CHECK(h_b[1].validation == h_full[2].validation);

  auto pf = m_full.store.all(), pb = m_b.store.all();
  for (size_t i = 0; i < pf.size(); ++i) CHECK(pf[i]->value.data == pb[i]->value.data);

  // checkpoint files for the final epoch are byte-identical
  auto bytes = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(bytes((dir / "full" / "epoch_002.ckpt").string()) == bytes((dir / "resumed" / "epoch_002.ckpt").string()));

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint loading rejects a mismatched n_max") {
  auto dir = std::filesystem::temp_directory_path() / "causeway_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  model::ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.n_max = 5;
  model::DualSourceModel<float> m(cfg);
  m.init(1);
  CheckpointState<float> st{0, 0, 1};
  save_checkpoint((dir / "m.ckpt").string(), m, static_cast<Adam<float>*>(nullptr), st);

  model::ModelConfig other = cfg;
  other.n_max = 6;
  model::DualSourceModel<float> m2(other);
  CHECK_THROWS_AS(load_checkpoint((dir / "m.ckpt").string(), m2, static_cast<Adam<float>*>(nullptr)),
                  InvalidConfigError);

  // round trip restores parameters exactly
  model::DualSourceModel<float> m3(cfg);
  load_checkpoint((dir / "m.ckpt").string(), m3, static_cast<Adam<float>*>(nullptr));
  auto pa = m.store.all(), pb = m3.store.all();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.data == pb[i]->value.data);

  std::filesystem::remove_all(dir);
}

TEST_CASE("train config json round trip") {
  TrainConfig cfg;
  cfg.model.d = 32;
  cfg.model.n_max = 8;
  cfg.loss.alpha = 0.25;
  cfg.epochs = 9;
  cfg.seed = 1234;
  auto j = to_json(cfg);
  auto back = train_config_from_json(j);
  CHECK(back.model.d == 32);
  CHECK(back.loss.alpha == 0.25);
  CHECK(back.epochs == 9);
  CHECK(back.seed == 1234);
}

TEST_CASE("build_eval_prior modes") {
  auto dag = graph::sample_er_dag(5, {4, 8}, 3);
  // none mode: everything unknown
  auto none = build_eval_prior(dag, PriorMode::None, 0.7, 9);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) CHECK(none.at(i, j) == -1);

  // ground truth mode: unmasked adjacency
  auto gt = build_eval_prior(dag, PriorMode::GroundTruth, 0.0, 9);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) CHECK(gt.at(i, j) == (dag.at(i, j) ? 1 : 0));

  // neg-only at full retention: no positives anywhere
  auto neg = build_eval_prior(dag, PriorMode::NegOnly, 1.0, 9);
  for (auto v : neg.r) CHECK(v != 1);

  // full prior at retention 0 equals none mode
  auto full0 = build_eval_prior(dag, PriorMode::FullPrior, 0.0, 9);
  CHECK(full0.r == none.r);
}
