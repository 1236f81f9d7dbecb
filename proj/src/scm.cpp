#include "causeway/scm.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "causeway/errors.hpp"

namespace causeway::scm {

std::string mechanism_name(MechanismKind k) {
  switch (k) {
    case MechanismKind::Linear: return "linear";
    case MechanismKind::Mlp: return "mlp";
    case MechanismKind::MlpOod: return "mlp_ood";
    case MechanismKind::External: return "external";
  }
  throw InvalidInputError("unknown mechanism kind");
}

MechanismKind mechanism_from_name(const std::string& name) {
  if (name == "linear") return MechanismKind::Linear;
  if (name == "mlp") return MechanismKind::Mlp;
  if (name == "mlp_ood") return MechanismKind::MlpOod;
  if (name == "external") return MechanismKind::External;
  throw InvalidConfigError("unknown mechanism name: " + name);
}

std::string latent_name(LatentDist d) {
  switch (d) {
    case LatentDist::Uniform: return "uniform";
    case LatentDist::Gamma11: return "gamma11";
    case LatentDist::GaussGammaScale: return "gauss_gamma_scale";
    case LatentDist::Gamma2525: return "gamma2525";
  }
  throw InvalidInputError("unknown latent dist");
}

LatentDist latent_from_name(const std::string& name) {
  if (name == "uniform") return LatentDist::Uniform;
  if (name == "gamma11") return LatentDist::Gamma11;
  if (name == "gauss_gamma_scale") return LatentDist::GaussGammaScale;
  if (name == "gamma2525") return LatentDist::Gamma2525;
  throw InvalidConfigError("unknown latent name: " + name);
}

MechanismConfig MechanismConfig::linear(std::pair<double, double> noise_gamma) {
  MechanismConfig m;
  m.kind = MechanismKind::Linear;
  m.noise_gamma = noise_gamma;
  return m;
}

MechanismConfig MechanismConfig::mlp(LatentDist latent) {
  MechanismConfig m;
  m.kind = MechanismKind::Mlp;
  m.latent_dist = latent;
  m.depth = 3;
  m.hidden_width = 32;
  return m;
}

MechanismConfig MechanismConfig::mlp_ood() {
  MechanismConfig m;
  m.kind = MechanismKind::MlpOod;
  m.latent_dist = LatentDist::Gamma2525;
  m.depth = 5;
  m.hidden_width = 32;
  return m;
}

ScmDataset gen_linear(const graph::Dag& dag, int s, std::pair<double, double> noise_gamma, uint64_t seed) {
  if (s < 1) throw InvalidConfigError("gen_linear: sample count must be >= 1");
  if (noise_gamma.first <= 0.0 || noise_gamma.second <= 0.0)
    throw InvalidConfigError("gen_linear: gamma parameters must be positive");

  Rng rng(seed);
  int n = dag.n;
  auto order = graph::topological_order(dag);

  // Weights per edge (lexicographic draw order), sigma per node.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (dag.at(i, j)) w(i, j) = rng.uniform(-10.0, 10.0);
  Eigen::VectorXd sigma(n);
  for (int i = 0; i < n; ++i) sigma(i) = rng.gamma(noise_gamma.first, noise_gamma.second);

  ScmDataset ds;
  ds.dag = dag;
  ds.mechanism = MechanismConfig::linear(noise_gamma);
  ds.seed = seed;
  ds.x.resize(s, n);
  for (int row = 0; row < s; ++row) {
    for (int node : order) {
      double v = sigma(node) * rng.normal();
      for (int p = 0; p < n; ++p)
        if (dag.at(p, node)) v += w(p, node) * ds.x(row, p);
      ds.x(row, node) = v;
    }
  }
  return ds;
}

namespace {

struct NodeMlp {
  // layers[l]: weights (out x in) and bias (out)
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

NodeMlp init_mlp(Rng& rng, int in_dim, int hidden, int depth, bool ood) {
  NodeMlp net;
  for (int l = 0; l < depth; ++l) {
    int fan_in = l == 0 ? in_dim : hidden;
    int fan_out = l == depth - 1 ? 1 : hidden;
    Eigen::MatrixXd w(fan_out, fan_in);
    Eigen::VectorXd b(fan_out);
    if (ood) {
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-50.0, 50.0);
      b.setZero();
    } else {
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
      for (int r = 0; r < fan_out; ++r) b(r) = rng.uniform(-bound, bound);
    }
    net.w.push_back(std::move(w));
    net.b.push_back(std::move(b));
  }
  return net;
}

double mlp_forward(const NodeMlp& net, const Eigen::VectorXd& input, bool ood) {
  Eigen::VectorXd h = net.w[0] * input + net.b[0];
  for (size_t l = 1; l < net.w.size(); ++l) {
    if (ood) {
      h = h.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    } else {
      h = h.unaryExpr([](double v) { return v > 0.0 ? v : 0.01 * v; });
    }
    h = net.w[l] * h + net.b[l];
  }
  return h(0);
}

ScmDataset gen_mlp_family(const graph::Dag& dag, int s, const MechanismConfig& mech, uint64_t seed) {
  if (s < 1) throw InvalidConfigError("gen_mlp: sample count must be >= 1");
  bool ood = mech.kind == MechanismKind::MlpOod;

  Rng rng(seed);
  int n = dag.n;
  auto order = graph::topological_order(dag);

  std::vector<std::vector<int>> parents(n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      if (dag.at(i, j)) parents[j].push_back(i);

  std::vector<NodeMlp> nets;
  nets.reserve(n);
  for (int i = 0; i < n; ++i)
    nets.push_back(init_mlp(rng, static_cast<int>(parents[i].size()) + 1, mech.hidden_width, mech.depth, ood));

  // Per-node latent scale for the N(0, d^2) recipe, drawn once per graph.
  Eigen::VectorXd latent_scale = Eigen::VectorXd::Ones(n);
  if (mech.latent_dist == LatentDist::GaussGammaScale)
    for (int i = 0; i < n; ++i) latent_scale(i) = rng.gamma(1.0, 1.0);

  auto draw_latent = [&](int node) {
    switch (mech.latent_dist) {
      case LatentDist::Uniform: return rng.uniform(-1.0, 1.0);
      case LatentDist::Gamma11: return rng.gamma(1.0, 1.0);
      case LatentDist::GaussGammaScale: return latent_scale(node) * rng.normal();
      case LatentDist::Gamma2525: return rng.gamma(2.5, 2.5);
    }
    throw InvalidConfigError("gen_mlp: unknown latent distribution");
  };

  ScmDataset ds;
  ds.dag = dag;
  ds.mechanism = mech;
  ds.seed = seed;
  ds.x.resize(s, n);
  Eigen::VectorXd input;
  for (int row = 0; row < s; ++row) {
    for (int node : order) {
      const auto& pa = parents[node];
      input.resize(static_cast<Eigen::Index>(pa.size()) + 1);
      for (size_t k = 0; k < pa.size(); ++k) input(static_cast<Eigen::Index>(k)) = ds.x(row, pa[k]);
      input(static_cast<Eigen::Index>(pa.size())) = draw_latent(node);
      ds.x(row, node) = mlp_forward(nets[node], input, ood);
    }
  }
  return ds;
}

}  // namespace

ScmDataset gen_mlp(const graph::Dag& dag, int s, LatentDist latent, uint64_t seed) {
  if (latent == LatentDist::Gamma2525)
    throw InvalidConfigError("gen_mlp: gamma(2.5,2.5) latent is the OOD recipe; use gen_ood");
  return gen_mlp_family(dag, s, MechanismConfig::mlp(latent), seed);
}

ScmDataset gen_ood(const graph::Dag& dag, int s, uint64_t seed) {
  return gen_mlp_family(dag, s, MechanismConfig::mlp_ood(), seed);
}

ScmDataset generate(const graph::Dag& dag, int s, const MechanismConfig& mech, uint64_t seed) {
  switch (mech.kind) {
    case MechanismKind::Linear: return gen_linear(dag, s, mech.noise_gamma, seed);
    case MechanismKind::Mlp: return gen_mlp(dag, s, mech.latent_dist, seed);
    case MechanismKind::MlpOod: return gen_ood(dag, s, seed);
    case MechanismKind::External: break;
  }
  throw InvalidConfigError("generate: external datasets cannot be generated");
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) {
  if (!x.allFinite()) throw InvalidInputError("standardize: non-finite entries");
  Eigen::MatrixXd out = x;
  Eigen::Index s = x.rows();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double mean = x.col(c).mean();
    if (s < 2) {
      out.col(c).setZero();
      continue;
    }
    double var = (x.col(c).array() - mean).square().sum() / static_cast<double>(s - 1);
    if (var <= 0.0) {
      out.col(c).setZero();
    } else {
      out.col(c) = (x.col(c).array() - mean) / std::sqrt(var);
    }
  }
  return out;
}

CorpusSpec CorpusSpec::default_spec() {
  CorpusSpec spec;
  for (int n : {20, 30, 40}) {
    std::pair<int, int> er{n, 3 * n};
    spec.cells.push_back({n, er, MechanismConfig::linear({2.5, 2.5}), 20000});
    spec.cells.push_back({n, er, MechanismConfig::linear({1.0, 1.0}), 30000});
    spec.cells.push_back({n, er, MechanismConfig::mlp(LatentDist::Uniform), 16667});
    spec.cells.push_back({n, er, MechanismConfig::mlp(LatentDist::Gamma11), 16667});
    spec.cells.push_back({n, er, MechanismConfig::mlp(LatentDist::GaussGammaScale), 16667});
  }
  return spec;
}

size_t CorpusSpec::total_records() const {
  size_t t = 0;
  for (const auto& c : cells) t += static_cast<size_t>(c.graph_count);
  return t;
}

size_t CorpusSpec::estimated_bytes() const {
  size_t t = 0;
  for (const auto& c : cells) {
    size_t rec = 64 + static_cast<size_t>(c.n) * c.n +
                 sizeof(float) * static_cast<size_t>(samples_per_graph) * c.n;
    t += rec * static_cast<size_t>(c.graph_count);
  }
  return t;
}

uint64_t record_seed(uint64_t master, int cell_index, int record_index) {
  return mix_seed(master, static_cast<uint64_t>(cell_index), static_cast<uint64_t>(record_index));
}

void build_corpus(const CorpusSpec& spec, uint64_t seed,
                  const std::function<void(const ScmDataset&, int, int)>& sink) {
  for (const auto& c : spec.cells) {
    if (c.n < 1) throw InvalidConfigError("build_corpus: cell with n < 1");
    if (c.edge_range.second > c.n * (c.n - 1) / 2)
      throw InvalidConfigError("build_corpus: cell edge range exceeds n(n-1)/2");
    if (c.graph_count < 0) throw InvalidConfigError("build_corpus: negative graph count");
  }
  if (spec.estimated_bytes() > spec.byte_budget) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "corpus estimate %zu bytes exceeds budget %zu", spec.estimated_bytes(),
                  static_cast<size_t>(spec.byte_budget));
    throw ResourceBudgetError(buf);
  }
  for (size_t ci = 0; ci < spec.cells.size(); ++ci) {
    const auto& c = spec.cells[ci];
    for (int ri = 0; ri < c.graph_count; ++ri) {
      uint64_t rs = record_seed(seed, static_cast<int>(ci), ri);
      auto dag = graph::sample_er_dag(c.n, c.edge_range, mix_seed(rs, 0x646167ULL));
      auto ds = generate(dag, spec.samples_per_graph, c.mechanism, mix_seed(rs, 0x64617461ULL));
      sink(ds, static_cast<int>(ci), ri);
    }
  }
}

// --- container I/O ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'W', 'D', 'S'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

ContainerRecord to_record(const ScmDataset& ds) {
  ContainerRecord rec;
  rec.n = static_cast<uint32_t>(ds.dag.n);
  rec.s = static_cast<uint32_t>(ds.x.rows());
  rec.mechanism = ds.mechanism.kind;
  rec.seed = ds.seed;
  rec.dag = ds.dag;
  rec.has_truth = ds.mechanism.kind != MechanismKind::External;
  rec.x.resize(static_cast<size_t>(rec.s) * rec.n);
  for (uint32_t r = 0; r < rec.s; ++r)
    for (uint32_t c = 0; c < rec.n; ++c) rec.x[static_cast<size_t>(r) * rec.n + c] = static_cast<float>(ds.x(r, c));
  return rec;
}

ScmDataset from_record(const ContainerRecord& rec) {
  ScmDataset ds;
  ds.dag = rec.dag;
  ds.seed = rec.seed;
  ds.mechanism.kind = rec.mechanism;
  ds.x.resize(rec.s, rec.n);
  for (uint32_t r = 0; r < rec.s; ++r)
    for (uint32_t c = 0; c < rec.n; ++c) ds.x(r, c) = rec.x[static_cast<size_t>(r) * rec.n + c];
  return ds;
}

struct ContainerWriter::Impl {
  std::ofstream data;
  std::ofstream index;
  std::string path;
};

ContainerWriter::ContainerWriter(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->data.open(path, std::ios::binary | std::ios::trunc);
  impl_->index.open(path + ".idx", std::ios::binary | std::ios::trunc);
  if (!impl_->data || !impl_->index) throw IoError("cannot open container files at " + path);
  impl_->data.write(kMagic, 4);
  put(impl_->data, kVersion);
}

ContainerWriter::~ContainerWriter() { close(); }

void ContainerWriter::close() {
  if (impl_ && impl_->data.is_open()) {
    impl_->data.close();
    impl_->index.close();
  }
}

void ContainerWriter::append(const ContainerRecord& rec) {
  if (rec.x.size() != static_cast<size_t>(rec.n) * rec.s) throw InvalidInputError("container: payload size mismatch");
  uint64_t offset = static_cast<uint64_t>(impl_->data.tellp());
  put(impl_->index, offset);

  put(impl_->data, rec.n);
  put(impl_->data, rec.s);
  uint8_t mech = static_cast<uint8_t>(rec.mechanism);
  put(impl_->data, mech);
  uint8_t has_truth = rec.has_truth ? 1 : 0;
  put(impl_->data, has_truth);
  uint8_t has_prior = rec.prior.has_value() ? 1 : 0;
  put(impl_->data, has_prior);
  uint8_t pad = 0;
  put(impl_->data, pad);
  put(impl_->data, rec.seed);
  impl_->data.write(reinterpret_cast<const char*>(rec.dag.adj.data()),
                    static_cast<std::streamsize>(rec.dag.adj.size()));
  if (rec.prior)
    impl_->data.write(reinterpret_cast<const char*>(rec.prior->r.data()),
                      static_cast<std::streamsize>(rec.prior->r.size()));
  impl_->data.write(reinterpret_cast<const char*>(rec.x.data()),
                    static_cast<std::streamsize>(rec.x.size() * sizeof(float)));
  if (!impl_->data) throw IoError("container write failed");
  ++count_;
}

struct ContainerReader::Impl {
  std::string path;
  std::vector<uint64_t> offsets;
};

ContainerReader::ContainerReader(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  std::ifstream idx(path + ".idx", std::ios::binary);
  if (!idx) throw IoError("cannot open index for " + path);
  uint64_t off;
  while (idx.read(reinterpret_cast<char*>(&off), sizeof(off))) impl_->offsets.push_back(off);

  std::ifstream data(path, std::ios::binary);
  if (!data) throw IoError("cannot open container " + path);
  char magic[4];
  data.read(magic, 4);
  uint32_t version = 0;
  get(data, version);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad container magic in " + path);
  if (version != kVersion) throw IoError("unsupported container version");
}

ContainerReader::~ContainerReader() = default;

size_t ContainerReader::count() const { return impl_->offsets.size(); }

ContainerRecord ContainerReader::read(size_t record_id) const {
  if (record_id >= impl_->offsets.size()) throw InvalidInputError("container: record id out of range");
  std::ifstream data(impl_->path, std::ios::binary);
  if (!data) throw IoError("cannot open container " + impl_->path);
  data.seekg(static_cast<std::streamoff>(impl_->offsets[record_id]));

  ContainerRecord rec;
  get(data, rec.n);
  get(data, rec.s);
  uint8_t mech, has_truth, has_prior, pad;
  get(data, mech);
  get(data, has_truth);
  get(data, has_prior);
  get(data, pad);
  get(data, rec.seed);
  rec.mechanism = static_cast<MechanismKind>(mech);
  rec.has_truth = has_truth != 0;
  rec.dag = graph::Dag(static_cast<int>(rec.n));
  data.read(reinterpret_cast<char*>(rec.dag.adj.data()), static_cast<std::streamsize>(rec.dag.adj.size()));
  if (has_prior) {
    knowledge::KnowledgePrior p(static_cast<int>(rec.n));
    data.read(reinterpret_cast<char*>(p.r.data()), static_cast<std::streamsize>(p.r.size()));
    rec.prior = std::move(p);
  }
  rec.x.resize(static_cast<size_t>(rec.n) * rec.s);
  data.read(reinterpret_cast<char*>(rec.x.data()), static_cast<std::streamsize>(rec.x.size() * sizeof(float)));
  if (!data) throw IoError("container record truncated");
  return rec;
}

uint64_t container_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    std::streamsize got = f.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace causeway::scm
