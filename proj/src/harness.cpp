#include "causeway/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace causeway::harness {

void SweepSpec::validate() const {
  for (double r : retention_grid)
    if (r < 0.0 || r > 1.0) throw InvalidConfigError("sweep: retention values must lie in [0, 1]");
  if (trials < 1) throw InvalidConfigError("sweep: trials must be >= 1");
  if (prior_modes.empty()) throw InvalidConfigError("sweep: no prior modes");
  if (test_mechanisms.empty()) throw InvalidConfigError("sweep: no test mechanisms");
  if (n < 1) throw InvalidConfigError("sweep: n must be >= 1");
}

nlohmann::json to_json(const SweepSpec& s) {
  nlohmann::json j;
  j["retention_grid"] = s.retention_grid;
  std::vector<std::string> modes;
  for (auto m : s.prior_modes) modes.push_back(training::prior_mode_name(m));
  j["prior_modes"] = modes;
  nlohmann::json mechs = nlohmann::json::array();
  for (const auto& m : s.test_mechanisms) {
    nlohmann::json mj;
    mj["kind"] = scm::mechanism_name(m.kind);
    mj["noise_gamma"] = {m.noise_gamma.first, m.noise_gamma.second};
    mj["latent"] = scm::latent_name(m.latent_dist);
    mechs.push_back(mj);
  }
  j["test_mechanisms"] = mechs;
  j["trials"] = s.trials;
  j["n"] = s.n;
  j["edge_range"] = {s.edge_range.first, s.edge_range.second};
  j["samples_per_graph"] = s.samples_per_graph;
  return j;
}

SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  SweepSpec s;
  if (j.contains("retention_grid")) s.retention_grid = j.at("retention_grid").get<std::vector<double>>();
  if (j.contains("prior_modes")) {
    s.prior_modes.clear();
    for (const auto& m : j.at("prior_modes")) s.prior_modes.push_back(training::prior_mode_from_name(m));
  }
  if (j.contains("test_mechanisms")) {
    s.test_mechanisms.clear();
    for (const auto& mj : j.at("test_mechanisms")) {
      scm::MechanismConfig m;
      m.kind = scm::mechanism_from_name(mj.at("kind"));
      if (mj.contains("noise_gamma"))
        m.noise_gamma = {mj.at("noise_gamma")[0].get<double>(), mj.at("noise_gamma")[1].get<double>()};
      if (mj.contains("latent")) m.latent_dist = scm::latent_from_name(mj.at("latent"));
      if (m.kind == scm::MechanismKind::Mlp) m = scm::MechanismConfig::mlp(m.latent_dist);
      if (m.kind == scm::MechanismKind::MlpOod) m = scm::MechanismConfig::mlp_ood();
      s.test_mechanisms.push_back(m);
    }
  }
  s.trials = j.value("trials", s.trials);
  s.n = j.value("n", s.n);
  if (j.contains("edge_range")) s.edge_range = {j.at("edge_range")[0].get<int>(), j.at("edge_range")[1].get<int>()};
  s.samples_per_graph = j.value("samples_per_graph", s.samples_per_graph);
  s.validate();
  return s;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["schema_version"] = r.schema_version;
  j["seed"] = r.seed;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json cj;
    cj["mechanism"] = c.mechanism;
    cj["n"] = c.n;
    cj["density"] = c.density;
    cj["prior_mode"] = c.prior_mode;
    cj["retention"] = c.retention;
    cj["mean_shd"] = c.mean_shd;
    cj["mean_f1"] = c.mean_f1;
    cj["std_shd"] = c.std_shd;
    cj["std_f1"] = c.std_f1;
    cj["trials"] = c.trials;
    cj["failed"] = c.failed;
    if (c.failed) cj["error"] = c.error;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.schema_version = j.value("schema_version", 1);
  r.seed = j.value("seed", 0ull);
  for (const auto& cj : j.at("cells")) {
    EvalCell c;
    c.mechanism = cj.at("mechanism");
    c.n = cj.at("n");
    c.density = cj.at("density");
    c.prior_mode = cj.at("prior_mode");
    c.retention = cj.at("retention");
    c.mean_shd = cj.at("mean_shd");
    c.mean_f1 = cj.at("mean_f1");
    c.std_shd = cj.at("std_shd");
    c.std_f1 = cj.at("std_f1");
    c.trials = cj.at("trials");
    c.failed = cj.value("failed", false);
    c.error = cj.value("error", "");
    r.cells.push_back(std::move(c));
  }
  return r;
}

graph::Dag null_baseline(const scm::ScmDataset& dataset, double threshold) {
  const Eigen::MatrixXd& x = dataset.x;
  int n = static_cast<int>(x.cols());
  Eigen::Index s = x.rows();

  Eigen::VectorXd mean = x.colwise().mean();
  Eigen::VectorXd var(n);
  for (int c = 0; c < n; ++c) var(c) = (x.col(c).array() - mean(c)).square().sum() / std::max<double>(1.0, s - 1);

  // Variance ordering, stable so exact ties (standardized data) keep index order.
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return var(a) > var(b); });
  std::vector<int> pos(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pos[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;

  graph::Dag d(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j || pos[static_cast<size_t>(i)] >= pos[static_cast<size_t>(j)]) continue;
      double vi = var(i), vj = var(j);
      if (vi <= 0.0 || vj <= 0.0) continue;  // constant column: zero correlation
      double cov = ((x.col(i).array() - mean(i)) * (x.col(j).array() - mean(j))).sum() / std::max<double>(1.0, s - 1);
      double corr = cov / std::sqrt(vi * vj);
      if (std::abs(corr) > threshold) d.set(i, j, 1);
    }
  }
  return d;
}

namespace {

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

void write_line_plot(const std::string& path, const std::string& title, const std::string& ylabel,
                     const std::vector<double>& xs,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const double w = 640, h = 420, ml = 70, mr = 160, mt = 50, mb = 50;
  double x_lo = xs.empty() ? 0.0 : *std::min_element(xs.begin(), xs.end());
  double x_hi = xs.empty() ? 1.0 : *std::max_element(xs.begin(), xs.end());
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  double y_lo = 0.0, y_hi = 0.0;
  bool first = true;
  for (const auto& [name, ys] : series)
    for (double y : ys) {
      if (first) {
        y_lo = y_hi = y;
        first = false;
      } else {
        y_lo = std::min(y_lo, y);
        y_hi = std::max(y_hi, y);
      }
    }
  if (first) {
    y_lo = 0.0;
    y_hi = 1.0;
  }
  if (y_hi == y_lo) y_hi = y_lo + 1.0;
  double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y_lo) / (y_hi - y_lo) * (h - mt - mb); };

  std::ofstream os(path);
  if (!os) throw IoError("cannot write plot " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title)
     << "</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double yv = y_lo + (y_hi - y_lo) * k / 4.0;
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", yv);
    os << buf << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << py(yv) << "\" x2=\"" << w - mr << "\" y2=\"" << py(yv)
       << "\" stroke=\"#dddddd\"/>\n";
  }
  for (double xv : xs) {
    os << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18 << "\" text-anchor=\"middle\" font-size=\"11\">";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", xv);
    os << buf << "</text>\n";
  }
  os << "<text x=\"" << (w - mr + ml) / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">retention</text>\n";
  os << "<text x=\"18\" y=\"" << (h - mb + mt) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
     << (h - mb + mt) / 2 << ")\">" << svg_escape(ylabel) << "</text>\n";

  int si = 0;
  for (const auto& [name, ys] : series) {
    const char* color = kSeriesColors[si % 6];
    std::ostringstream pts;
    for (size_t i = 0; i < xs.size() && i < ys.size(); ++i)
      pts << px(xs[i]) << "," << py(ys[i]) << " ";
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str()
       << "\"/>\n";
    for (size_t i = 0; i < xs.size() && i < ys.size(); ++i)
      os << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    double ly = mt + 18.0 * si;
    os << "<line x1=\"" << w - mr + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - mr + 34 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << w - mr + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << svg_escape(name)
       << "</text>\n";
    ++si;
  }
  os << "</svg>\n";
}

}  // namespace

std::vector<std::string> write_plots(const EvalReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;

  std::vector<std::string> mechanisms;
  for (const auto& c : report.cells)
    if (std::find(mechanisms.begin(), mechanisms.end(), c.mechanism) == mechanisms.end())
      mechanisms.push_back(c.mechanism);

  for (const auto& mech : mechanisms) {
    for (const char* metric : {"f1", "shd"}) {
      // Collect retention grid and per-mode series, preserving cell order.
      std::vector<double> xs;
      std::vector<std::pair<std::string, std::vector<double>>> series;
      for (const auto& c : report.cells) {
        if (c.mechanism != mech || c.failed) continue;
        if (std::find(xs.begin(), xs.end(), c.retention) == xs.end()) xs.push_back(c.retention);
      }
      std::sort(xs.begin(), xs.end());
      for (const auto& c : report.cells) {
        if (c.mechanism != mech || c.failed) continue;
        auto it = std::find_if(series.begin(), series.end(),
                               [&](const auto& s) { return s.first == c.prior_mode; });
        if (it == series.end()) {
          series.push_back({c.prior_mode, std::vector<double>(xs.size(), 0.0)});
          it = series.end() - 1;
        }
        size_t xi = static_cast<size_t>(std::find(xs.begin(), xs.end(), c.retention) - xs.begin());
        it->second[xi] = std::string(metric) == "f1" ? c.mean_f1 : c.mean_shd;
      }
      std::string path = out_dir + "/" + metric + "_vs_retention_" + mech + ".svg";
      write_line_plot(path, std::string(metric == std::string("f1") ? "F1" : "SHD") + " vs retention (" + mech + ")",
                      metric, xs, series);
      written.push_back(path);
    }
  }
  return written;
}

scm::ContainerRecord ingest_table(const std::string& csv_path, const std::string& prior_path) {
  std::ifstream is(csv_path);
  if (!is) throw IoError("cannot open table " + csv_path);
  std::string line;
  if (!std::getline(is, line)) throw InvalidInputError("ingest: empty file");
  // Header row defines the column count.
  int n = 1;
  for (char c : line) n += c == ',';
  std::vector<float> values;
  int rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw InvalidInputError("ingest: non-numeric cell '" + cell + "' at data row " + std::to_string(rows));
      }
      ++c;
    }
    if (c != n) throw InvalidInputError("ingest: row " + std::to_string(rows) + " has " + std::to_string(c) +
                                        " columns, expected " + std::to_string(n));
    ++rows;
  }
  if (rows == 0) throw InvalidInputError("ingest: no data rows");

  scm::ContainerRecord rec;
  rec.n = static_cast<uint32_t>(n);
  rec.s = static_cast<uint32_t>(rows);
  rec.mechanism = scm::MechanismKind::External;
  rec.seed = 0;
  rec.has_truth = false;
  rec.dag = graph::Dag(n);
  rec.x = std::move(values);
  if (!prior_path.empty()) {
    std::ifstream ps(prior_path);
    if (!ps) throw IoError("cannot open prior " + prior_path);
    std::stringstream buf;
    buf << ps.rdbuf();
    auto prior = knowledge::prior_from_text(buf.str());
    if (prior.n != n) throw InvalidInputError("ingest: prior size does not match table columns");
    rec.prior = std::move(prior);
  }
  return rec;
}

}  // namespace causeway::harness
