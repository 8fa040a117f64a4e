#include "qbdecon/cli.hpp"

#include "qbdecon/error.hpp"
#include "qbdecon/io.hpp"
#include "qbdecon/pipeline.hpp"
#include "internal/text.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace qbd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::string out;
  bool header = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", c.seed, "Override the sampler seed");
  cmd->add_option("--chains", c.chains, "Override the number of chains");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_flag("--header", c.header, "Data CSV files start with a header line");
}

RunConfig configure(const Common& c) {
  RunConfig config = load_config(c.config);
  if (c.seed) config.sampler.hmc.seed = *c.seed;
  if (c.chains) {
    if (*c.chains < 1) throw ConfigError("--chains", "must be at least 1");
    config.sampler.hmc.chains = *c.chains;
  }
  if (c.header) config.model.header = true;
  if (!c.out.empty()) {
    config.output.dir = c.out;
  } else if (const char* env = std::getenv("QBD_OUT_DIR"); env && *env) {
    config.output.dir = env;
  }
  return config;
}

class Writer {
 public:
  Writer(fs::path dir, std::ostream& out, std::ostream& err) : dir_(std::move(dir)), out_(out), err_(err) {}

  void put(const std::string& name, const std::string& content) {
    const WrittenArtifact w = write_artifact(dir_, name, content);
    if (w.renamed) err_ << "warning: " << name << " exists with different content; wrote " << w.path.filename().string() << '\n';
    out_ << w.path.string() << '\n';
  }

 private:
  fs::path dir_;
  std::ostream& out_;
  std::ostream& err_;
};

int cmd_fit(const Common& c, std::ostream& out, std::ostream& err) {
  const RunConfig config = configure(c);
  const FitResult r = run_fit(config);
  const ArtifactSet set = write_fit_artifacts(r, config.output.dir);
  for (const auto& p : set.paths) out << p.string() << '\n';
  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  for (const auto& w : set.warnings) err << "warning: " << w << '\n';
  const auto rhat = r.diagnostics.max_rhat();
  err << "max R-hat " << (rhat ? detail::num(*rhat) : "undefined") << ", " << r.diagnostics.divergences
      << " divergences\n";
  return r.gate_failed ? kExitGate : kExitOk;
}

int cmd_simulate(const Common& c, std::ostream& out, std::ostream& err) {
  RunConfig config = configure(c);
  if (!config.model.scenario) throw ConfigError("model.scenario", "simulate needs a scenario");
  if (c.seed) config.model.scenario->seeds = {*c.seed};
  const FitInput input = load_input(config);
  const std::string stem = "simulate-" + config_hash(config);
  static const std::map<ModelKind, std::vector<std::string>> names = {
      {ModelKind::Deconv, {"y", "eps"}}, {ModelKind::RepMeas, {"y1", "y2"}}, {ModelKind::Factor, {"y"}}};
  Writer w(config.output.dir, out, err);
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    const Dataset& d = input.data[i];
    std::vector<std::string> cols;
    if (config.model.header) {
      for (Eigen::Index k = 0; k < d.dim(); ++k) cols.push_back("v" + std::to_string(k + 1));
    }
    std::ostringstream s;
    write_csv(s, d.observations(), cols);
    w.put(stem + "." + names.at(input.kind)[i] + ".csv", s.str());
  }
  for (std::size_t b = 0; b < input.truth.size(); ++b) {
    const Grid g = fit_grid(config, input, static_cast<Eigen::Index>(b));
    Matrix table(g.size(), g.dim() + 1);
    table.leftCols(g.dim()) = g.points;
    for (Eigen::Index i = 0; i < g.size(); ++i) table(i, g.dim()) = input.truth[b](g.points.row(i).transpose());
    std::vector<std::string> cols;
    for (Eigen::Index k = 0; k < g.dim(); ++k) cols.push_back(g.dim() == 1 ? "x" : "x" + std::to_string(k + 1));
    cols.push_back("truth");
    std::ostringstream s;
    write_csv(s, table, cols);
    w.put(stem + (input.truth.size() > 1 ? ".truth" + std::to_string(b + 1) : ".truth") + ".csv", s.str());
  }
  for (const auto& m : input.warnings) err << "warning: " << m << '\n';
  return kExitOk;
}

int cmd_sweep(const Common& c, std::ostream& out, std::ostream& err) {
  const RunConfig config = configure(c);
  const SweepReport report = run_experiment(config);
  Writer w(config.output.dir, out, err);
  w.put("sweep-" + report.hash + ".csv", sweep_csv(report));
  w.put("sweep-" + report.hash + ".json", sweep_json(report).dump(2) + "\n");
  int failed = 0;
  for (const SweepCell& cell : report.cells) {
    if (!cell.failure.empty()) {
      ++failed;
      err << "warning: cell n=" << cell.n << " seed=" << cell.seed << " failed: " << cell.failure << '\n';
    }
  }
  return failed ? kExitGate : kExitOk;
}

int cmd_gradcheck(const Common& c, bool corrupt, int states, std::ostream& out) {
  const RunConfig config = configure(c);
  const GradcheckReport r = gradcheck(config, states, corrupt);
  out << "state,coordinate,analytic,numeric,rel_error\n";
  for (const GradcheckRow& row : r.worst) {
    out << row.state << ',' << row.coordinate + 1 << ',' << detail::num(row.analytic) << ','
        << detail::num(row.numeric) << ',' << detail::num(row.rel_error) << '\n';
  }
  out << (r.passed() ? "PASS" : "FAIL") << " max relative error " << detail::num(r.max_rel_error) << " (threshold "
      << detail::num(r.threshold) << ")\n";
  return r.passed() ? kExitOk : kExitGate;
}

int cmd_dump_nodes(const Common& c, std::ostream& out, std::ostream& err) {
  const RunConfig config = configure(c);
  const FitInput input = load_input(config);
  const LikelihoodBlock& l = config.likelihood;
  const Eigen::Index dim = input.data[0].dim();
  NodeSet set;
  if (input.kind == ModelKind::RepMeas) {
    RepMeasOptions o;
    o.radius = l.radius;
    o.per_dim = l.per_dim;
    o.sphere_count = l.sphere_count;
    o.line_count = l.line_count;
    o.boundary = l.boundary;
    bool boundary = false;
    set = RepMeasModel::metric_nodes(dim, o, boundary);
  } else {
    const int m = l.per_dim > 0 ? l.per_dim : default_quadrature(static_cast<int>(dim)).per_dim;
    set = build_box(l.radius, m, static_cast<int>(dim)).set;
  }
  Matrix table(set.size(), set.dim() + 1);
  table.leftCols(set.dim()) = set.nodes;
  table.col(set.dim()) = set.weights;
  std::vector<std::string> cols;
  for (Eigen::Index k = 0; k < set.dim(); ++k) cols.push_back("t" + std::to_string(k + 1));
  cols.push_back("weight");
  std::ostringstream s;
  write_csv(s, table, cols);
  Writer(config.output.dir, out, err).put("nodes-" + config_hash(config) + ".csv", s.str());
  return kExitOk;
}

// Reads chains CSVs written by fit and reports R-hat / ESS on the
// unconstrained columns.
int cmd_diagnose(const std::vector<std::string>& files, double threshold, std::ostream& out) {
  std::vector<PosteriorChain> chains;
  for (const std::string& f : files) {
    std::ifstream in(f);
    if (!in) throw IoError("cannot open " + f);
    std::string header;
    std::getline(in, header);
    std::vector<std::string> cols;
    std::stringstream hs(header);
    for (std::string col; std::getline(hs, col, ',');) cols.push_back(col);
    if (cols.size() < 3 || cols[0] != "chain" || cols[2] != "lp") throw IoError(f + ": not a chains CSV");
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 3; i < cols.size() && cols[i].size() > 1 && cols[i][0] == 'u'; ++i) keep.push_back(Eigen::Index(i));
    const Matrix m = parse_csv(in, false, f);
    if (m.cols() != static_cast<Eigen::Index>(cols.size())) throw IoError(f + ": header and rows disagree");
    std::map<int, std::vector<Eigen::Index>> rows;
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows[static_cast<int>(m(r, 0))].push_back(r);
    for (const auto& [id, idx] : rows) {
      PosteriorChain c;
      c.draws.resize(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(keep.size()));
      c.log_density.resize(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t k = 0; k < keep.size(); ++k) c.draws(Eigen::Index(r), Eigen::Index(k)) = m(idx[r], keep[k]);
        c.log_density(Eigen::Index(r)) = m(idx[r], 2);
      }
      chains.push_back(std::move(c));
    }
  }
  const Diagnostics d = diagnose(chains);
  json j;
  auto opt = [](const std::optional<double>& v) -> json {
    if (!v) return nullptr;
    if (std::isinf(*v)) return "inf";
    return *v;
  };
  j["chains"] = d.chains;
  j["draws_per_chain"] = d.draws_per_chain;
  j["max_rhat"] = opt(d.max_rhat());
  j["min_ess"] = opt(d.min_ess());
  json rhat = json::array(), ess = json::array();
  for (const auto& v : d.rhat) rhat.push_back(opt(v));
  for (const auto& v : d.ess) ess.push_back(opt(v));
  j["rhat"] = rhat;
  j["ess"] = ess;
  out << j.dump(2) << '\n';
  const auto worst = d.max_rhat();
  return worst && *worst > threshold ? kExitGate : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quasi-Bayes latent density estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("qbd ") + kVersion + " (config schema " + std::to_string(kSchemaVersion) + ")");

  Common fit_opts, sim_opts, sweep_opts, grad_opts, nodes_opts;
  auto* fit = app.add_subcommand("fit", "Sample the quasi-posterior and write chains, diagnostics and densities");
  add_common(fit, fit_opts);
  auto* sim = app.add_subcommand("simulate", "Draw the configured scenario and write its data");
  add_common(sim, sim_opts);
  auto* sweep = app.add_subcommand("sweep", "Fit every (n, seed) cell of the scenario");
  add_common(sweep, sweep_opts);
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_common(grad, grad_opts);
  bool corrupt = false;
  int states = 20;
  grad->add_option("--states", states, "Number of prior states")->check(CLI::PositiveNumber);
  grad->add_flag("--corrupt-gradient", corrupt)->group("");
  auto* nodes = app.add_subcommand("dump-nodes", "Write quadrature nodes and weights");
  add_common(nodes, nodes_opts);
  auto* diag = app.add_subcommand("diagnose", "R-hat and ESS of chains CSV files");
  std::vector<std::string> files;
  double threshold = 1.05;
  diag->add_option("files", files, "Chains CSV files")->required()->check(CLI::ExistingFile);
  diag->add_option("--rhat-threshold", threshold, "Exit 1 above this R-hat");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version are ParseErrors with exit code 0.
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*fit) return cmd_fit(fit_opts, out, err);
    if (*sim) return cmd_simulate(sim_opts, out, err);
    if (*sweep) return cmd_sweep(sweep_opts, out, err);
    if (*grad) return cmd_gradcheck(grad_opts, corrupt, states, out);
    if (*nodes) return cmd_dump_nodes(nodes_opts, out, err);
    if (*diag) return cmd_diagnose(files, threshold, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const SamplerAbort& e) {
    err << "sampler aborted: " << e.what() << '\n';
    return kExitAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace qbd
