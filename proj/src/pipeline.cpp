#include "qbdecon/pipeline.hpp"

#include "qbdecon/error.hpp"
#include "qbdecon/io.hpp"
#include "qbdecon/parallel.hpp"
#include "internal/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace qbd {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json optional_number(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return *v;
}

json error_json(const std::optional<DensityError>& e) {
  if (!e) return nullptr;
  return {{"l2", e->l2}, {"linf", e->linf}};
}

Matrix sample_cov(const Matrix& y) {
  const Matrix c = y.rowwise() - y.colwise().mean();
  return c.transpose() * c / double(y.rows() - 1);
}

int per_dim_or_default(int configured, Eigen::Index dim) {
  return configured > 0 ? configured : default_quadrature(static_cast<int>(dim)).per_dim;
}

std::vector<std::string> chain_columns(const Posterior& posterior) {
  std::vector<std::string> cols = {"chain", "iteration", "lp"};
  for (Eigen::Index i = 0; i < posterior.dim(); ++i) cols.push_back("u" + std::to_string(i + 1));
  const Eigen::Index blocks = posterior.objective().block_count();
  const Eigen::Index k = posterior.prior().truncation;
  const Eigen::Index d = posterior.prior().dim();
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const std::string p = blocks > 1 ? "b" + std::to_string(b + 1) + "." : "";
    for (Eigen::Index j = 0; j < k; ++j) cols.push_back(p + "w" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index c = 0; c < d; ++c) {
        cols.push_back(p + "mu" + std::to_string(j + 1) + (d > 1 ? "_" + std::to_string(c + 1) : ""));
      }
    }
    if (d == 1) {
      cols.push_back(p + "sigma2");
    } else {
      for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = r; c < d; ++c) cols.push_back(p + "cov" + std::to_string(r + 1) + "_" + std::to_string(c + 1));
      }
    }
  }
  return cols;
}

std::string chains_csv(const FitResult& result, const Posterior& posterior) {
  std::ostringstream out;
  const auto cols = chain_columns(posterior);
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    const PosteriorChain& chain = result.chains[c];
    for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
      const Vector u = chain.draws.row(s).transpose();
      out << c + 1 << ',' << s + 1 << ',' << detail::num(chain.log_density(s));
      for (Eigen::Index i = 0; i < u.size(); ++i) out << ',' << detail::num(u(i));
      for (const MixtureParams& m : posterior.constrain(u)) {
        for (Eigen::Index j = 0; j < m.components(); ++j) out << ',' << detail::num(m.weights()(j));
        for (Eigen::Index j = 0; j < m.components(); ++j) {
          for (Eigen::Index k = 0; k < m.dim(); ++k) out << ',' << detail::num(m.atoms()(j, k));
        }
        for (Eigen::Index r = 0; r < m.dim(); ++r) {
          for (Eigen::Index k = r; k < m.dim(); ++k) out << ',' << detail::num(m.covariance()(r, k));
        }
      }
      out << '\n';
    }
  }
  return out.str();
}

std::string density_csv(const DensityGrid& grid, const DensityFn& truth) {
  std::ostringstream out;
  write_density_csv(out, grid, truth);
  return out.str();
}

}  // namespace

FitInput load_input(const RunConfig& config) {
  FitInput in;
  in.kind = config.model.kind;
  if (config.model.scenario) {
    const ScenarioSpec& s = *config.model.scenario;
    const int n = s.n.front();
    const std::uint64_t seed = s.seeds.front();
    switch (s.model) {
      case ModelKind::Deconv: {
        DeconvSample d = gen_deconv(s, n, seed);
        in.data = {std::move(d.y), std::move(d.eps)};
        in.truth = {std::move(d.truth)};
        break;
      }
      case ModelKind::RepMeas: {
        RepMeasSample r = gen_repmeas(s, n, seed);
        in.data = {std::move(r.y1), std::move(r.y2)};
        in.truth = {std::move(r.truth)};
        break;
      }
      case ModelKind::Factor: {
        FactorSample f = gen_factor(s, n, seed);
        in.data = {std::move(f.y)};
        const int target = config.likelihood.target;
        if (target == kJointTarget) {
          in.truth = std::move(f.truths);
        } else {
          if (target >= static_cast<int>(f.truths.size())) {
            throw ConfigError("likelihood.target", "scenario has only " + std::to_string(f.truths.size()) + " factors");
          }
          in.truth = {f.truths[target]};
        }
        in.warnings = std::move(f.warnings);
        break;
      }
    }
    return in;
  }

  static const std::map<ModelKind, std::vector<std::string>> order = {
      {ModelKind::Deconv, {"y", "eps"}}, {ModelKind::RepMeas, {"y1", "y2"}}, {ModelKind::Factor, {"y"}}};
  for (const std::string& key : order.at(in.kind)) {
    Matrix m = read_csv(config.model.data.at(key), config.model.header);
    if (!m.allFinite()) throw IoError(config.model.data.at(key).string() + ": non-finite values");
    if (!in.data.empty() && m.cols() != in.data.front().dim()) {
      throw IoError(config.model.data.at(key).string() + ": column count differs from the first data file");
    }
    if (in.kind == ModelKind::RepMeas && !in.data.empty() && m.rows() != in.data.front().size()) {
      throw IoError(config.model.data.at(key).string() + ": repeated measurements need equal row counts");
    }
    in.data.emplace_back(std::move(m));
  }
  return in;
}

std::shared_ptr<const Objective> build_objective(const RunConfig& config, const FitInput& input) {
  const LikelihoodBlock& l = config.likelihood;
  std::shared_ptr<Objective> obj;
  switch (input.kind) {
    case ModelKind::Deconv: {
      const Eigen::Index d = input.data[0].dim();
      const BoxQuadrature quad = build_box(l.radius, per_dim_or_default(l.per_dim, d), static_cast<int>(d));
      obj = std::make_shared<DeconvModel>(DeconvModel::from_data(input.data[0], input.data[1], quad));
      break;
    }
    case ModelKind::RepMeas: {
      RepMeasOptions o;
      o.radius = l.radius;
      o.per_dim = l.per_dim;
      o.sphere_count = l.sphere_count;
      o.line_count = l.line_count;
      o.boundary = l.boundary;
      o.symmetrized = l.symmetrized;
      obj = std::make_shared<RepMeasModel>(RepMeasModel::from_data(input.data[0], input.data[1], o));
      break;
    }
    case ModelKind::Factor: {
      const Matrix a = config.loadings();
      const Eigen::Index dim = input.data[0].dim();
      if (a.rows() != dim) {
        throw ConfigError("likelihood.loadings", "has " + std::to_string(a.rows()) + " rows but the data has " +
                                                     std::to_string(dim) + " columns");
      }
      if (l.target != kJointTarget && l.target >= a.cols()) {
        throw ConfigError("likelihood.target", "loadings have only " + std::to_string(a.cols()) + " factors");
      }
      const BoxQuadrature quad = build_box(l.radius, per_dim_or_default(l.per_dim, dim), static_cast<int>(dim));
      obj = std::make_shared<FactorModel>(FactorModel::from_data(input.data[0], a, l.target, quad));
      break;
    }
  }
  obj->floor = l.cf_floor;
  return obj;
}

PriorSpec build_prior(const RunConfig& config, const FitInput& input) {
  const Eigen::Index dim = input.kind == ModelKind::Factor ? 1 : input.data[0].dim();
  try {
    PriorSpec spec = config.prior.spec(dim);
    if (config.prior.empirical_bayes) spec = empirical_bayes(spec, input.data[0].observations());
    spec.validate();
    return spec;
  } catch (const InvalidParameter& e) {
    throw ConfigError("prior", e.what());
  }
}

Grid fit_grid(const RunConfig& config, const FitInput& input, Eigen::Index block) {
  if (input.kind != ModelKind::Factor) {
    const Eigen::Index d = input.data[0].dim();
    const Eigen::Index points = config.output.grid_points > 0 ? config.output.grid_points : default_grid_points(d);
    return Grid::from_data(input.data[0].observations(), points, config.output.pad);
  }
  // Factor variances from Cov(Y) = sum_k var_k A_k A_k', solved with Q*.
  const Matrix& y = input.data[0].observations();
  const Matrix cov = sample_cov(y);
  const auto pairs = upper_pairs(cov.rows());
  Vector vech(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) vech(Eigen::Index(i)) = cov(pairs[i].first, pairs[i].second);
  const Vector var = build_Q(config.loadings()).qstar * vech;
  const Eigen::Index k = config.likelihood.target == kJointTarget ? block : config.likelihood.target;
  const double sd = var(k) > 0 ? std::sqrt(var(k)) : 1.0;
  const Eigen::Index points = config.output.grid_points > 0 ? config.output.grid_points : default_grid_points(1);
  return Grid::uniform(-5.0 * sd, 5.0 * sd, points);
}

std::vector<MixtureParams> block_draws(const Posterior& posterior, std::span<const PosteriorChain> chains,
                                       Eigen::Index block) {
  std::vector<MixtureParams> out;
  for (const PosteriorChain& c : chains) {
    for (Eigen::Index s = 0; s < c.draws.rows(); ++s) {
      out.push_back(posterior.constrain(c.draws.row(s).transpose())[static_cast<std::size_t>(block)]);
    }
  }
  return out;
}

FitResult run_fit(const RunConfig& config) { return run_fit(config, load_input(config)); }

FitResult run_fit(const RunConfig& config, const FitInput& input) {
  FitResult r;
  r.config = config;
  r.hash = config_hash(config);
  r.warnings = input.warnings;
  r.input = input;

  const auto objective = build_objective(config, input);
  r.posterior = std::make_shared<const Posterior>(objective, build_prior(config, input));
  const Posterior& posterior = *r.posterior;
  const LogDensityFn target = [&posterior](const Vector& x, Vector* g) { return posterior.log_density(x, g); };
  const InitSampler init = [&posterior](std::mt19937_64& rng) { return posterior.sample_prior(rng); };
  r.chains = run_chains(target, config.sampler.hmc, init);
  r.diagnostics = diagnose(r.chains);
  r.floor_breaches = objective->floor_breaches();

  const bool factor = input.kind == ModelKind::Factor;
  const Eigen::Index blocks = objective->block_count();
  for (Eigen::Index b = 0; b < blocks; ++b) {
    BlockSummary s;
    if (!factor) {
      s.label = "x";
    } else {
      const int k = config.likelihood.target == kJointTarget ? static_cast<int>(b) : config.likelihood.target;
      s.label = "factor" + std::to_string(k + 1);
    }
    const std::vector<MixtureParams> draws = block_draws(posterior, r.chains, b);
    const Grid grid = fit_grid(config, input, b);
    const std::vector<double> levels = draws.size() >= 2 ? config.output.bands : std::vector<double>{};
    const DensityFn truth = static_cast<std::size_t>(b) < input.truth.size() ? input.truth[b] : DensityFn{};
    if (factor) {
      const std::vector<MixtureParams> centered = demean_draws(draws);
      s.density = posterior_mean_density(centered, grid, levels);
      s.raw = posterior_mean_density(draws, grid);
      for (const MixtureParams& m : centered) s.max_abs_mean = std::max(s.max_abs_mean, mixture_mean(m).cwiseAbs().maxCoeff());
      if (truth) s.raw_error = density_error(*s.raw, truth);
    } else {
      s.density = posterior_mean_density(draws, grid, levels);
      for (const MixtureParams& m : draws) s.max_abs_mean = std::max(s.max_abs_mean, mixture_mean(m).cwiseAbs().maxCoeff());
    }
    if (truth) s.error = density_error(s.density, truth);
    r.blocks.push_back(std::move(s));
  }

  const auto rhat = r.diagnostics.max_rhat();
  if (rhat && *rhat > config.sampler.rhat_threshold) {
    r.warnings.push_back("max R-hat " + detail::num(*rhat) + " exceeds " + detail::num(config.sampler.rhat_threshold));
    r.gate_failed = config.sampler.rhat_gate;
  }
  if (r.diagnostics.divergences > 0) {
    r.warnings.push_back(std::to_string(r.diagnostics.divergences) + " divergent transitions after warmup");
  }
  return r;
}

json diagnostics_json(const FitResult& r) {
  const Diagnostics& d = r.diagnostics;
  json j;
  j["chains"] = d.chains;
  j["draws_per_chain"] = d.draws_per_chain;
  j["divergences"] = d.divergences;
  j["max_rhat"] = optional_number(d.max_rhat());
  j["min_ess"] = optional_number(d.min_ess());
  j["rhat_threshold"] = r.config.sampler.rhat_threshold;
  j["cf_floor_breaches"] = r.floor_breaches;
  json rhat = json::array(), ess = json::array();
  for (const auto& v : d.rhat) rhat.push_back(optional_number(v));
  for (const auto& v : d.ess) ess.push_back(optional_number(v));
  j["rhat"] = rhat;
  j["ess"] = ess;
  json per = json::array();
  for (const PosteriorChain& c : r.chains) {
    per.push_back({{"seed", c.seed},
                   {"stepsize", c.stepsize},
                   {"mean_accept", c.mean_accept},
                   {"mean_tree_depth", c.mean_tree_depth},
                   {"divergences", c.divergences},
                   {"warmup_divergences", c.warmup_divergences},
                   {"gradient_evals", c.gradient_evals}});
  }
  j["per_chain"] = per;
  return j;
}

json fit_report(const FitResult& r) {
  json j;
  j["version"] = kVersion;
  j["schema_version"] = kSchemaVersion;
  j["config_hash"] = r.hash;
  j["config"] = to_json(r.config);
  json blocks = json::array();
  for (const BlockSummary& b : r.blocks) {
    json e{{"label", b.label},
           {"draws", b.density.draws},
           {"grid_points", b.density.grid.size()},
           {"max_abs_mixture_mean", b.max_abs_mean},
           {"error", error_json(b.error)}};
    if (b.raw) e["raw_error"] = error_json(b.raw_error);
    blocks.push_back(e);
  }
  j["blocks"] = blocks;
  j["max_rhat"] = optional_number(r.diagnostics.max_rhat());
  j["divergences"] = r.diagnostics.divergences;
  j["warnings"] = r.warnings;
  j["gate_failed"] = r.gate_failed;
  return j;
}

ArtifactSet write_fit_artifacts(const FitResult& r, const fs::path& dir) {
  ArtifactSet out;
  const std::string stem = "fit-" + r.hash;
  auto put = [&](const std::string& name, const std::string& content) {
    const WrittenArtifact w = write_artifact(dir, name, content);
    if (w.renamed) {
      out.warnings.push_back(name + " exists with different content; wrote " + w.path.filename().string());
    }
    out.paths.push_back(w.path);
  };

  const FitInput& input = r.input;
  if (r.config.output.chains) put(stem + ".chains.csv", chains_csv(r, *r.posterior));
  put(stem + ".diagnostics.json", diagnostics_json(r).dump(2) + "\n");
  const bool several = r.blocks.size() > 1;
  for (std::size_t b = 0; b < r.blocks.size(); ++b) {
    const BlockSummary& s = r.blocks[b];
    const DensityFn truth = b < input.truth.size() ? input.truth[b] : DensityFn{};
    const std::string part = several ? ".density-" + s.label : ".density";
    put(stem + part + ".csv", density_csv(s.density, truth));
    if (s.raw) put(stem + part + "-raw.csv", density_csv(*s.raw, truth));
  }
  json report = fit_report(r);
  json names = json::array();
  for (const auto& p : out.paths) names.push_back(p.filename().string());
  report["artifacts"] = names;
  for (const std::string& w : out.warnings) report["warnings"].push_back(w);
  put(stem + ".report.json", report.dump(2) + "\n");
  return out;
}

GradcheckReport gradcheck(const RunConfig& config, int states, bool corrupt) {
  const FitInput input = load_input(config);
  const Posterior posterior(build_objective(config, input), build_prior(config, input));
  std::mt19937_64 rng(config.sampler.hmc.seed);
  GradcheckReport report;
  const double step = std::cbrt(std::numeric_limits<double>::epsilon());
  for (int s = 0; s < states; ++s) {
    Vector x, g;
    double lp = -std::numeric_limits<double>::infinity();
    for (int tries = 0; tries < 100 && !std::isfinite(lp); ++tries) {
      x = posterior.sample_prior(rng);
      lp = posterior.log_density(x, &g);
    }
    if (!std::isfinite(lp)) throw SamplerAbort("gradcheck could not find a prior state with finite density");
    if (corrupt) g(0) *= 1.01;
    GradcheckRow worst{s + 1, 0, 0.0, 0.0, -1.0};
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = step * std::max(1.0, std::abs(x(i)));
      Vector up = x, down = x;
      up(i) += h;
      down(i) -= h;
      const double fd = (posterior.log_density(up, nullptr) - posterior.log_density(down, nullptr)) / (2.0 * h);
      const double err = std::abs(g(i) - fd) / std::max({1.0, std::abs(g(i)), std::abs(fd)});
      const double e = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      if (e > worst.rel_error) worst = {s + 1, i, g(i), fd, e};
    }
    report.max_rel_error = std::max(report.max_rel_error, worst.rel_error);
    report.worst.push_back(worst);
  }
  return report;
}

RunConfig cell_config(const RunConfig& base, int n, std::uint64_t seed) {
  if (!base.model.scenario) throw ConfigError("model.scenario", "a sweep needs a scenario");
  RunConfig c = base;
  c.model.scenario->n = {n};
  c.model.scenario->seeds = {seed};
  return c;
}

SweepReport run_experiment(const RunConfig& config) {
  if (!config.model.scenario) throw ConfigError("model.scenario", "a sweep needs a scenario");
  SweepReport report;
  report.config = config;
  report.hash = config_hash(config);
  for (int n : config.model.scenario->n) {
    for (std::uint64_t seed : config.model.scenario->seeds) {
      SweepCell cell;
      cell.n = n;
      cell.seed = seed;
      report.cells.push_back(cell);
    }
  }
  parallel_for(
      report.cells.size(), 1,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          SweepCell& cell = report.cells[i];
          const auto start = std::chrono::steady_clock::now();
          try {
            const FitResult fit = run_fit(cell_config(config, cell.n, cell.seed));
            cell.error = fit.blocks.front().error;
            cell.rhat_max = fit.diagnostics.max_rhat();
            cell.divergences = fit.diagnostics.divergences;
          } catch (const Error& e) {
            cell.failure = e.what();
          }
          cell.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
      },
      config.sweep.workers);
  return report;
}

std::string sweep_csv(const SweepReport& report) {
  std::ostringstream out;
  out << "model,n,seed,l2,linf,rhat_max,divergences,wall_time\n";
  const std::string model = to_string(report.config.model.kind);
  for (const SweepCell& c : report.cells) {
    out << model << ',' << c.n << ',' << c.seed << ',';
    if (c.error) out << detail::num(c.error->l2) << ',' << detail::num(c.error->linf);
    else out << ',';
    out << ',' << (c.rhat_max ? detail::num(*c.rhat_max) : "") << ',' << c.divergences << ','
        << detail::num(c.wall_time) << '\n';
  }
  return out.str();
}

json sweep_json(const SweepReport& report) {
  json j;
  j["version"] = kVersion;
  j["schema_version"] = kSchemaVersion;
  j["config_hash"] = report.hash;
  j["config"] = to_json(report.config);
  json cells = json::array();
  std::map<int, std::vector<double>> by_n;
  for (const SweepCell& c : report.cells) {
    json e{{"n", c.n},
           {"seed", c.seed},
           {"error", error_json(c.error)},
           {"rhat_max", optional_number(c.rhat_max)},
           {"divergences", c.divergences},
           {"wall_time", c.wall_time}};
    if (!c.failure.empty()) e["failure"] = c.failure;
    cells.push_back(e);
    if (c.error) by_n[c.n].push_back(c.error->l2);
  }
  j["cells"] = cells;
  json trend = json::array();
  for (auto& [n, v] : by_n) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size();
    const double median = m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    trend.push_back({{"n", n}, {"median_l2", median}, {"cells", m}});
  }
  j["trend"] = trend;
  if (trend.size() >= 2) {
    j["decreasing"] = trend.back()["median_l2"].get<double>() < trend.front()["median_l2"].get<double>();
  }
  return j;
}

}  // namespace qbd
