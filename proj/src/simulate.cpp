#include "qbdecon/simulate.hpp"

#include "qbdecon/error.hpp"

#include <cmath>
#include <numbers>

namespace qbd {

namespace {

using nlohmann::json;

Matrix matrix_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw ConfigError(field, "rows must be arrays of equal length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

double laplace_draw(std::mt19937_64& rng, double b) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double v = u(rng);
  while (std::abs(v) >= 0.5) v = u(rng);
  return b * std::copysign(std::log1p(-2.0 * std::abs(v)), v);
}

// Subtracts the sample mean of every column.
void demean_columns(Matrix& x) { x.rowwise() -= x.colwise().mean(); }

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Deconv: return "deconv";
    case ModelKind::RepMeas: return "repmeas";
    case ModelKind::Factor: return "factor";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "deconv") return ModelKind::Deconv;
  if (name == "repmeas") return ModelKind::RepMeas;
  if (name == "factor") return ModelKind::Factor;
  throw ConfigError("model.kind", "unknown model '" + name + "' (expected deconv, repmeas or factor)");
}

DistributionSpec DistributionSpec::gaussian(double sd, double location) {
  DistributionSpec s;
  s.kind = Kind::Gaussian;
  s.scale = sd;
  s.location = location;
  return s;
}

DistributionSpec DistributionSpec::laplace(double b, double location) {
  DistributionSpec s;
  s.kind = Kind::Laplace;
  s.scale = b;
  s.location = location;
  return s;
}

DistributionSpec DistributionSpec::of(MixtureParams m) {
  DistributionSpec s;
  s.kind = Kind::Mixture;
  s.mixture = std::move(m);
  return s;
}

void DistributionSpec::validate() const {
  if (kind == Kind::Mixture) {
    if (!mixture) throw InvalidParameter("mixture law without parameters");
    return;
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidParameter("distribution scale must be positive");
  if (!std::isfinite(location)) throw InvalidParameter("distribution location must be finite");
}

Eigen::Index DistributionSpec::dim(Eigen::Index fallback) const {
  return kind == Kind::Mixture ? mixture->dim() : fallback;
}

Vector DistributionSpec::mean(Eigen::Index d) const {
  if (kind == Kind::Mixture) return mixture_mean(*mixture);
  return Vector::Constant(d, location);
}

DistributionSpec DistributionSpec::centered() const {
  if (kind == Kind::Mixture) return of(demean(*mixture));
  DistributionSpec s = *this;
  s.location = 0.0;
  return s;
}

Matrix DistributionSpec::sample(std::mt19937_64& rng, Eigen::Index count, Eigen::Index d) const {
  validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  if (kind == Kind::Mixture) {
    const MixtureParams& m = *mixture;
    const Vector& w = m.weights();
    std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
    Matrix out(count, m.dim());
    Vector z(m.dim());
    for (Eigen::Index i = 0; i < count; ++i) {
      const int j = pick(rng);
      for (Eigen::Index k = 0; k < m.dim(); ++k) z(k) = normal(rng);
      out.row(i) = (m.atoms().row(j).transpose() + m.cholesky() * z).transpose();
    }
    return out;
  }
  Matrix out(count, d);
  for (Eigen::Index i = 0; i < count; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      out(i, k) = location + (kind == Kind::Gaussian ? scale * normal(rng) : laplace_draw(rng, scale));
    }
  }
  return out;
}

double DistributionSpec::density(const Vector& x) const {
  if (kind == Kind::Mixture) return qbd::density(*mixture, x);
  double p = 1.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double u = x(k) - location;
    if (kind == Kind::Gaussian) {
      p *= std::exp(-0.5 * u * u / (scale * scale)) / (scale * std::sqrt(2.0 * std::numbers::pi));
    } else {
      p *= std::exp(-std::abs(u) / scale) / (2.0 * scale);
    }
  }
  return p;
}

Complex DistributionSpec::cf(const Vector& t) const {
  if (kind == Kind::Mixture) return qbd::cf(*mixture, t);
  Complex v(1.0, 0.0);
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    const double s = t(k);
    const double mod = kind == Kind::Gaussian ? std::exp(-0.5 * scale * scale * s * s) : 1.0 / (1.0 + scale * scale * s * s);
    v *= std::polar(mod, location * s);
  }
  return v;
}

void to_json(json& j, const DistributionSpec& spec) {
  switch (spec.kind) {
    case DistributionSpec::Kind::Mixture:
      j = *spec.mixture;
      j["kind"] = "mixture";
      return;
    case DistributionSpec::Kind::Gaussian:
      j = {{"kind", "gaussian"}, {"location", spec.location}, {"scale", spec.scale}};
      return;
    case DistributionSpec::Kind::Laplace:
      j = {{"kind", "laplace"}, {"location", spec.location}, {"scale", spec.scale}};
      return;
  }
}

DistributionSpec distribution_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("kind", "distribution needs a 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  DistributionSpec s;
  if (kind == "mixture") {
    s = DistributionSpec::of(mixture_from_json(j));
  } else if (kind == "gaussian" || kind == "laplace") {
    s.kind = kind == "gaussian" ? DistributionSpec::Kind::Gaussian : DistributionSpec::Kind::Laplace;
    s.location = j.value("location", 0.0);
    s.scale = j.value("scale", 1.0);
  } else {
    throw ConfigError("kind", "unknown distribution '" + kind + "' (expected mixture, gaussian or laplace)");
  }
  try {
    s.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError("scale", e.what());
  }
  return s;
}

Regime ill_posedness(const DistributionSpec& error) {
  // Laplace: |phi(t)| = 1/(1 + b^2 t^2). Gaussian laws and Gaussian mixtures
  // decay like exp(-c t^2).
  return Regime{error.kind != DistributionSpec::Kind::Laplace, 2.0};
}

void ScenarioSpec::validate() const {
  if (n.empty()) throw ConfigError("scenario.n", "needs at least one sample size");
  for (int v : n) {
    if (v < 10) throw ConfigError("scenario.n", "sample sizes must be at least 10");
  }
  if (seeds.empty()) throw ConfigError("scenario.seeds", "needs at least one seed");
  if (aux_size < 0) throw ConfigError("scenario.aux_size", "must be non-negative");
  for (const auto& l : latent) l.validate();
  for (const auto& e : errors) e.validate();
  switch (model) {
    case ModelKind::Deconv:
    case ModelKind::RepMeas: {
      const std::size_t want = model == ModelKind::Deconv ? 1 : 2;
      if (latent.size() != 1) throw ConfigError("scenario.latent", "needs exactly one latent law");
      if (errors.size() != want) {
        throw ConfigError("scenario.errors", "needs exactly " + std::to_string(want) + " error law(s)");
      }
      if (dim < 1) throw ConfigError("scenario.dim", "must be at least 1");
      if (latent[0].dim(dim) != dim) throw ConfigError("scenario.latent", "dimension does not match scenario.dim");
      for (const auto& e : errors) {
        if (e.dim(dim) != dim) throw ConfigError("scenario.errors", "dimension does not match scenario.dim");
      }
      break;
    }
    case ModelKind::Factor:
      if (latent.empty()) throw ConfigError("scenario.latent", "needs one law per factor");
      if (loadings.cols() != static_cast<Eigen::Index>(latent.size())) {
        throw ConfigError("scenario.loadings", "needs one column per factor");
      }
      for (const auto& l : latent) {
        if (l.dim(1) != 1) throw ConfigError("scenario.latent", "factor laws must be univariate");
      }
      if (target < 0 || target >= static_cast<int>(latent.size())) {
        throw ConfigError("scenario.target", "must name one of the factors");
      }
      break;
  }
}

ScenarioSpec ScenarioSpec::bimodal_deconv(double laplace_b) {
  ScenarioSpec s;
  s.model = ModelKind::Deconv;
  s.latent = {DistributionSpec::of(MixtureParams::univariate({0.5, 0.5}, {-2.0, 2.0}, 1.0))};
  s.errors = {DistributionSpec::laplace(laplace_b)};
  return s;
}

ScenarioSpec ScenarioSpec::bimodal_factor() {
  ScenarioSpec s;
  s.model = ModelKind::Factor;
  s.latent = {DistributionSpec::of(MixtureParams::univariate({0.5, 0.5}, {-2.0, 2.0}, 1.0)),
              DistributionSpec::gaussian(1.0), DistributionSpec::gaussian(1.0)};
  s.loadings.resize(2, 3);
  s.loadings << 1, 1, 0, 1, 0, 1;
  s.target = 0;
  return s;
}

void to_json(json& j, const ScenarioSpec& spec) {
  j = json::object();
  j["model"] = to_string(spec.model);
  j["dim"] = spec.dim;
  j["latent"] = spec.latent;
  j["errors"] = spec.errors;
  j["loadings"] = spec.loadings.size() ? matrix_to_json(spec.loadings) : json::array();
  j["n"] = spec.n;
  j["seeds"] = spec.seeds;
  j["aux_size"] = spec.aux_size;
  j["target"] = spec.target + 1;
}

ScenarioSpec scenario_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("scenario", "must be an object");
  ScenarioSpec s;
  try {
    if (j.contains("preset")) {
      const std::string preset = j.at("preset").get<std::string>();
      if (preset == "bimodal_factor") {
        s = ScenarioSpec::bimodal_factor();
      } else if (preset == "bimodal_deconv") {
        s = ScenarioSpec::bimodal_deconv(j.value("laplace_scale", 0.5));
      } else {
        throw ConfigError("scenario.preset", "unknown preset '" + preset + "'");
      }
    }
    if (j.contains("model")) s.model = model_kind_from_string(j.at("model").get<std::string>());
    s.dim = j.value("dim", s.dim);
    if (j.contains("latent")) {
      s.latent.clear();
      const json& l = j.at("latent");
      if (l.is_array()) {
        for (const auto& e : l) s.latent.push_back(distribution_from_json(e));
      } else {
        s.latent.push_back(distribution_from_json(l));
      }
    }
    if (j.contains("errors")) {
      s.errors.clear();
      for (const auto& e : j.at("errors")) s.errors.push_back(distribution_from_json(e));
    }
    if (j.contains("loadings") && !j.at("loadings").empty()) s.loadings = matrix_json(j.at("loadings"), "scenario.loadings");
    if (j.contains("n")) {
      s.n = j.at("n").is_array() ? j.at("n").get<std::vector<int>>() : std::vector<int>{j.at("n").get<int>()};
    }
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("seed")) s.seeds = {j.at("seed").get<std::uint64_t>()};
    s.aux_size = j.value("aux_size", s.aux_size);
    if (j.contains("target")) s.target = j.at("target").get<int>() - 1;
  } catch (const json::exception& e) {
    throw ConfigError("scenario", e.what());
  } catch (const ConfigError& e) {
    if (e.field().rfind("scenario", 0) == 0) throw;
    throw ConfigError("scenario." + e.field(), e.message());
  }
  s.validate();
  return s;
}

DeconvSample gen_deconv(const ScenarioSpec& spec, int n, std::uint64_t seed) {
  if (spec.model != ModelKind::Deconv) throw InvalidParameter("scenario is not a deconvolution scenario");
  spec.validate();
  std::mt19937_64 rng(seed);
  const Eigen::Index d = spec.dim;
  const Matrix x = spec.latent[0].sample(rng, n, d);
  const Matrix e = spec.errors[0].sample(rng, n, d);
  const int m = spec.aux_size > 0 ? spec.aux_size : n;
  Matrix aux = spec.errors[0].sample(rng, m, d);
  const DistributionSpec latent = spec.latent[0];
  return {Dataset(x + e), Dataset(std::move(aux)), [latent](const Vector& v) { return latent.density(v); },
          ill_posedness(spec.errors[0])};
}

RepMeasSample gen_repmeas(const ScenarioSpec& spec, int n, std::uint64_t seed) {
  if (spec.model != ModelKind::RepMeas) throw InvalidParameter("scenario is not a repeated-measurements scenario");
  spec.validate();
  std::mt19937_64 rng(seed);
  const Eigen::Index d = spec.dim;
  const Matrix x = spec.latent[0].sample(rng, n, d);
  const Matrix e1 = spec.errors[0].sample(rng, n, d);
  const Matrix e2 = spec.errors[1].sample(rng, n, d);
  const DistributionSpec latent = spec.latent[0];
  return {Dataset(x + e1), Dataset(x + e2), [latent](const Vector& v) { return latent.density(v); }};
}

FactorSample gen_factor(const ScenarioSpec& spec, int n, std::uint64_t seed) {
  if (spec.model != ModelKind::Factor) throw InvalidParameter("scenario is not a factor scenario");
  spec.validate();
  std::mt19937_64 rng(seed);
  const Eigen::Index k_count = static_cast<Eigen::Index>(spec.latent.size());
  Matrix x(n, k_count);
  Vector shifts(k_count);
  std::vector<std::string> warnings;
  std::vector<DensityFn> truths;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const DistributionSpec& law = spec.latent[k];
    x.col(k) = law.sample(rng, n, 1).col(0);
    shifts(k) = law.mean(1)(0);
    if (std::abs(shifts(k)) > 1e-12) {
      warnings.push_back("factor " + std::to_string(k + 1) + " has population mean " + std::to_string(shifts(k)) +
                         "; demeaned");
    }
    const DistributionSpec centered = law.centered();
    truths.push_back([centered](const Vector& v) { return centered.density(v); });
  }
  demean_columns(x);
  Matrix y = x * spec.loadings.transpose();
  return {Dataset(std::move(y)), std::move(x), std::move(truths), std::move(shifts), std::move(warnings)};
}

}  // namespace qbd
