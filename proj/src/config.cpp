#include "qbdecon/config.hpp"

#include "qbdecon/error.hpp"
#include "qbdecon/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace qbd {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Reads typed fields out of one JSON object and reports failures with the
// full dotted path.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& at(const std::string& key) const { return j_.at(key); }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "expected " + expected<T>() + ", got " + j_.at(key).dump());
    }
  }

  void only(std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& item : j_.items()) {
      if (!allowed.count(item.key())) throw ConfigError(field(item.key()), "unknown field");
    }
  }

 private:
  template <class T>
  static std::string expected() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "an array of numbers";
  }

  const json& j_;
  std::string path_;
};

Vector vector_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(field, "expected an array of numbers");
    v(Eigen::Index(i)) = j[i].get<double>();
  }
  return v;
}

Matrix matrix_json(const json& j, const std::string& field) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw ConfigError(field, "expected a non-empty array of rows");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].is_array() ? j[0].size() : 0));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_json(j[r], field);
    if (row.size() != m.cols() || row.size() == 0) throw ConfigError(field, "rows must be arrays of equal length");
    m.row(Eigen::Index(r)) = row.transpose();
  }
  return m;
}

json matrix_out(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json vector_out(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

const std::map<ModelKind, std::vector<std::string>> kDataKeys = {
    {ModelKind::Deconv, {"y", "eps"}},
    {ModelKind::RepMeas, {"y1", "y2"}},
    {ModelKind::Factor, {"y"}},
};

void parse_model(const json& j, const fs::path& base, ModelBlock& m) {
  const Block b(j, "model");
  b.only({"kind", "data", "header", "scenario"});
  std::string kind = "deconv";
  b.read("kind", kind);
  try {
    m.kind = model_kind_from_string(kind);
  } catch (const ConfigError&) {
    throw ConfigError("model.kind", "unknown model '" + kind + "' (expected deconv, repmeas or factor)");
  }
  b.read("header", m.header);
  if (b.has("data")) {
    const Block d(b.at("data"), "model.data");
    for (const auto& item : b.at("data").items()) {
      const auto& keys = kDataKeys.at(m.kind);
      if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
        throw ConfigError(d.field(item.key()), "not a data input of the " + kind + " model");
      }
      std::string p;
      d.read(item.key(), p);
      m.data[item.key()] = (fs::path(p).is_absolute() ? fs::path(p) : base / p).lexically_normal();
    }
  }
  if (b.has("scenario")) {
    json s = b.at("scenario");
    if (s.is_object() && !s.contains("model") && !s.contains("preset")) s["model"] = kind;
    try {
      m.scenario = scenario_from_json(s);
    } catch (const ConfigError& e) {
      throw ConfigError("model." + e.field(), e.message());
    }
    if (m.scenario->model != m.kind) {
      throw ConfigError("model.scenario.model", "does not match model.kind '" + kind + "'");
    }
  }
}

void parse_prior(const json& j, PriorBlock& p) {
  const Block b(j, "prior");
  b.only({"truncation", "concentration", "empirical_bayes", "base_mean", "base_cov", "cov_prior"});
  b.read("truncation", p.truncation);
  b.read("concentration", p.concentration);
  b.read("empirical_bayes", p.empirical_bayes);
  if (b.has("base_mean")) p.base_mean = vector_json(b.at("base_mean"), "prior.base_mean");
  if (b.has("base_cov")) p.base_cov = matrix_json(b.at("base_cov"), "prior.base_cov");
  if (b.has("cov_prior")) {
    const Block c(b.at("cov_prior"), "prior.cov_prior");
    std::string kind;
    c.read("kind", kind);
    if (kind == "inverse_gamma") {
      c.only({"kind", "shape", "scale"});
      InverseGammaPrior ig;
      c.read("shape", ig.shape);
      c.read("scale", ig.scale);
      p.cov_prior = ig;
    } else if (kind == "lkj_lognormal") {
      c.only({"kind", "eta", "log_scale_mean", "log_scale_sd"});
      LkjLogNormalPrior lkj;
      c.read("eta", lkj.eta);
      c.read("log_scale_mean", lkj.log_scale_mean);
      c.read("log_scale_sd", lkj.log_scale_sd);
      p.cov_prior = lkj;
    } else {
      throw ConfigError("prior.cov_prior.kind", "expected inverse_gamma or lkj_lognormal");
    }
  }
}

void parse_likelihood(const json& j, const fs::path& base, LikelihoodBlock& l) {
  const Block b(j, "likelihood");
  b.only({"radius", "per_dim", "sphere_count", "line_count", "boundary", "symmetrized", "target", "loadings",
          "cf_floor"});
  b.read("radius", l.radius);
  b.read("per_dim", l.per_dim);
  b.read("sphere_count", l.sphere_count);
  b.read("line_count", l.line_count);
  if (b.has("boundary")) {
    bool v = false;
    b.read("boundary", v);
    l.boundary = v;
  }
  b.read("symmetrized", l.symmetrized);
  b.read("cf_floor", l.cf_floor);
  if (b.has("target")) {
    const json& t = b.at("target");
    if (t.is_string() && t.get<std::string>() == "joint") {
      l.target = kJointTarget;
    } else if (t.is_number_integer() && t.get<int>() >= 1) {
      l.target = t.get<int>() - 1;
    } else {
      throw ConfigError("likelihood.target", "expected a factor number (from 1) or \"joint\"");
    }
  }
  if (b.has("loadings")) {
    const json& a = b.at("loadings");
    if (a.is_string()) {
      const fs::path p(a.get<std::string>());
      l.loadings_path = (p.is_absolute() ? p : base / p).lexically_normal();
    } else {
      l.loadings = matrix_json(a, "likelihood.loadings");
    }
  }
}

void parse_sampler(const json& j, SamplerBlock& s) {
  const Block b(j, "sampler");
  b.only({"warmup", "draws", "chains", "seed", "target_accept", "max_depth", "max_energy_error", "adapt_metric",
          "max_consecutive_divergences", "init_tries", "threads", "rhat_threshold", "rhat_gate"});
  HMCConfig& h = s.hmc;
  b.read("warmup", h.warmup);
  b.read("draws", h.draws);
  b.read("chains", h.chains);
  b.read("seed", h.seed);
  b.read("target_accept", h.target_accept);
  b.read("max_depth", h.max_depth);
  b.read("max_energy_error", h.max_energy_error);
  b.read("adapt_metric", h.adapt_metric);
  b.read("max_consecutive_divergences", h.max_consecutive_divergences);
  b.read("init_tries", h.init_tries);
  b.read("threads", h.threads);
  b.read("rhat_threshold", s.rhat_threshold);
  b.read("rhat_gate", s.rhat_gate);
  try {
    h.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("sampler." + e.field(), e.message());
  }
}

void parse_output(const json& j, const fs::path& base, OutputBlock& o) {
  const Block b(j, "output");
  b.only({"dir", "bands", "grid_points", "pad", "chains"});
  if (b.has("dir")) {
    std::string d;
    b.read("dir", d);
    o.dir = (fs::path(d).is_absolute() ? fs::path(d) : base / d).lexically_normal();
  }
  b.read("bands", o.bands);
  b.read("grid_points", o.grid_points);
  b.read("pad", o.pad);
  b.read("chains", o.chains);
}

}  // namespace

PriorSpec PriorBlock::spec(Eigen::Index dim) const {
  PriorSpec s = PriorSpec::defaults(dim);
  s.truncation = truncation;
  s.concentration = concentration;
  if (base_mean) s.base_mean = *base_mean;
  if (base_cov) s.base_cov = *base_cov;
  if (cov_prior) s.cov_prior = *cov_prior;
  return s;
}

Matrix RunConfig::loadings() const {
  if (likelihood.loadings) return *likelihood.loadings;
  if (!likelihood.loadings_path.empty()) return read_csv(likelihood.loadings_path, false);
  if (model.scenario && model.scenario->loadings.size()) return model.scenario->loadings;
  return {};
}

void RunConfig::validate() const {
  const bool has_data = !model.data.empty();
  if (has_data == model.scenario.has_value()) {
    throw ConfigError("model", "give exactly one of model.data and model.scenario");
  }
  if (has_data) {
    for (const auto& key : kDataKeys.at(model.kind)) {
      auto it = model.data.find(key);
      if (it == model.data.end()) throw ConfigError("model.data." + key, "missing");
      if (!std::filesystem::exists(it->second)) {
        throw ConfigError("model.data." + key, "file not found: " + it->second.string());
      }
    }
  }
  if (!likelihood.loadings_path.empty() && !std::filesystem::exists(likelihood.loadings_path)) {
    throw ConfigError("likelihood.loadings", "file not found: " + likelihood.loadings_path.string());
  }
  if (model.kind == ModelKind::Factor) {
    if (!likelihood.loadings && likelihood.loadings_path.empty() && !model.scenario) {
      throw ConfigError("likelihood.loadings", "required for the factor model");
    }
    if (prior.empirical_bayes) {
      throw ConfigError("prior.empirical_bayes", "not available for the factor model (factors are unobserved)");
    }
    if (likelihood.symmetrized) throw ConfigError("likelihood.symmetrized", "only applies to repmeas");
  } else if (likelihood.target != 0) {
    throw ConfigError("likelihood.target", "only applies to the factor model");
  }
  if (model.kind == ModelKind::Deconv && likelihood.symmetrized) {
    throw ConfigError("likelihood.symmetrized", "only applies to repmeas");
  }
  if (!(likelihood.radius > 0.0)) throw ConfigError("likelihood.radius", "must be positive");
  if (likelihood.per_dim < 0 || likelihood.sphere_count < 0 || likelihood.line_count < 0) {
    throw ConfigError("likelihood", "node counts must be non-negative");
  }
  if (!(likelihood.cf_floor > 0.0)) throw ConfigError("likelihood.cf_floor", "must be positive");
  if (prior.truncation < 1) throw ConfigError("prior.truncation", "must be at least 1");
  if (!(prior.concentration > 0.0)) throw ConfigError("prior.concentration", "must be positive");
  if (!(sampler.rhat_threshold >= 1.0)) throw ConfigError("sampler.rhat_threshold", "must be at least 1");
  for (double l : output.bands) {
    if (!(l > 0.0 && l < 1.0)) throw ConfigError("output.bands", "levels must lie in (0, 1)");
  }
  if (output.grid_points != 0 && output.grid_points < 2) throw ConfigError("output.grid_points", "must be 0 or >= 2");
  if (!(output.pad >= 0.0)) throw ConfigError("output.pad", "must be non-negative");
}

RunConfig parse_config(const json& j, const fs::path& base_dir) {
  const Block top(j, "");
  top.only({"schema_version", "model", "prior", "likelihood", "sampler", "output", "sweep"});
  if (top.has("schema_version")) {
    int v = 0;
    top.read("schema_version", v);
    if (v != kSchemaVersion) {
      throw ConfigError("schema_version", "unsupported version " + std::to_string(v) + " (expected " +
                                              std::to_string(kSchemaVersion) + ")");
    }
  }
  RunConfig c;
  if (!top.has("model")) throw ConfigError("model", "missing");
  parse_model(top.at("model"), base_dir, c.model);
  if (top.has("prior")) parse_prior(top.at("prior"), c.prior);
  if (top.has("likelihood")) {
    parse_likelihood(top.at("likelihood"), base_dir, c.likelihood);
    if (c.model.kind != ModelKind::Factor && top.at("likelihood").is_object() && top.at("likelihood").contains("target")) {
      throw ConfigError("likelihood.target", "only applies to the factor model");
    }
  }
  if (top.has("sampler")) parse_sampler(top.at("sampler"), c.sampler);
  if (top.has("output")) parse_output(top.at("output"), base_dir, c.output);
  if (top.has("sweep")) {
    const Block s(top.at("sweep"), "sweep");
    s.only({"workers"});
    s.read("workers", c.sweep.workers);
  }
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;

  json model;
  model["kind"] = to_string(c.model.kind);
  model["header"] = c.model.header;
  if (!c.model.data.empty()) {
    json data = json::object();
    for (const auto& [k, p] : c.model.data) data[k] = p.generic_string();
    model["data"] = data;
  }
  if (c.model.scenario) model["scenario"] = *c.model.scenario;
  j["model"] = model;

  json prior;
  prior["truncation"] = c.prior.truncation;
  prior["concentration"] = c.prior.concentration;
  prior["empirical_bayes"] = c.prior.empirical_bayes;
  if (c.prior.base_mean) prior["base_mean"] = vector_out(*c.prior.base_mean);
  if (c.prior.base_cov) prior["base_cov"] = matrix_out(*c.prior.base_cov);
  if (c.prior.cov_prior) {
    if (const auto* ig = std::get_if<InverseGammaPrior>(&*c.prior.cov_prior)) {
      prior["cov_prior"] = {{"kind", "inverse_gamma"}, {"shape", ig->shape}, {"scale", ig->scale}};
    } else {
      const auto& lkj = std::get<LkjLogNormalPrior>(*c.prior.cov_prior);
      prior["cov_prior"] = {{"kind", "lkj_lognormal"},
                            {"eta", lkj.eta},
                            {"log_scale_mean", lkj.log_scale_mean},
                            {"log_scale_sd", lkj.log_scale_sd}};
    }
  }
  j["prior"] = prior;

  const LikelihoodBlock& l = c.likelihood;
  json lik;
  lik["radius"] = l.radius;
  lik["per_dim"] = l.per_dim;
  lik["sphere_count"] = l.sphere_count;
  lik["line_count"] = l.line_count;
  lik["boundary"] = l.boundary ? json(*l.boundary) : json(nullptr);
  lik["symmetrized"] = l.symmetrized;
  lik["cf_floor"] = l.cf_floor;
  if (c.model.kind == ModelKind::Factor) {
    lik["target"] = l.target == kJointTarget ? json("joint") : json(l.target + 1);
    if (l.loadings) lik["loadings"] = matrix_out(*l.loadings);
    else if (!l.loadings_path.empty()) lik["loadings"] = l.loadings_path.generic_string();
  }
  j["likelihood"] = lik;

  const HMCConfig& h = c.sampler.hmc;
  j["sampler"] = {{"warmup", h.warmup},
                  {"draws", h.draws},
                  {"chains", h.chains},
                  {"seed", h.seed},
                  {"target_accept", h.target_accept},
                  {"max_depth", h.max_depth},
                  {"max_energy_error", h.max_energy_error},
                  {"adapt_metric", h.adapt_metric},
                  {"max_consecutive_divergences", h.max_consecutive_divergences},
                  {"init_tries", h.init_tries},
                  {"threads", h.threads},
                  {"rhat_threshold", c.sampler.rhat_threshold},
                  {"rhat_gate", c.sampler.rhat_gate}};
  j["output"] = {{"dir", c.output.dir.generic_string()},
                 {"bands", c.output.bands},
                 {"grid_points", c.output.grid_points},
                 {"pad", c.output.pad},
                 {"chains", c.output.chains}};
  j["sweep"] = {{"workers", c.sweep.workers}};
  return j;
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j["output"].erase("dir");
  j["sampler"].erase("threads");
  j["sweep"].erase("workers");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace qbd
