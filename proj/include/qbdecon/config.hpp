#pragma once

// Run configuration read from JSON. Every field has a default; to_json emits
// all of them so a report describes its run completely.

#include "qbdecon/dp_prior.hpp"
#include "qbdecon/hmc.hpp"
#include "qbdecon/quasi_likelihood.hpp"
#include "qbdecon/simulate.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qbd {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

struct ModelBlock {
  ModelKind kind = ModelKind::Deconv;
  // deconv: y, eps; repmeas: y1, y2; factor: y. Stored resolved against the
  // config file's directory.
  std::map<std::string, std::filesystem::path> data;
  bool header = false;
  std::optional<ScenarioSpec> scenario;
};

struct PriorBlock {
  int truncation = 30;
  double concentration = 1.0;
  bool empirical_bayes = false;
  std::optional<Vector> base_mean;
  std::optional<Matrix> base_cov;
  std::optional<CovariancePrior> cov_prior;

  PriorSpec spec(Eigen::Index dim) const;
};

struct LikelihoodBlock {
  double radius = 2.0;
  int per_dim = 0;
  int sphere_count = 0;
  int line_count = 0;
  std::optional<bool> boundary;
  bool symmetrized = false;
  int target = 0;  // 0-based factor, or kJointTarget
  std::optional<Matrix> loadings;
  std::filesystem::path loadings_path;
  double cf_floor = kDefaultCfFloor;
};

struct SamplerBlock {
  HMCConfig hmc;
  double rhat_threshold = 1.05;
  bool rhat_gate = false;
};

struct OutputBlock {
  std::filesystem::path dir = ".";
  std::vector<double> bands = {0.9};
  int grid_points = 0;  // per axis; 0 -> default for the dimension
  double pad = 3.0;
  bool chains = true;
};

struct SweepBlock {
  unsigned workers = 1;
};

struct RunConfig {
  ModelBlock model;
  PriorBlock prior;
  LikelihoodBlock likelihood;
  SamplerBlock sampler;
  OutputBlock output;
  SweepBlock sweep;

  // Checks cross-field rules and that referenced files exist.
  void validate() const;
  // Loadings from the inline matrix, the loadings file or the scenario.
  Matrix loadings() const;
};

RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);

// 16 hex digits of FNV-1a over the materialized config, output block
// excluded so the hash does not depend on where artifacts go.
std::string config_hash(const RunConfig& config);

}  // namespace qbd
