#pragma once

// End-to-end runs: load or simulate data, build the quasi-posterior, sample,
// summarize, and write artifacts.

#include "qbdecon/config.hpp"
#include "qbdecon/hmc.hpp"
#include "qbdecon/posterior.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace qbd {

// Observations for one fit plus, for simulated data, the known latent
// densities (one per fitted block).
struct FitInput {
  ModelKind kind = ModelKind::Deconv;
  std::vector<Dataset> data;  // deconv: y, eps; repmeas: y1, y2; factor: y
  std::vector<DensityFn> truth;
  std::vector<std::string> warnings;
};

// Reads the data files, or draws the scenario at its first n and seed.
FitInput load_input(const RunConfig& config);

std::shared_ptr<const Objective> build_objective(const RunConfig& config, const FitInput& input);
PriorSpec build_prior(const RunConfig& config, const FitInput& input);

// Evaluation grid for block `block` of the fitted posterior.
Grid fit_grid(const RunConfig& config, const FitInput& input, Eigen::Index block);

struct BlockSummary {
  std::string label;
  DensityGrid density;               // demeaned draws for the factor model
  std::optional<DensityGrid> raw;    // factor model: draws as sampled
  std::optional<DensityError> error;
  std::optional<DensityError> raw_error;
  double max_abs_mean = 0.0;         // largest |mixture mean| over summarized draws
};

struct FitResult {
  RunConfig config;
  std::string hash;
  std::vector<PosteriorChain> chains;
  Diagnostics diagnostics;
  std::vector<BlockSummary> blocks;
  std::vector<std::string> warnings;
  std::size_t floor_breaches = 0;
  bool gate_failed = false;
  FitInput input;
  std::shared_ptr<const Posterior> posterior;
};

FitResult run_fit(const RunConfig& config);
FitResult run_fit(const RunConfig& config, const FitInput& input);

// Draws of block `block`, one per kept iteration across chains.
std::vector<MixtureParams> block_draws(const Posterior& posterior, std::span<const PosteriorChain> chains,
                                       Eigen::Index block);

struct ArtifactSet {
  std::vector<std::filesystem::path> paths;
  std::vector<std::string> warnings;
};

// chains CSV, diagnostics JSON, density CSV per block and a report JSON,
// each named <command>-<hash>.<part>.<ext>.
ArtifactSet write_fit_artifacts(const FitResult& result, const std::filesystem::path& dir);

nlohmann::json diagnostics_json(const FitResult& result);
nlohmann::json fit_report(const FitResult& result);

struct GradcheckRow {
  int state = 0;
  Eigen::Index coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> worst;  // worst coordinate per state
  double max_rel_error = 0.0;
  double threshold = 1e-4;
  bool passed() const { return max_rel_error <= threshold; }
};

// Central differences against the analytic gradient of the log
// quasi-posterior at `states` prior draws. `corrupt` scales the analytic
// gradient's first coordinate by 1.01, to check that the check can fail.
GradcheckReport gradcheck(const RunConfig& config, int states = 20, bool corrupt = false);

struct SweepCell {
  int n = 0;
  std::uint64_t seed = 0;
  std::optional<DensityError> error;
  std::optional<double> rhat_max;
  int divergences = 0;
  double wall_time = 0.0;
  std::string failure;  // empty when the fit finished
};

struct SweepReport {
  RunConfig config;
  std::string hash;
  std::vector<SweepCell> cells;
};

// The base config with its scenario restricted to one (n, seed) cell.
RunConfig cell_config(const RunConfig& base, int n, std::uint64_t seed);

SweepReport run_experiment(const RunConfig& config);

// model,n,seed,l2,linf,rhat_max,divergences,wall_time
std::string sweep_csv(const SweepReport& report);
// Cells plus the median L2 error per n.
nlohmann::json sweep_json(const SweepReport& report);

}  // namespace qbd
