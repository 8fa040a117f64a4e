#pragma once

// Multinomial No-U-Turn sampler with dual-averaging step size and a diagonal
// metric learned in expanding warmup windows, plus split R-hat / ESS.

#include "qbdecon/mixture.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace qbd {

// Returns log density at x and writes its gradient into *grad when non-null.
// Non-finite values mark a region the sampler must not enter.
using LogDensityFn = std::function<double(const Vector& x, Vector* grad)>;

struct HMCConfig {
  int warmup = 1000;
  int draws = 1000;
  double target_accept = 0.8;
  int max_depth = 10;
  double max_energy_error = 1000.0;
  bool adapt_metric = true;
  std::uint64_t seed = 1;
  int chains = 4;
  int max_consecutive_divergences = 50;
  int init_tries = 100;
  // 0 picks the worker count from the hardware.
  unsigned threads = 0;

  void validate() const;
};

struct PosteriorChain {
  Matrix draws;           // kept x dim, unconstrained
  Vector log_density;     // per kept draw
  int divergences = 0;    // kept iterations only
  int warmup_divergences = 0;
  double mean_accept = 0.0;
  double stepsize = 0.0;
  Vector inv_metric;
  double mean_tree_depth = 0.0;
  std::size_t gradient_evals = 0;
  std::uint64_t seed = 0;
};

struct PhasePoint {
  Vector q;
  Vector p;
  Vector grad;
  double logp = 0.0;
};

// One velocity-Verlet step with diagonal inverse metric. Returns false when
// the new log density or gradient is not finite.
bool leapfrog(PhasePoint& z, double stepsize, const Vector& inv_metric, const LogDensityFn& target);

// Same step with unit metric, for plain (position, momentum) use.
bool leapfrog(Vector& position, Vector& momentum, double stepsize, const LogDensityFn& target);

double hamiltonian(const PhasePoint& z, const Vector& inv_metric);

// Runs one chain from `init` using config.seed as the generator seed.
// Throws SamplerAbort when the log density is not finite at init or after
// too many consecutive divergent iterations.
PosteriorChain nuts_sample(const LogDensityFn& target, const HMCConfig& config, const Vector& init);

using InitSampler = std::function<Vector(std::mt19937_64&)>;

// Runs config.chains chains, chain c seeded with seed + c. Each chain starts
// from `init` when given, otherwise from draws of `init_sampler` until the
// log density is finite (at most config.init_tries draws).
std::vector<PosteriorChain> run_chains(const LogDensityFn& target, const HMCConfig& config,
                                       const InitSampler& init_sampler, const std::optional<Vector>& init = {});

struct Diagnostics {
  std::vector<std::optional<double>> rhat;  // nullopt for constant coordinates
  std::vector<std::optional<double>> ess;
  int divergences = 0;
  int chains = 0;
  int draws_per_chain = 0;

  // Largest defined R-hat, nullopt when none is defined.
  std::optional<double> max_rhat() const;
  std::optional<double> min_ess() const;
};

// Each inner vector is one chain for one coordinate.
std::optional<double> split_rhat(const std::vector<Vector>& chains);
std::optional<double> ess_bulk(const std::vector<Vector>& chains);

Diagnostics diagnose(std::span<const PosteriorChain> chains);

}  // namespace qbd
