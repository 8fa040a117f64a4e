#pragma once

// Seeded synthetic data for the three models with known latent densities.

#include "qbdecon/ecf.hpp"
#include "qbdecon/mixture.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace qbd {

enum class ModelKind { Deconv, RepMeas, Factor };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// A latent or error law. Gaussian and Laplace laws act coordinatewise and
// independently in dimension d; a mixture carries its own dimension.
struct DistributionSpec {
  enum class Kind { Mixture, Gaussian, Laplace };

  Kind kind = Kind::Gaussian;
  double location = 0.0;
  double scale = 1.0;  // Gaussian sd or Laplace b
  std::optional<MixtureParams> mixture;

  static DistributionSpec gaussian(double sd, double location = 0.0);
  static DistributionSpec laplace(double b, double location = 0.0);
  static DistributionSpec of(MixtureParams m);

  void validate() const;
  // Mixture dimension, or `fallback` for the coordinatewise laws.
  Eigen::Index dim(Eigen::Index fallback) const;
  Vector mean(Eigen::Index d) const;
  // A copy whose population mean is zero.
  DistributionSpec centered() const;

  Matrix sample(std::mt19937_64& rng, Eigen::Index count, Eigen::Index d) const;
  double density(const Vector& x) const;
  Complex cf(const Vector& t) const;
};

void to_json(nlohmann::json& j, const DistributionSpec& spec);
DistributionSpec distribution_from_json(const nlohmann::json& j);

// Decay class of an error CF: mild means |phi(t)| ~ |t|^-zeta, severe means
// exp(-R |t|^zeta).
struct Regime {
  bool severe = false;
  double zeta = 2.0;
  std::string label() const { return severe ? "severe" : "mild"; }
};

Regime ill_posedness(const DistributionSpec& error);

struct ScenarioSpec {
  ModelKind model = ModelKind::Deconv;
  Eigen::Index dim = 1;                  // observation dimension (deconv, repmeas)
  std::vector<DistributionSpec> latent;  // one law, or one per factor
  std::vector<DistributionSpec> errors;  // deconv: 1, repmeas: 2, factor: unused
  Matrix loadings;                       // factor: L x K
  std::vector<int> n = {1000};
  std::vector<std::uint64_t> seeds = {1};
  int aux_size = 0;  // deconv auxiliary error sample; 0 means m = n
  int target = 0;    // factor whose truth is reported (0-based)

  void validate() const;

  // Y = X + eps, X ~ 0.5 N(-2,1) + 0.5 N(2,1), eps ~ Laplace(b).
  static ScenarioSpec bimodal_deconv(double laplace_b);
  // Repeated measurements written as a three-factor model, A = [[1,1,0],[1,0,1]],
  // X ~ 0.5 N(-2,1) + 0.5 N(2,1), both errors N(0,1).
  static ScenarioSpec bimodal_factor();
};

void to_json(nlohmann::json& j, const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);

using DensityFn = std::function<double(const Vector&)>;

struct DeconvSample {
  Dataset y;
  Dataset eps;
  DensityFn truth;
  Regime regime;
};

struct RepMeasSample {
  Dataset y1;
  Dataset y2;
  DensityFn truth;
};

struct FactorSample {
  Dataset y;
  Matrix factors;                // n x K, demeaned in sample
  std::vector<DensityFn> truths;  // population laws shifted to mean zero
  Vector shifts;                 // population means removed per factor
  std::vector<std::string> warnings;
};

DeconvSample gen_deconv(const ScenarioSpec& spec, int n, std::uint64_t seed);
RepMeasSample gen_repmeas(const ScenarioSpec& spec, int n, std::uint64_t seed);
FactorSample gen_factor(const ScenarioSpec& spec, int n, std::uint64_t seed);

}  // namespace qbd
