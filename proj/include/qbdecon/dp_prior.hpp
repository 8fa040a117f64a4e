#pragma once

// Truncated stick-breaking Dirichlet-process prior over Gaussian mixtures
// with a shared covariance, and the smooth bijection to the unconstrained
// coordinates the sampler moves in.
//
// Unconstrained layout for K components in dimension d:
//   [0, K-1)              stick logits, v_j = logistic(z_j)
//   [K-1, K-1+K*d)        atoms, component-major
//   [K-1+K*d, end)        d == 1: log sigma^2
//                         d > 1 : log of the d marginal standard deviations,
//                                 then atanh of the d(d-1)/2 canonical partial
//                                 correlations in row-major order of the
//                                 strictly lower triangle.

#include "qbdecon/mixture.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <variant>

namespace qbd {

struct InverseGammaPrior {
  double shape = 2.0;
  double scale = 1.0;
};

// Sigma = D C D with log D_ii ~ N(mean, sd^2) and C ~ LKJ(eta).
struct LkjLogNormalPrior {
  double eta = 2.0;
  double log_scale_mean = 0.0;
  double log_scale_sd = 1.0;
};

using CovariancePrior = std::variant<InverseGammaPrior, LkjLogNormalPrior>;

struct PriorSpec {
  int truncation = 30;
  double concentration = 1.0;
  Vector base_mean;
  Matrix base_cov;
  CovariancePrior cov_prior;

  Eigen::Index dim() const { return base_mean.size(); }
  void validate() const;

  static PriorSpec defaults(Eigen::Index dim);
};

// Base measure set to the sample mean and covariance of `data` (n x d).
PriorSpec empirical_bayes(PriorSpec spec, const Matrix& data);

class StateLayout {
 public:
  StateLayout(Eigen::Index components, Eigen::Index dim);

  Eigen::Index components() const { return components_; }
  Eigen::Index dim() const { return dim_; }
  Eigen::Index stick_count() const { return components_ - 1; }
  Eigen::Index atom_offset() const { return components_ - 1; }
  Eigen::Index cov_offset() const { return atom_offset() + components_ * dim_; }
  Eigen::Index cov_count() const { return dim_ == 1 ? 1 : dim_ + dim_ * (dim_ - 1) / 2; }
  Eigen::Index size() const { return cov_offset() + cov_count(); }

  static StateLayout of(const PriorSpec& spec) { return {spec.truncation, spec.dim()}; }

 private:
  Eigen::Index components_;
  Eigen::Index dim_;
};

struct UnconstrainedState {
  StateLayout layout;
  Vector coords;
};

// p_1 = v_1, p_j = v_j prod_{i<j}(1 - v_i), last component takes the rest.
Vector stick_weights(std::span<const double> sticks);

UnconstrainedState sample_prior_state(const PriorSpec& spec, std::mt19937_64& rng);
MixtureParams sample_prior(const PriorSpec& spec, std::mt19937_64& rng);
MixtureParams sample_prior(const PriorSpec& spec, std::uint64_t seed);

MixtureParams constrain(const UnconstrainedState& state, const PriorSpec& spec);
UnconstrainedState unconstrain(const MixtureParams& params, const PriorSpec& spec);

// Log density of the prior pushed forward to unconstrained coordinates,
// Jacobians included. Fills `grad` (resized) when non-null.
double log_prior(const UnconstrainedState& state, const PriorSpec& spec, Vector* grad = nullptr);

// Chain rule from d f / d(constrained params) to d f / d(unconstrained state).
Vector pullback_gradient(const UnconstrainedState& state, const PriorSpec& spec,
                         const MixtureGradient& grad);

}  // namespace qbd
