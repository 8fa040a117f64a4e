#pragma once

// Quasi negative log-likelihoods for deconvolution, repeated measurements and
// the multi-factor model, with analytic gradients in the constrained mixture
// parameters, plus the Posterior that binds one of them to the prior.

#include "qbdecon/dp_prior.hpp"
#include "qbdecon/ecf.hpp"
#include "qbdecon/quadrature.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>

namespace qbd {

struct QMatrices {
  Matrix q;      // L(L+1)/2 x K, column k = vech of A_k A_k' in upper_pairs order
  Matrix qstar;  // K x L(L+1)/2, (Q'Q)^{-1} Q'
};

QMatrices build_Q(const Matrix& loadings);

// An objective maps K-block candidates to (n/2) * squared residual norm.
// evaluate() returns +inf when a candidate CF hits the floor at some node;
// gradients are only written for finite values.
class Objective {
 public:
  Objective() = default;
  Objective(const Objective& other) : floor(other.floor), breaches_(other.breaches_.load()) {}
  Objective& operator=(const Objective&) = delete;
  virtual ~Objective() = default;

  virtual Eigen::Index block_count() const { return 1; }
  virtual Eigen::Index candidate_dim() const = 0;
  virtual double evaluate(std::span<const MixtureParams> blocks,
                          std::span<MixtureGradient> grads) const = 0;

  double value(const MixtureParams& params) const;
  double value(std::span<const MixtureParams> blocks) const;

  std::size_t floor_breaches() const { return breaches_.load(); }
  void reset_breaches() const { breaches_.store(0); }

  double floor = kDefaultCfFloor;

 protected:
  double breach() const;

 private:
  mutable std::atomic<std::size_t> breaches_{0};
};

using CfFunction = std::function<Complex(const Vector&)>;

class DeconvModel final : public Objective {
 public:
  DeconvModel(ECFCache y, ECFCache eps, NodeSet quad, double n);

  static DeconvModel from_data(const Dataset& y, const Dataset& eps, const BoxQuadrature& quad);
  // Test-only: caches filled with exact CFs.
  static DeconvModel population(const CfFunction& phi_y, const CfFunction& phi_eps,
                                const BoxQuadrature& quad, double n);

  Eigen::Index candidate_dim() const override { return cache_y_.nodes.cols(); }
  double evaluate(std::span<const MixtureParams> blocks,
                  std::span<MixtureGradient> grads) const override;

  const NodeSet& quadrature() const { return quad_; }
  double n() const { return n_; }

 private:
  ECFCache cache_y_;
  ECFCache cache_eps_;
  NodeSet quad_;
  double n_;
};

struct RepMeasOptions {
  double radius = 2.0;
  int per_dim = 0;       // box nodes per axis; 0 -> default for d
  int sphere_count = 0;  // 0 -> default for d
  int line_count = 0;
  std::optional<bool> boundary;  // unset -> on for d > 1
  bool symmetrized = false;
};

class RepMeasModel final : public Objective {
 public:
  // forward: phi = phi_hat_{Y2}, weighted = E_n[i Y1 e^{it'Y2}].
  // swapped (optional): the same with the roles of Y1 and Y2 exchanged.
  RepMeasModel(ECFCache forward, std::optional<ECFCache> swapped, NodeSet quad, bool boundary,
               double n);

  static RepMeasModel from_data(const Dataset& y1, const Dataset& y2, const RepMeasOptions& options);
  // Test-only: Y_j = X + eps_j with the three given mixtures.
  static RepMeasModel population(const MixtureParams& x, const MixtureParams& eps1,
                                 const MixtureParams& eps2, const RepMeasOptions& options, double n);

  Eigen::Index candidate_dim() const override { return forward_.nodes.cols(); }
  double evaluate(std::span<const MixtureParams> blocks,
                  std::span<MixtureGradient> grads) const override;

  bool boundary() const { return boundary_; }
  bool symmetrized() const { return swapped_.has_value(); }
  const NodeSet& quadrature() const { return quad_; }
  double n() const { return n_; }

  static NodeSet metric_nodes(Eigen::Index dim, const RepMeasOptions& options, bool& boundary);

 private:
  ECFCache forward_;
  std::optional<ECFCache> swapped_;
  NodeSet quad_;
  bool boundary_;
  double n_;
};

inline constexpr int kJointTarget = -1;

class FactorModel final : public Objective {
 public:
  // phi: N values of phi_hat_Y; hess: N x L(L+1)/2 premultiplied Hessian
  // combos; target is a 0-based factor index or kJointTarget.
  FactorModel(NodeSet quad, ComplexVector phi, ComplexMatrix hess, Matrix loadings, int target,
              double n);

  static FactorModel from_data(const Dataset& y, const Matrix& loadings, int target,
                               const BoxQuadrature& quad);
  // Test-only: Y = A X with independent univariate mixture factors.
  static FactorModel population(const std::vector<MixtureParams>& factors, const Matrix& loadings,
                                int target, const BoxQuadrature& quad, double n);

  Eigen::Index block_count() const override { return target_ == kJointTarget ? loadings_.cols() : 1; }
  Eigen::Index candidate_dim() const override { return 1; }
  double evaluate(std::span<const MixtureParams> blocks,
                  std::span<MixtureGradient> grads) const override;

  // Premultiplied residual per node: one column for a single factor,
  // L(L+1)/2 columns for the joint form.
  ComplexMatrix residual(std::span<const MixtureParams> blocks) const;

  const QMatrices& q() const { return q_; }
  const Matrix& loadings() const { return loadings_; }
  int target() const { return target_; }
  const NodeSet& quadrature() const { return quad_; }
  const ComplexVector& phi_hat() const { return phi_; }
  const ComplexMatrix& hess_combo() const { return hess_; }
  double n() const { return n_; }

 private:
  struct Projection {
    Vector unique;                    // distinct values of t'A_k
    std::vector<Eigen::Index> index;  // node -> position in unique
  };

  NodeSet quad_;
  ComplexVector phi_;
  ComplexMatrix hess_;
  ComplexVector phi_sq_;
  Matrix loadings_;
  QMatrices q_;
  int target_;
  double n_;
  std::vector<Projection> projections_;
  ComplexVector target_combo_;  // Q*_k applied to hess, single-factor only
};

// (Y1 + Y2)/2 and (Y1 - Y2)/2.
std::pair<Dataset, Dataset> symmetrize_to_deconv(const Dataset& y1, const Dataset& y2);

// Quasi-posterior on the concatenated unconstrained state of all blocks.
class Posterior {
 public:
  Posterior(std::shared_ptr<const Objective> objective, PriorSpec spec);

  Eigen::Index dim() const { return layout_.size() * objective_->block_count(); }
  const StateLayout& layout() const { return layout_; }
  const PriorSpec& prior() const { return spec_; }
  const Objective& objective() const { return *objective_; }

  std::vector<MixtureParams> constrain(const Vector& coords) const;
  Vector unconstrain(std::span<const MixtureParams> blocks) const;

  // objective - log prior; +inf on a floor breach. `grad` is resized and
  // filled when non-null and the value is finite.
  double neg_loglik_grad(const Vector& coords, Vector* grad) const;
  double log_density(const Vector& coords, Vector* grad) const;

  Vector sample_prior(std::mt19937_64& rng) const;

 private:
  std::shared_ptr<const Objective> objective_;
  PriorSpec spec_;
  StateLayout layout_;
};

}  // namespace qbd
