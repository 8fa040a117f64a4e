#pragma once

// Finite Gaussian mixtures with a shared covariance: densities,
// characteristic functions and the log-CF derivatives the quasi-likelihoods
// consume.

#include "qbdecon/error.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <complex>
#include <vector>

namespace qbd {

using Complex = std::complex<double>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

inline constexpr double kDefaultCfFloor = 1e-12;
inline constexpr double kSimplexTolerance = 1e-12;

// sum_j p_j N(mu_j, Sigma). Immutable once built; the constructor checks
// the simplex, finiteness and positive definiteness.
class MixtureParams {
 public:
  // atoms is K x d (one component per row); covariance is d x d.
  MixtureParams(Vector weights, Matrix atoms, Matrix covariance);

  static MixtureParams univariate(const std::vector<double>& weights,
                                  const std::vector<double>& atoms, double variance);

  Eigen::Index components() const { return weights_.size(); }
  Eigen::Index dim() const { return atoms_.cols(); }

  const Vector& weights() const { return weights_; }
  const Matrix& atoms() const { return atoms_; }
  const Matrix& covariance() const { return covariance_; }
  // Lower Cholesky factor of the covariance.
  const Matrix& cholesky() const { return chol_; }
  double log_det_covariance() const { return log_det_; }

  MixtureParams permuted(const std::vector<int>& order) const;

  friend bool operator==(const MixtureParams& a, const MixtureParams& b) {
    return a.weights_ == b.weights_ && a.atoms_ == b.atoms_ && a.covariance_ == b.covariance_;
  }

 private:
  Vector weights_;
  Matrix atoms_;
  Matrix covariance_;
  Matrix chol_;
  double log_det_ = 0.0;
};

// Partial derivatives of a scalar with respect to the constrained mixture
// parameters. `covariance` holds d f / d Sigma_{lm} treating all d*d
// entries as free; callers symmetrize when pulling back.
struct MixtureGradient {
  Vector weights;
  Matrix atoms;
  Matrix covariance;

  static MixtureGradient zeros(Eigen::Index components, Eigen::Index dim);
};

double density(const MixtureParams& params, const Vector& x);
double log_density(const MixtureParams& params, const Vector& x);

Complex cf(const MixtureParams& params, const Vector& t);

// Gradient of log phi computed as grad(phi)/phi. Throws DegeneratePoint when
// the mixing part |sum_j p_j exp(i t'mu_j)| is below `floor`; the Gaussian
// envelope cancels in the ratio and is not floored.
ComplexVector cf_log_grad(const MixtureParams& params, const Vector& t,
                          double floor = kDefaultCfFloor);

// (log phi)''(s) for a univariate mixture, as phi''/phi - (phi'/phi)^2.
Complex cf_log_hess_1d(const MixtureParams& params, double s, double floor = kDefaultCfFloor);

Vector mixture_mean(const MixtureParams& params);
MixtureParams demean(const MixtureParams& params);

// Trigonometric table of t_n' mu_j over nodes (rows) and components (cols),
// filled through the dispatched sincos kernel.
struct PhaseTable {
  Matrix cos;
  Matrix sin;
};
PhaseTable phase_table(const Matrix& nodes, const Matrix& atoms);
PhaseTable phase_table_1d(const Vector& points, const Vector& atoms);

void to_json(nlohmann::json& j, const MixtureParams& params);
MixtureParams mixture_from_json(const nlohmann::json& j);

}  // namespace qbd
