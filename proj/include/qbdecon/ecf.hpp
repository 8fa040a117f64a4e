#pragma once

// Empirical characteristic functions: plain, moment-weighted, and the
// phi^2-premultiplied log-Hessian used by the multi-factor restrictions.

#include "qbdecon/mixture.hpp"

#include <utility>
#include <vector>

namespace qbd {

// n x d observations, one row each.
class Dataset {
 public:
  explicit Dataset(Matrix observations);

  Eigen::Index size() const { return obs_.rows(); }
  Eigen::Index dim() const { return obs_.cols(); }
  const Matrix& observations() const { return obs_; }

 private:
  Matrix obs_;
};

// Upper-triangular index pairs (l1 <= l2), row-major: (0,0),(0,1),...,(1,1),...
std::vector<std::pair<Eigen::Index, Eigen::Index>> upper_pairs(Eigen::Index dim);
inline Eigen::Index pair_count(Eigen::Index dim) { return dim * (dim + 1) / 2; }

enum EcfParts : unsigned {
  kEcfPlain = 1u,
  kEcfWeighted = 2u,
  kEcfHess = 4u,
};

// Estimator values at fixed nodes, stored positionally. Immutable once built.
struct ECFCache {
  Matrix nodes;            // N x d
  ComplexVector phi;       // N
  ComplexMatrix weighted;  // N x d*, empty unless requested
  ComplexMatrix hess;      // N x d(d+1)/2 in upper_pairs order, empty unless requested

  Eigen::Index size() const { return nodes.rows(); }
  bool has_weighted() const { return weighted.size() > 0; }
  bool has_hess() const { return hess.size() > 0; }
  ComplexMatrix hess_at(Eigen::Index node) const;
};

// (1/n) sum_j exp(i t'Z_j)
Complex ecf_eval(const Dataset& data, const Vector& t);

// (1/n) sum_j i W_j exp(i t'Z_j)
ComplexVector ecf_weighted(const Dataset& w_data, const Dataset& z_data, const Vector& t);

// phi_hat(t)^2 * Hessian of log phi_hat(t), evaluated without division:
// -phi_hat(t) E_n[Y Y' e^{it'Y}] + E_n[Y e^{it'Y}] E_n[Y e^{it'Y}]'
ComplexMatrix ecf_hess_combo(const Dataset& data, const Vector& t);

// Evaluates the requested parts at every row of `nodes`. `w_data` is
// required for kEcfWeighted.
ECFCache build_cache(const Dataset& z_data, const Matrix& nodes, unsigned parts,
                     const Dataset* w_data = nullptr);

}  // namespace qbd
