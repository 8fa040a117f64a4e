#include "qbdecon/dp_prior.hpp"

#include <cmath>
#include <numbers>

namespace qbd {
namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// v = logistic(z) and 1 - v, each computed without cancellation.
std::pair<double, double> logistic_pair(double z) {
  return {1.0 / (1.0 + std::exp(-z)), 1.0 / (1.0 + std::exp(z))};
}

// log(1 - tanh(u)^2) = log 4 - 2 (|u| + log1p(exp(-2|u|)))
double log_sech2(double u) {
  const double a = std::abs(u);
  return std::log(4.0) - 2.0 * (a + std::log1p(std::exp(-2.0 * a)));
}

Eigen::Index cpc_index(Eigen::Index row, Eigen::Index col) { return row * (row - 1) / 2 + col; }

double beta_shape_for_column(const LkjLogNormalPrior& lkj, Eigen::Index d, Eigen::Index col) {
  return lkj.eta + 0.5 * static_cast<double>(d - 2 - col);
}

// Cholesky factor of the correlation matrix from atanh-transformed CPCs.
Matrix correlation_cholesky(std::span<const double> cpc_raw, Eigen::Index d) {
  Matrix chol = Matrix::Zero(d, d);
  chol(0, 0) = 1.0;
  for (Eigen::Index i = 1; i < d; ++i) {
    double used = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double y = std::tanh(cpc_raw[cpc_index(i, j)]);
      chol(i, j) = y * std::sqrt(std::max(0.0, 1.0 - used));
      used += chol(i, j) * chol(i, j);
    }
    chol(i, i) = std::sqrt(std::max(0.0, 1.0 - used));
  }
  return chol;
}

void check_state(const UnconstrainedState& state, const PriorSpec& spec) {
  if (state.layout.components() != spec.truncation || state.layout.dim() != spec.dim()) {
    throw InvalidParameter("state layout does not match the prior");
  }
  if (state.coords.size() != state.layout.size()) {
    throw InvalidParameter("state has the wrong number of coordinates");
  }
}

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

}  // namespace

void PriorSpec::validate() const {
  if (truncation < 1) throw InvalidParameter("truncation level must be >= 1");
  if (!(concentration > 0.0) || !std::isfinite(concentration)) {
    throw InvalidParameter("concentration must be positive");
  }
  const Eigen::Index d = dim();
  if (d < 1) throw InvalidParameter("base mean must be non-empty");
  if (base_cov.rows() != d || base_cov.cols() != d) throw InvalidParameter("base covariance must be d x d");
  if (!base_mean.allFinite() || !base_cov.allFinite()) throw InvalidParameter("base measure must be finite");
  Eigen::LLT<Matrix> llt(base_cov);
  if (llt.info() != Eigen::Success) throw InvalidParameter("base covariance is not positive definite");
  if (const auto* ig = std::get_if<InverseGammaPrior>(&cov_prior)) {
    if (d != 1) throw InvalidParameter("inverse-gamma covariance prior needs d = 1");
    if (!(ig->shape > 0.0) || !(ig->scale > 0.0)) throw InvalidParameter("inverse-gamma hyperparameters must be positive");
  } else {
    const auto& lkj = std::get<LkjLogNormalPrior>(cov_prior);
    if (d < 2) throw InvalidParameter("LKJ covariance prior needs d >= 2");
    if (!(lkj.eta > 0.0) || !(lkj.log_scale_sd > 0.0) || !std::isfinite(lkj.log_scale_mean)) {
      throw InvalidParameter("LKJ/log-normal hyperparameters must be positive");
    }
  }
}

PriorSpec PriorSpec::defaults(Eigen::Index dim) {
  PriorSpec spec;
  spec.base_mean = Vector::Zero(dim);
  spec.base_cov = 4.0 * Matrix::Identity(dim, dim);
  if (dim == 1) {
    spec.cov_prior = InverseGammaPrior{};
  } else {
    spec.cov_prior = LkjLogNormalPrior{};
  }
  return spec;
}

PriorSpec empirical_bayes(PriorSpec spec, const Matrix& data) {
  if (data.rows() < 2 || data.cols() != spec.dim()) {
    throw InvalidParameter("empirical Bayes needs at least two d-dimensional observations");
  }
  const Vector mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - mean.transpose();
  spec.base_mean = mean;
  spec.base_cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  spec.validate();
  return spec;
}

StateLayout::StateLayout(Eigen::Index components, Eigen::Index dim) : components_(components), dim_(dim) {
  if (components < 1 || dim < 1) {
    throw InvalidParameter("state layout needs K >= 1 and d >= 1");
  }
}

Vector stick_weights(std::span<const double> sticks) {
  const auto k = static_cast<Eigen::Index>(sticks.size()) + 1;
  Vector weights(k);
  double rest = 1.0;
  for (Eigen::Index j = 0; j + 1 < k; ++j) {
    const double v = sticks[static_cast<std::size_t>(j)];
    if (!(v > 0.0 && v < 1.0)) {
      throw DomainError("stick proportions must lie strictly inside (0, 1)");
    }
    weights(j) = rest * v;
    rest *= 1.0 - v;
  }
  weights(k - 1) = rest;
  return weights;
}

UnconstrainedState sample_prior_state(const PriorSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const StateLayout layout = StateLayout::of(spec);
  const Eigen::Index k = layout.components();
  const Eigen::Index d = layout.dim();
  Vector coords(layout.size());

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < layout.stick_count(); ++j) {
    // v = 1 - U^(1/beta) ~ Beta(1, beta); logit computed in log space.
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    const double log_rest = std::log(u) / spec.concentration;
    const double log_v = std::log(-std::expm1(log_rest));
    coords(j) = log_v - log_rest;
  }

  const Matrix base_chol = Eigen::LLT<Matrix>(spec.base_cov).matrixL();
  for (Eigen::Index j = 0; j < k; ++j) {
    Vector xi(d);
    for (Eigen::Index l = 0; l < d; ++l) xi(l) = normal(rng);
    const Vector atom = spec.base_mean + base_chol * xi;
    coords.segment(layout.atom_offset() + j * d, d) = atom;
  }

  const Eigen::Index off = layout.cov_offset();
  if (const auto* ig = std::get_if<InverseGammaPrior>(&spec.cov_prior)) {
    std::gamma_distribution<double> gamma(ig->shape, 1.0 / ig->scale);
    double g = gamma(rng);
    while (!(g > 0.0)) g = gamma(rng);
    coords(off) = -std::log(g);
  } else {
    const auto& lkj = std::get<LkjLogNormalPrior>(spec.cov_prior);
    for (Eigen::Index l = 0; l < d; ++l) {
      coords(off + l) = lkj.log_scale_mean + lkj.log_scale_sd * normal(rng);
    }
    for (Eigen::Index i = 1; i < d; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        const double b = beta_shape_for_column(lkj, d, j);
        std::gamma_distribution<double> gamma(b, 1.0);
        double g1 = gamma(rng);
        double g2 = gamma(rng);
        while (!(g1 > 0.0)) g1 = gamma(rng);
        while (!(g2 > 0.0)) g2 = gamma(rng);
        coords(off + d + cpc_index(i, j)) = 0.5 * (std::log(g1) - std::log(g2));
      }
    }
  }
  return {layout, std::move(coords)};
}

MixtureParams sample_prior(const PriorSpec& spec, std::mt19937_64& rng) {
  return constrain(sample_prior_state(spec, rng), spec);
}

MixtureParams sample_prior(const PriorSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_prior(spec, rng);
}

MixtureParams constrain(const UnconstrainedState& state, const PriorSpec& spec) {
  check_state(state, spec);
  const StateLayout& layout = state.layout;
  const Eigen::Index k = layout.components();
  const Eigen::Index d = layout.dim();
  const Vector& z = state.coords;

  Vector weights(k);
  double rest = 1.0;
  for (Eigen::Index j = 0; j + 1 < k; ++j) {
    const auto [v, onem] = logistic_pair(z(j));
    weights(j) = rest * v;
    rest *= onem;
  }
  weights(k - 1) = rest;

  Matrix atoms(k, d);
  for (Eigen::Index j = 0; j < k; ++j) {
    atoms.row(j) = z.segment(layout.atom_offset() + j * d, d).transpose();
  }

  const Eigen::Index off = layout.cov_offset();
  Matrix cov(d, d);
  if (d == 1) {
    cov(0, 0) = std::exp(z(off));
  } else {
    const Vector scales = z.segment(off, d).array().exp();
    const Matrix chol = correlation_cholesky({z.data() + off + d, static_cast<std::size_t>(d * (d - 1) / 2)}, d);
    const Matrix m = scales.asDiagonal() * chol;
    cov = m * m.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
  }
  return {std::move(weights), std::move(atoms), std::move(cov)};
}

UnconstrainedState unconstrain(const MixtureParams& params, const PriorSpec& spec) {
  const StateLayout layout = StateLayout::of(spec);
  if (params.components() != layout.components() || params.dim() != layout.dim()) {
    throw InvalidParameter("mixture shape does not match the prior");
  }
  const Eigen::Index k = layout.components();
  const Eigen::Index d = layout.dim();
  const Vector& w = params.weights();
  if ((w.array() <= 0.0).any()) {
    throw DomainError("zero weight: stick-breaking map is not invertible");
  }
  Vector coords(layout.size());
  // suffix(j) = sum_{i >= j} p_i
  Vector suffix(k + 1);
  suffix(k) = 0.0;
  for (Eigen::Index j = k - 1; j >= 0; --j) suffix(j) = suffix(j + 1) + w(j);
  for (Eigen::Index j = 0; j + 1 < k; ++j) {
    coords(j) = std::log(w(j)) - std::log(suffix(j + 1));
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    coords.segment(layout.atom_offset() + j * d, d) = params.atoms().row(j).transpose();
  }
  const Eigen::Index off = layout.cov_offset();
  if (d == 1) {
    coords(off) = std::log(params.covariance()(0, 0));
  } else {
    const Vector sd = params.covariance().diagonal().array().sqrt();
    const Vector inv = sd.cwiseInverse();
    const Matrix corr = inv.asDiagonal() * params.covariance() * inv.asDiagonal();
    const Matrix chol = Eigen::LLT<Matrix>(corr).matrixL();
    coords.segment(off, d) = sd.array().log();
    for (Eigen::Index i = 1; i < d; ++i) {
      double used = 0.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        const double y = chol(i, j) / std::sqrt(std::max(1e-300, 1.0 - used));
        coords(off + d + cpc_index(i, j)) = std::atanh(std::clamp(y, -1.0 + 1e-16, 1.0 - 1e-16));
        used += chol(i, j) * chol(i, j);
      }
    }
  }
  return {layout, std::move(coords)};
}

double log_prior(const UnconstrainedState& state, const PriorSpec& spec, Vector* grad) {
  check_state(state, spec);
  const StateLayout& layout = state.layout;
  const Eigen::Index k = layout.components();
  const Eigen::Index d = layout.dim();
  const Vector& z = state.coords;
  if (grad != nullptr) grad->setZero(layout.size());

  const double beta = spec.concentration;
  double lp = 0.0;
  // Beta(1, beta) on each stick times the logistic Jacobian v (1 - v):
  // log beta + beta log(1 - v) + log v.
  for (Eigen::Index j = 0; j < layout.stick_count(); ++j) {
    lp += std::log(beta) - beta * softplus(z(j)) - softplus(-z(j));
    if (grad != nullptr) {
      const auto [v, onem] = logistic_pair(z(j));
      (*grad)(j) = onem - beta * v;
    }
  }

  Eigen::LLT<Matrix> base(spec.base_cov);
  const Matrix base_chol = base.matrixL();
  const double base_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                           base_chol.diagonal().array().log().sum();
  for (Eigen::Index j = 0; j < k; ++j) {
    const Vector diff = z.segment(layout.atom_offset() + j * d, d) - spec.base_mean;
    const Vector white = base_chol.triangularView<Eigen::Lower>().solve(diff);
    lp += base_norm - 0.5 * white.squaredNorm();
    if (grad != nullptr) {
      grad->segment(layout.atom_offset() + j * d, d) = -base.solve(diff);
    }
  }

  const Eigen::Index off = layout.cov_offset();
  if (const auto* ig = std::get_if<InverseGammaPrior>(&spec.cov_prior)) {
    // sigma^2 = exp(c): a log b - lgamma(a) - a c - b exp(-c)
    const double c = z(off);
    lp += ig->shape * std::log(ig->scale) - std::lgamma(ig->shape) - ig->shape * c - ig->scale * std::exp(-c);
    if (grad != nullptr) (*grad)(off) = -ig->shape + ig->scale * std::exp(-c);
  } else {
    const auto& lkj = std::get<LkjLogNormalPrior>(spec.cov_prior);
    const double s2 = lkj.log_scale_sd * lkj.log_scale_sd;
    for (Eigen::Index l = 0; l < d; ++l) {
      const double x = z(off + l) - lkj.log_scale_mean;
      lp += -0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * x * x / s2;
      if (grad != nullptr) (*grad)(off + l) = -x / s2;
    }
    // Under LKJ(eta) the CPC in column j is an independent Beta(b_j, b_j) on
    // (-1, 1) with b_j = eta + (d - 2 - j) / 2; with y = tanh(u) the density
    // in u is (1 - y^2)^b_j / (2^(2 b_j - 1) B(b_j, b_j)).
    for (Eigen::Index i = 1; i < d; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        const double b = beta_shape_for_column(lkj, d, j);
        const double u = z(off + d + cpc_index(i, j));
        lp += b * log_sech2(u) - (2.0 * b - 1.0) * std::log(2.0) - log_beta_fn(b, b);
        if (grad != nullptr) (*grad)(off + d + cpc_index(i, j)) = -2.0 * b * std::tanh(u);
      }
    }
  }
  return lp;
}

Vector pullback_gradient(const UnconstrainedState& state, const PriorSpec& spec, const MixtureGradient& grad) {
  check_state(state, spec);
  const StateLayout& layout = state.layout;
  const Eigen::Index k = layout.components();
  const Eigen::Index d = layout.dim();
  const Vector& z = state.coords;
  Vector out = Vector::Zero(layout.size());

  // Weights: d f/d z_i = (1 - v_i) g_i p_i - v_i sum_{j>i} g_j p_j.
  Vector weights(k);
  Vector v(std::max<Eigen::Index>(k - 1, 0));
  Vector onem(std::max<Eigen::Index>(k - 1, 0));
  double rest = 1.0;
  for (Eigen::Index j = 0; j + 1 < k; ++j) {
    std::tie(v(j), onem(j)) = logistic_pair(z(j));
    weights(j) = rest * v(j);
    rest *= onem(j);
  }
  weights(k - 1) = rest;
  double tail = grad.weights(k - 1) * weights(k - 1);
  for (Eigen::Index i = k - 2; i >= 0; --i) {
    const double gp = grad.weights(i) * weights(i);
    out(i) = onem(i) * gp - v(i) * tail;
    tail += gp;
  }

  for (Eigen::Index j = 0; j < k; ++j) {
    out.segment(layout.atom_offset() + j * d, d) = grad.atoms.row(j).transpose();
  }

  const Eigen::Index off = layout.cov_offset();
  if (d == 1) {
    out(off) = std::exp(z(off)) * grad.covariance(0, 0);
    return out;
  }

  const Vector scales = z.segment(off, d).array().exp();
  const std::span<const double> raw{z.data() + off + d, static_cast<std::size_t>(d * (d - 1) / 2)};
  const Matrix chol = correlation_cholesky(raw, d);
  const Matrix m = scales.asDiagonal() * chol;
  const Matrix g_sym = 0.5 * (grad.covariance + grad.covariance.transpose());
  // Sigma = M M' => d f / d M = 2 G M (lower triangle is what varies).
  const Matrix g_m = 2.0 * g_sym * m;
  for (Eigen::Index i = 0; i < d; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) acc += g_m(i, j) * chol(i, j);
    out(off + i) = scales(i) * acc;
  }
  // Reverse pass through the CPC construction, row by row.
  for (Eigen::Index i = 1; i < d; ++i) {
    // g_s is the adjoint of the running sum of squares S.
    double g_s = -scales(i) * g_m(i, i) / (2.0 * std::max(chol(i, i), 1e-300));
    Vector prefix = Vector::Zero(i + 1);
    for (Eigen::Index j = 0; j < i; ++j) prefix(j + 1) = prefix(j) + chol(i, j) * chol(i, j);
    for (Eigen::Index j = i - 1; j >= 0; --j) {
      const double root = std::sqrt(std::max(0.0, 1.0 - prefix(j)));
      const double y = std::tanh(raw[static_cast<std::size_t>(cpc_index(i, j))]);
      const double adj = scales(i) * g_m(i, j) + 2.0 * chol(i, j) * g_s;
      g_s += adj * (-y / (2.0 * std::max(root, 1e-300)));
      const double g_y = adj * root;
      out(off + d + cpc_index(i, j)) = g_y * (1.0 - y * y);
    }
  }
  return out;
}

}  // namespace qbd
