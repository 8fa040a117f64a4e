#include "qbdecon/quasi_likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qbd {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr Complex kI{0.0, 1.0};

ComplexMatrix exp_table(const PhaseTable& tab) {
  ComplexMatrix e(tab.cos.rows(), tab.cos.cols());
  e.real() = tab.cos;
  e.imag() = tab.sin;
  return e;
}

// exp(-t' Sigma t / 2) per node.
Vector envelope(const Matrix& nodes, const Matrix& cov) {
  return (-0.5 * (nodes * cov).cwiseProduct(nodes).rowwise().sum()).array().exp();
}

// grad phi(t) without dividing by phi.
ComplexVector cf_grad(const MixtureParams& params, const Vector& t) {
  const double env = std::exp(-0.5 * t.dot(params.covariance() * t));
  const Vector phase = params.atoms() * t;
  Complex mixing{0.0, 0.0};
  ComplexVector grad = ComplexVector::Zero(params.dim());
  for (Eigen::Index j = 0; j < phase.size(); ++j) {
    const Complex e = params.weights()(j) * std::polar(1.0, phase(j));
    mixing += e;
    grad += (kI * e) * params.atoms().row(j).transpose().cast<Complex>();
  }
  grad -= mixing * (params.covariance() * t).cast<Complex>();
  return env * grad;
}

void check_blocks(std::span<const MixtureParams> blocks, Eigen::Index count, Eigen::Index dim) {
  if (static_cast<Eigen::Index>(blocks.size()) != count) {
    throw InvalidParameter("objective expects " + std::to_string(count) + " candidate block(s)");
  }
  for (const auto& b : blocks) {
    if (b.dim() != dim) throw InvalidParameter("candidate dimension does not match the model");
  }
}

void prepare_grads(std::span<const MixtureParams> blocks, std::span<MixtureGradient> grads) {
  if (grads.empty()) return;
  if (grads.size() != blocks.size()) throw InvalidParameter("gradient span does not match the blocks");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    grads[b] = MixtureGradient::zeros(blocks[b].components(), blocks[b].dim());
  }
}

// F, F'/F, F''/F and h = (log phi)'' at univariate points s.
struct HessEval {
  ComplexMatrix e;  // points x K
  ComplexVector f;
  ComplexVector u;
  ComplexVector v;
  ComplexVector h;
};

std::optional<HessEval> eval_log_hess(const MixtureParams& params, const Vector& points, double floor) {
  const Vector mu = params.atoms().col(0);
  const Vector& p = params.weights();
  HessEval out;
  out.e = exp_table(phase_table_1d(points, mu));
  const Vector pm = p.cwiseProduct(mu);
  const Vector pm2 = pm.cwiseProduct(mu);
  out.f = out.e * p.cast<Complex>();
  const ComplexVector f1 = kI * (out.e * pm.cast<Complex>());
  const ComplexVector f2 = -(out.e * pm2.cast<Complex>());
  if ((out.f.array().abs() < floor).any()) return std::nullopt;
  out.u = f1.cwiseQuotient(out.f);
  out.v = f2.cwiseQuotient(out.f);
  const double var = params.covariance()(0, 0);
  out.h = out.v - out.u.cwiseProduct(out.u) - ComplexVector::Constant(points.size(), var);
  return out;
}

// Pulls alpha (d obj = Re sum_s alpha_s dh(s)) back to the mixture parameters.
void factor_grad(const MixtureParams& params, const Vector& points, const HessEval& he,
                 const ComplexVector& alpha, MixtureGradient& grad) {
  const Eigen::Index k = params.components();
  const Vector& p = params.weights();
  for (Eigen::Index s = 0; s < points.size(); ++s) {
    const Complex gamma = alpha(s) / he.f(s);
    const Complex u = he.u(s);
    const Complex v = he.v(s);
    const double x = points(s);
    const Complex tail = 2.0 * u * u - v;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double mu = params.atoms()(j, 0);
      const Complex ge = gamma * he.e(s, j);
      grad.weights(j) += std::real(ge * (-mu * mu - 2.0 * u * kI * mu + tail));
      const Complex dmu = -(2.0 * mu + kI * mu * mu * x) - 2.0 * u * (kI - mu * x) + tail * kI * x;
      grad.atoms(j, 0) += p(j) * std::real(ge * dmu);
    }
  }
  grad.covariance(0, 0) -= alpha.real().sum();
}

}  // namespace

// ---------------------------------------------------------------------------

QMatrices build_Q(const Matrix& loadings) {
  if (loadings.size() == 0 || !loadings.allFinite()) {
    throw InvalidParameter("loadings must be a finite non-empty matrix");
  }
  const Eigen::Index l = loadings.rows();
  const Eigen::Index k = loadings.cols();
  const auto pairs = upper_pairs(l);
  QMatrices out;
  out.q.resize(static_cast<Eigen::Index>(pairs.size()), k);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (Eigen::Index c = 0; c < k; ++c) {
      out.q(static_cast<Eigen::Index>(p), c) = loadings(pairs[p].first, c) * loadings(pairs[p].second, c);
    }
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(out.q);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank < k) {
    throw IdentificationError("Q has rank " + std::to_string(rank) + " but " + std::to_string(k) +
                                  " factors need full column rank",
                              rank);
  }
  const Matrix gram = out.q.transpose() * out.q;
  out.qstar = gram.ldlt().solve(out.q.transpose());
  return out;
}

double Objective::value(const MixtureParams& params) const {
  return evaluate(std::span<const MixtureParams>(&params, 1), {});
}

double Objective::value(std::span<const MixtureParams> blocks) const { return evaluate(blocks, {}); }

double Objective::breach() const {
  breaches_.fetch_add(1);
  return kInf;
}

// ---------------------------------------------------------------------------

DeconvModel::DeconvModel(ECFCache y, ECFCache eps, NodeSet quad, double n)
    : cache_y_(std::move(y)), cache_eps_(std::move(eps)), quad_(std::move(quad)), n_(n) {
  if (cache_y_.size() != quad_.size() || cache_eps_.size() != quad_.size()) {
    throw InvalidParameter("ECF caches must be built on the quadrature nodes");
  }
  if (!(n_ > 0.0)) throw InvalidParameter("sample size multiplier must be positive");
}

DeconvModel DeconvModel::from_data(const Dataset& y, const Dataset& eps, const BoxQuadrature& quad) {
  if (y.dim() != eps.dim()) throw InvalidParameter("Y and error samples differ in dimension");
  return {build_cache(y, quad.set.nodes, kEcfPlain), build_cache(eps, quad.set.nodes, kEcfPlain), quad.set,
          static_cast<double>(y.size())};
}

DeconvModel DeconvModel::population(const CfFunction& phi_y, const CfFunction& phi_eps,
                                    const BoxQuadrature& quad, double n) {
  ECFCache y{quad.set.nodes, ComplexVector(quad.set.size()), {}, {}};
  ECFCache e{quad.set.nodes, ComplexVector(quad.set.size()), {}, {}};
  for (Eigen::Index i = 0; i < quad.set.size(); ++i) {
    const Vector t = quad.set.nodes.row(i).transpose();
    y.phi(i) = phi_y(t);
    e.phi(i) = phi_eps(t);
  }
  return {std::move(y), std::move(e), quad.set, n};
}

double DeconvModel::evaluate(std::span<const MixtureParams> blocks, std::span<MixtureGradient> grads) const {
  check_blocks(blocks, 1, candidate_dim());
  prepare_grads(blocks, grads);
  const MixtureParams& par = blocks[0];
  const Matrix& nodes = quad_.nodes;
  const PhaseTable tab = phase_table(nodes, par.atoms());
  const Vector env = envelope(nodes, par.covariance());
  const Vector& p = par.weights();
  ComplexVector phi(nodes.rows());
  phi.real() = env.cwiseProduct(tab.cos * p);
  phi.imag() = env.cwiseProduct(tab.sin * p);
  const ComplexVector r = cache_y_.phi - cache_eps_.phi.cwiseProduct(phi);
  const double value = 0.5 * n_ * quad_.weights.dot(r.cwiseAbs2());
  if (grads.empty()) return value;

  // d obj = Re sum_t a_t d phi(t)
  const ComplexVector a = (-n_ * quad_.weights).cast<Complex>().cwiseProduct(
      r.conjugate().cwiseProduct(cache_eps_.phi));
  const Vector ar = a.real().cwiseProduct(env);
  const Vector ai = a.imag().cwiseProduct(env);
  MixtureGradient& g = grads[0];
  g.weights = tab.cos.transpose() * ar - tab.sin.transpose() * ai;
  const Matrix m = -(tab.sin.array().colwise() * ar.array() + tab.cos.array().colwise() * ai.array()).matrix();
  g.atoms = p.asDiagonal() * (m.transpose() * nodes);
  const Vector re_aphi = a.cwiseProduct(phi).real();
  g.covariance = -0.5 * nodes.transpose() * re_aphi.asDiagonal() * nodes;
  return value;
}

// ---------------------------------------------------------------------------

RepMeasModel::RepMeasModel(ECFCache forward, std::optional<ECFCache> swapped, NodeSet quad, bool boundary,
                           double n)
    : forward_(std::move(forward)), swapped_(std::move(swapped)), quad_(std::move(quad)), boundary_(boundary),
      n_(n) {
  auto check = [&](const ECFCache& c) {
    if (c.size() != quad_.size()) throw InvalidParameter("ECF caches must be built on the quadrature nodes");
    if (!c.has_weighted() || c.weighted.cols() != c.nodes.cols()) {
      throw InvalidParameter("repeated-measurements cache needs the weighted ECF");
    }
  };
  check(forward_);
  if (swapped_) check(*swapped_);
  if (!(n_ > 0.0)) throw InvalidParameter("sample size multiplier must be positive");
}

NodeSet RepMeasModel::metric_nodes(Eigen::Index dim, const RepMeasOptions& options, bool& boundary) {
  const auto d = static_cast<int>(dim);
  const QuadratureDefaults def = default_quadrature(d);
  boundary = options.boundary.value_or(d > 1);
  if (boundary) {
    const int m = options.sphere_count > 0 ? options.sphere_count : def.sphere_count;
    const int q = options.line_count > 0 ? options.line_count : def.line_count;
    return build_sphere_line(options.radius, m, q, d).combined();
  }
  return build_box(options.radius, options.per_dim > 0 ? options.per_dim : def.per_dim, d).set;
}

RepMeasModel RepMeasModel::from_data(const Dataset& y1, const Dataset& y2, const RepMeasOptions& options) {
  if (y1.size() != y2.size() || y1.dim() != y2.dim()) {
    throw InvalidParameter("Y1 and Y2 must have the same shape");
  }
  bool boundary = false;
  NodeSet quad = metric_nodes(y1.dim(), options, boundary);
  ECFCache forward = build_cache(y2, quad.nodes, kEcfPlain | kEcfWeighted, &y1);
  std::optional<ECFCache> swapped;
  if (options.symmetrized) swapped = build_cache(y1, quad.nodes, kEcfPlain | kEcfWeighted, &y2);
  return {std::move(forward), std::move(swapped), std::move(quad), boundary, static_cast<double>(y1.size())};
}

RepMeasModel RepMeasModel::population(const MixtureParams& x, const MixtureParams& eps1,
                                      const MixtureParams& eps2, const RepMeasOptions& options, double n) {
  bool boundary = false;
  NodeSet quad = metric_nodes(x.dim(), options, boundary);
  const Eigen::Index count = quad.size();
  const Eigen::Index d = x.dim();
  const Vector mean1 = mixture_mean(eps1);
  const Vector mean2 = mixture_mean(eps2);
  auto fill = [&](const MixtureParams& own, const Vector& other_mean) {
    ECFCache c{quad.nodes, ComplexVector(count), ComplexMatrix(count, d), {}};
    for (Eigen::Index i = 0; i < count; ++i) {
      const Vector t = quad.nodes.row(i).transpose();
      const Complex fx = cf(x, t);
      const Complex fe = cf(own, t);
      c.phi(i) = fx * fe;
      c.weighted.row(i) = (fe * cf_grad(x, t) + kI * fx * fe * other_mean.cast<Complex>()).transpose();
    }
    return c;
  };
  std::optional<ECFCache> swapped;
  if (options.symmetrized) swapped = fill(eps1, mean2);
  return {fill(eps2, mean1), std::move(swapped), std::move(quad), boundary, n};
}

double RepMeasModel::evaluate(std::span<const MixtureParams> blocks, std::span<MixtureGradient> grads) const {
  check_blocks(blocks, 1, candidate_dim());
  prepare_grads(blocks, grads);
  const MixtureParams& par = blocks[0];
  const Matrix& nodes = quad_.nodes;
  const Vector& p = par.weights();
  const ComplexMatrix e = exp_table(phase_table(nodes, par.atoms()));
  const ComplexVector f = e * p.cast<Complex>();
  if ((f.array().abs() < floor).any()) return breach();
  const Matrix pm = p.asDiagonal() * par.atoms();
  const ComplexMatrix grad_f = kI * (e * pm.cast<Complex>());  // N x d
  const Matrix sigma_t = nodes * par.covariance();
  ComplexMatrix log_grad = grad_f.array().colwise() / f.array();
  log_grad -= sigma_t.cast<Complex>();

  double value = 0.0;
  auto term = [&](const ECFCache& c) {
    ComplexMatrix r = log_grad.array().colwise() * c.phi.array();
    r -= c.weighted;
    value += 0.5 * n_ * quad_.weights.dot(r.rowwise().squaredNorm());
    if (grads.empty()) return;
    MixtureGradient& g = grads[0];
    // a_t = n w conj(R_t) phi_hat(t); d obj = Re sum_t a_t . d grad log phi(t)
    const ComplexVector scale = (n_ * quad_.weights).cast<Complex>().cwiseProduct(c.phi);
    const ComplexMatrix a = r.conjugate().array().colwise() * scale.array();
    const ComplexMatrix alpha = a.array().colwise() / f.array();
    const ComplexVector beta = a.cwiseProduct(grad_f).rowwise().sum().cwiseQuotient(f.cwiseProduct(f));
    const ComplexMatrix gamma = alpha * par.atoms().transpose().cast<Complex>();  // N x K
    const ComplexMatrix i_gamma_minus_beta = (kI * gamma).colwise() - beta;
    g.weights += e.cwiseProduct(i_gamma_minus_beta).real().colwise().sum().transpose();
    const ComplexMatrix gamma_plus_ibeta = gamma.colwise() + kI * beta;
    const Matrix y = e.cwiseProduct(gamma_plus_ibeta).real();
    const Matrix direct = (kI * (e.transpose() * alpha)).real();
    g.atoms += p.asDiagonal() * (direct - y.transpose() * nodes);
    g.covariance -= a.real().transpose() * nodes;
  };
  term(forward_);
  if (swapped_) term(*swapped_);
  return value;
}

// ---------------------------------------------------------------------------

FactorModel::FactorModel(NodeSet quad, ComplexVector phi, ComplexMatrix hess, Matrix loadings, int target,
                         double n)
    : quad_(std::move(quad)), phi_(std::move(phi)), hess_(std::move(hess)), loadings_(std::move(loadings)),
      q_(build_Q(loadings_)), target_(target), n_(n) {
  const Eigen::Index l = loadings_.rows();
  const Eigen::Index k = loadings_.cols();
  if (quad_.dim() != l) throw InvalidParameter("quadrature dimension must equal the number of measurements");
  if (phi_.size() != quad_.size() || hess_.rows() != quad_.size() || hess_.cols() != pair_count(l)) {
    throw InvalidParameter("factor caches must be built on the quadrature nodes");
  }
  if (target_ != kJointTarget && (target_ < 0 || target_ >= k)) {
    throw InvalidParameter("factor index out of range");
  }
  if (!(n_ > 0.0)) throw InvalidParameter("sample size multiplier must be positive");
  phi_sq_ = phi_.cwiseProduct(phi_);

  const Eigen::Index first = target_ == kJointTarget ? 0 : target_;
  const Eigen::Index last = target_ == kJointTarget ? k : target_ + 1;
  for (Eigen::Index c = first; c < last; ++c) {
    const Vector s = quad_.nodes * loadings_.col(c);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(s.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return s(a) < s(b); });
    Projection proj;
    proj.index.assign(order.size(), 0);
    std::vector<double> unique;
    for (const Eigen::Index node : order) {
      const double v = s(node);
      if (unique.empty() || v - unique.back() > 1e-12 * std::max(1.0, std::abs(v))) unique.push_back(v);
      proj.index[static_cast<std::size_t>(node)] = static_cast<Eigen::Index>(unique.size()) - 1;
    }
    proj.unique = Eigen::Map<const Vector>(unique.data(), static_cast<Eigen::Index>(unique.size()));
    projections_.push_back(std::move(proj));
  }
  if (target_ != kJointTarget) {
    target_combo_ = hess_ * q_.qstar.row(target_).transpose().cast<Complex>();
  }
}

FactorModel FactorModel::from_data(const Dataset& y, const Matrix& loadings, int target, const BoxQuadrature& quad) {
  if (y.dim() != loadings.rows()) throw InvalidParameter("data columns must match the loading rows");
  ECFCache c = build_cache(y, quad.set.nodes, kEcfPlain | kEcfHess);
  return {quad.set, std::move(c.phi), std::move(c.hess), loadings, target, static_cast<double>(y.size())};
}

FactorModel FactorModel::population(const std::vector<MixtureParams>& factors, const Matrix& loadings, int target,
                                    const BoxQuadrature& quad, double n) {
  const Eigen::Index k = loadings.cols();
  if (static_cast<Eigen::Index>(factors.size()) != k) {
    throw InvalidParameter("need one factor distribution per loading column");
  }
  const QMatrices q = build_Q(loadings);
  const Eigen::Index count = quad.set.size();
  ComplexVector phi(count);
  ComplexMatrix hess(count, q.q.rows());
  for (Eigen::Index i = 0; i < count; ++i) {
    const Vector t = quad.set.nodes.row(i).transpose();
    Complex prod{1.0, 0.0};
    ComplexVector h(k);
    for (Eigen::Index c = 0; c < k; ++c) {
      const double s = t.dot(loadings.col(c));
      prod *= cf(factors[static_cast<std::size_t>(c)], Vector::Constant(1, s));
      h(c) = cf_log_hess_1d(factors[static_cast<std::size_t>(c)], s, 0.0);
    }
    phi(i) = prod;
    hess.row(i) = (prod * prod * (q.q.cast<Complex>() * h)).transpose();
  }
  return {quad.set, std::move(phi), std::move(hess), loadings, target, n};
}

ComplexMatrix FactorModel::residual(std::span<const MixtureParams> blocks) const {
  check_blocks(blocks, block_count(), 1);
  const Eigen::Index count = quad_.size();
  std::vector<ComplexVector> h_nodes;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto he = eval_log_hess(blocks[b], projections_[b].unique, floor);
    if (!he) throw DegeneratePoint("characteristic function below floor", Vector());
    ComplexVector hn(count);
    for (Eigen::Index i = 0; i < count; ++i) hn(i) = he->h(projections_[b].index[static_cast<std::size_t>(i)]);
    h_nodes.push_back(std::move(hn));
  }
  if (target_ != kJointTarget) {
    return target_combo_ - phi_sq_.cwiseProduct(h_nodes[0]);
  }
  ComplexMatrix hm(count, static_cast<Eigen::Index>(h_nodes.size()));
  for (std::size_t b = 0; b < h_nodes.size(); ++b) hm.col(static_cast<Eigen::Index>(b)) = h_nodes[b];
  const ComplexMatrix fitted = hm * q_.q.transpose().cast<Complex>();
  return hess_ - (fitted.array().colwise() * phi_sq_.array()).matrix();
}

double FactorModel::evaluate(std::span<const MixtureParams> blocks, std::span<MixtureGradient> grads) const {
  check_blocks(blocks, block_count(), 1);
  prepare_grads(blocks, grads);
  const Eigen::Index count = quad_.size();
  std::vector<HessEval> evals;
  evals.reserve(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto he = eval_log_hess(blocks[b], projections_[b].unique, floor);
    if (!he) return breach();
    evals.push_back(std::move(*he));
  }
  auto h_at = [&](std::size_t b, Eigen::Index node) {
    return evals[b].h(projections_[b].index[static_cast<std::size_t>(node)]);
  };

  if (target_ != kJointTarget) {
    ComplexVector r(count);
    for (Eigen::Index i = 0; i < count; ++i) r(i) = target_combo_(i) - phi_sq_(i) * h_at(0, i);
    const double value = 0.5 * n_ * quad_.weights.dot(r.cwiseAbs2());
    if (grads.empty()) return value;
    ComplexVector alpha = ComplexVector::Zero(projections_[0].unique.size());
    for (Eigen::Index i = 0; i < count; ++i) {
      alpha(projections_[0].index[static_cast<std::size_t>(i)]) -= n_ * quad_.weights(i) * std::conj(r(i)) * phi_sq_(i);
    }
    factor_grad(blocks[0], projections_[0].unique, evals[0], alpha, grads[0]);
    return value;
  }

  const Eigen::Index k = loadings_.cols();
  const Eigen::Index pairs = q_.q.rows();
  ComplexMatrix r(count, pairs);
  ComplexVector h(k);
  for (Eigen::Index i = 0; i < count; ++i) {
    for (Eigen::Index c = 0; c < k; ++c) h(c) = h_at(static_cast<std::size_t>(c), i);
    r.row(i) = hess_.row(i) - (phi_sq_(i) * (q_.q.cast<Complex>() * h)).transpose();
  }
  const double value = 0.5 * n_ * quad_.weights.dot(r.rowwise().squaredNorm());
  if (grads.empty()) return value;
  // Adjoint of h_c at node i: -n w phi_hat^2 (Q' conj(R))_c
  const ComplexMatrix back = r.conjugate() * q_.q.cast<Complex>();  // N x K
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& proj = projections_[static_cast<std::size_t>(c)];
    ComplexVector alpha = ComplexVector::Zero(proj.unique.size());
    for (Eigen::Index i = 0; i < count; ++i) {
      alpha(proj.index[static_cast<std::size_t>(i)]) -= n_ * quad_.weights(i) * phi_sq_(i) * back(i, c);
    }
    factor_grad(blocks[static_cast<std::size_t>(c)], proj.unique, evals[static_cast<std::size_t>(c)], alpha,
                grads[static_cast<std::size_t>(c)]);
  }
  return value;
}

// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> symmetrize_to_deconv(const Dataset& y1, const Dataset& y2) {
  if (y1.size() != y2.size() || y1.dim() != y2.dim()) {
    throw InvalidParameter("Y1 and Y2 must have the same shape");
  }
  const Matrix& a = y1.observations();
  const Matrix& b = y2.observations();
  return {Dataset(0.5 * (a + b)), Dataset(0.5 * (a - b))};
}

// ---------------------------------------------------------------------------

Posterior::Posterior(std::shared_ptr<const Objective> objective, PriorSpec spec)
    : objective_(std::move(objective)), spec_(std::move(spec)), layout_(StateLayout::of(spec_)) {
  if (!objective_) throw InvalidParameter("posterior needs an objective");
  spec_.validate();
  if (spec_.dim() != objective_->candidate_dim()) {
    throw InvalidParameter("prior dimension does not match the model");
  }
}

std::vector<MixtureParams> Posterior::constrain(const Vector& coords) const {
  if (coords.size() != dim()) throw InvalidParameter("state has the wrong number of coordinates");
  std::vector<MixtureParams> out;
  const Eigen::Index size = layout_.size();
  for (Eigen::Index b = 0; b < objective_->block_count(); ++b) {
    out.push_back(qbd::constrain({layout_, coords.segment(b * size, size)}, spec_));
  }
  return out;
}

Vector Posterior::unconstrain(std::span<const MixtureParams> blocks) const {
  if (static_cast<Eigen::Index>(blocks.size()) != objective_->block_count()) {
    throw InvalidParameter("wrong number of blocks");
  }
  Vector out(dim());
  const Eigen::Index size = layout_.size();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    out.segment(static_cast<Eigen::Index>(b) * size, size) = qbd::unconstrain(blocks[b], spec_).coords;
  }
  return out;
}

double Posterior::neg_loglik_grad(const Vector& coords, Vector* grad) const {
  if (coords.size() != dim()) throw InvalidParameter("state has the wrong number of coordinates");
  if (!coords.allFinite()) return kInf;
  const Eigen::Index blocks = objective_->block_count();
  const Eigen::Index size = layout_.size();
  std::vector<MixtureParams> params;
  try {
    params = constrain(coords);
  } catch (const InvalidParameter&) {
    return kInf;  // numerically degenerate constrained point
  }
  std::vector<MixtureGradient> mgrads(grad ? static_cast<std::size_t>(blocks) : 0);
  double value = kInf;
  try {
    value = objective_->evaluate(params, mgrads);
  } catch (const DegeneratePoint&) {
    return kInf;
  }
  if (!std::isfinite(value)) return kInf;
  if (grad) grad->resize(dim());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const UnconstrainedState state{layout_, coords.segment(b * size, size)};
    Vector prior_grad;
    value -= log_prior(state, spec_, grad ? &prior_grad : nullptr);
    if (grad) {
      grad->segment(b * size, size) =
          pullback_gradient(state, spec_, mgrads[static_cast<std::size_t>(b)]) - prior_grad;
    }
  }
  if (!std::isfinite(value)) return kInf;
  return value;
}

double Posterior::log_density(const Vector& coords, Vector* grad) const {
  const double v = neg_loglik_grad(coords, grad);
  if (grad && std::isfinite(v)) *grad = -*grad;
  return -v;
}

Vector Posterior::sample_prior(std::mt19937_64& rng) const {
  Vector out(dim());
  const Eigen::Index size = layout_.size();
  for (Eigen::Index b = 0; b < objective_->block_count(); ++b) {
    out.segment(b * size, size) = sample_prior_state(spec_, rng).coords;
  }
  return out;
}

}  // namespace qbd
