#include "qbdecon/mixture.hpp"

#include "qbdecon/kernels.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>

namespace qbd {

MixtureParams::MixtureParams(Vector weights, Matrix atoms, Matrix covariance)
    : weights_(std::move(weights)), atoms_(std::move(atoms)), covariance_(std::move(covariance)) {
  const Eigen::Index k = weights_.size();
  if (k < 1) {
    throw InvalidParameter("mixture needs at least one component");
  }
  if (atoms_.rows() != k || atoms_.cols() < 1) {
    throw InvalidParameter("atoms must be K x d with K = number of weights");
  }
  const Eigen::Index d = atoms_.cols();
  if (covariance_.rows() != d || covariance_.cols() != d) {
    throw InvalidParameter("covariance must be d x d");
  }
  if (!weights_.allFinite() || (weights_.array() < 0.0).any()) {
    throw InvalidParameter("weights must be finite and nonnegative");
  }
  if (std::abs(weights_.sum() - 1.0) > kSimplexTolerance) {
    throw InvalidParameter("weights must sum to 1");
  }
  if (!atoms_.allFinite() || !covariance_.allFinite()) {
    throw InvalidParameter("atoms and covariance must be finite");
  }
  const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
  if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidParameter("covariance must be symmetric");
  }
  Eigen::LLT<Matrix> llt(covariance_);
  if (llt.info() != Eigen::Success) {
    throw InvalidParameter("covariance is not positive definite");
  }
  chol_ = llt.matrixL();
  if ((chol_.diagonal().array() <= 0.0).any()) {
    throw InvalidParameter("covariance is not positive definite");
  }
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

MixtureParams MixtureParams::univariate(const std::vector<double>& weights,
                                        const std::vector<double>& atoms, double variance) {
  if (weights.size() != atoms.size()) {
    throw InvalidParameter("weights and atoms differ in length");
  }
  Vector w = Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  Matrix a = Eigen::Map<const Matrix>(atoms.data(), static_cast<Eigen::Index>(atoms.size()), 1);
  return {std::move(w), std::move(a), Matrix::Constant(1, 1, variance)};
}

MixtureParams MixtureParams::permuted(const std::vector<int>& order) const {
  if (static_cast<Eigen::Index>(order.size()) != components()) {
    throw InvalidParameter("permutation length mismatch");
  }
  Vector w(components());
  Matrix a(components(), dim());
  for (Eigen::Index j = 0; j < components(); ++j) {
    w(j) = weights_(order[j]);
    a.row(j) = atoms_.row(order[j]);
  }
  return {std::move(w), std::move(a), covariance_};
}

MixtureGradient MixtureGradient::zeros(Eigen::Index components, Eigen::Index dim) {
  return {Vector::Zero(components), Matrix::Zero(components, dim), Matrix::Zero(dim, dim)};
}

double log_density(const MixtureParams& params, const Vector& x) {
  const Eigen::Index d = params.dim();
  if (x.size() != d) {
    throw InvalidParameter("point dimension mismatch");
  }
  const double log_norm =
      -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - 0.5 * params.log_det_covariance();
  // Stabilized log-sum-exp over components.
  double top = -std::numeric_limits<double>::infinity();
  Vector terms(params.components());
  for (Eigen::Index j = 0; j < params.components(); ++j) {
    const Vector diff = x - params.atoms().row(j).transpose();
    const Vector z = params.cholesky().triangularView<Eigen::Lower>().solve(diff);
    const double w = params.weights()(j);
    terms(j) = w > 0.0 ? std::log(w) - 0.5 * z.squaredNorm() : -std::numeric_limits<double>::infinity();
    top = std::max(top, terms(j));
  }
  if (!std::isfinite(top)) {
    return top;
  }
  return log_norm + top + std::log((terms.array() - top).exp().sum());
}

double density(const MixtureParams& params, const Vector& x) {
  return std::exp(log_density(params, x));
}

Complex cf(const MixtureParams& params, const Vector& t) {
  const double envelope = std::exp(-0.5 * t.dot(params.covariance() * t));
  const Vector phase = params.atoms() * t;
  Complex mixing{0.0, 0.0};
  for (Eigen::Index j = 0; j < phase.size(); ++j) {
    mixing += params.weights()(j) * std::polar(1.0, phase(j));
  }
  return envelope * mixing;
}

ComplexVector cf_log_grad(const MixtureParams& params, const Vector& t, double floor) {
  const Eigen::Index d = params.dim();
  const Vector phase = params.atoms() * t;
  Complex mixing{0.0, 0.0};
  ComplexVector grad = ComplexVector::Zero(d);
  for (Eigen::Index j = 0; j < phase.size(); ++j) {
    const Complex e = params.weights()(j) * std::polar(1.0, phase(j));
    mixing += e;
    grad += (Complex{0.0, 1.0} * e) * params.atoms().row(j).transpose().cast<Complex>();
  }
  if (std::abs(mixing) < floor) {
    throw DegeneratePoint("characteristic function below floor", t);
  }
  return grad / mixing - (params.covariance() * t).cast<Complex>();
}

Complex cf_log_hess_1d(const MixtureParams& params, double s, double floor) {
  if (params.dim() != 1) {
    throw InvalidParameter("cf_log_hess_1d needs a univariate mixture");
  }
  Complex f0{0.0, 0.0};
  Complex f1{0.0, 0.0};
  Complex f2{0.0, 0.0};
  for (Eigen::Index j = 0; j < params.components(); ++j) {
    const double mu = params.atoms()(j, 0);
    const Complex e = params.weights()(j) * std::polar(1.0, s * mu);
    f0 += e;
    f1 += Complex{0.0, mu} * e;
    f2 -= mu * mu * e;
  }
  if (std::abs(f0) < floor) {
    throw DegeneratePoint("characteristic function below floor", Vector::Constant(1, s));
  }
  const Complex u = f1 / f0;
  return f2 / f0 - u * u - params.covariance()(0, 0);
}

Vector mixture_mean(const MixtureParams& params) {
  return params.atoms().transpose() * params.weights();
}

MixtureParams demean(const MixtureParams& params) {
  const Vector mean = mixture_mean(params);
  Matrix atoms = params.atoms().rowwise() - mean.transpose();
  return {params.weights(), std::move(atoms), params.covariance()};
}

PhaseTable phase_table(const Matrix& nodes, const Matrix& atoms) {
  const Matrix phase = nodes * atoms.transpose();
  PhaseTable table{Matrix(phase.rows(), phase.cols()), Matrix(phase.rows(), phase.cols())};
  const auto count = static_cast<std::size_t>(phase.size());
  kernels::sincos({phase.data(), count}, {table.sin.data(), count}, {table.cos.data(), count});
  return table;
}

PhaseTable phase_table_1d(const Vector& points, const Vector& atoms) {
  const Matrix phase = points * atoms.transpose();
  PhaseTable table{Matrix(phase.rows(), phase.cols()), Matrix(phase.rows(), phase.cols())};
  const auto count = static_cast<std::size_t>(phase.size());
  kernels::sincos({phase.data(), count}, {table.sin.data(), count}, {table.cos.data(), count});
  return table;
}

void to_json(nlohmann::json& j, const MixtureParams& params) {
  j = nlohmann::json::object();
  j["weights"] = std::vector<double>(params.weights().data(),
                                     params.weights().data() + params.weights().size());
  nlohmann::json atoms = nlohmann::json::array();
  for (Eigen::Index r = 0; r < params.atoms().rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(params.dim()));
    for (Eigen::Index c = 0; c < params.dim(); ++c) row[c] = params.atoms()(r, c);
    atoms.push_back(row);
  }
  j["atoms"] = std::move(atoms);
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < params.dim(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(params.dim()));
    for (Eigen::Index c = 0; c < params.dim(); ++c) row[c] = params.covariance()(r, c);
    cov.push_back(row);
  }
  j["covariance"] = std::move(cov);
}

namespace {

Matrix matrix_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) {
    throw InvalidParameter(std::string(field) + " must be a non-empty array of arrays");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.at(0).is_array() ? j.at(0).size() : 1);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (row.is_number()) {
      if (cols != 1) throw InvalidParameter(std::string(field) + " has ragged rows");
      m(r, 0) = row.get<double>();
      continue;
    }
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw InvalidParameter(std::string(field) + " has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

MixtureParams mixture_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw InvalidParameter("mixture must be a JSON object");
  }
  const auto w = j.at("weights").get<std::vector<double>>();
  Vector weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  Matrix atoms = matrix_from_json(j.at("atoms"), "atoms");
  Matrix cov;
  const auto& jc = j.at("covariance");
  if (jc.is_number()) {
    cov = Matrix::Constant(1, 1, jc.get<double>());
  } else {
    cov = matrix_from_json(jc, "covariance");
  }
  return {std::move(weights), std::move(atoms), std::move(cov)};
}

}  // namespace qbd
