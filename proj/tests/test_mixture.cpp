#include "qbdecon/mixture.hpp"
#include "test_util.hpp"

#include <numbers>

using namespace qbd;
using qbd::test::rel_err;

namespace {

MixtureParams two_point() { return MixtureParams::univariate({0.5, 0.5}, {-2.0, 2.0}, 1.0); }

MixtureParams random_mixture(std::mt19937_64& rng, Eigen::Index k, Eigen::Index d) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Vector w(k);
  for (Eigen::Index j = 0; j < k; ++j) w(j) = u(rng);
  w /= w.sum();
  const Matrix a = test::random_matrix(k, d, rng);
  const Matrix b = test::random_matrix(d, d, rng, 0.5);
  return {w, a, b * b.transpose() + 0.5 * Matrix::Identity(d, d)};
}

}  // namespace

TEST_CASE("constructor validates parameters") {
  CHECK_THROWS_AS(MixtureParams::univariate({0.5, 0.6}, {0, 1}, 1.0), InvalidParameter);
  CHECK_THROWS_AS(MixtureParams::univariate({1.0}, {0}, -1.0), InvalidParameter);
  CHECK_THROWS_AS(MixtureParams::univariate({1.5, -0.5}, {0, 1}, 1.0), InvalidParameter);
  Matrix cov(2, 2);
  cov << 1, 2, 2, 1;
  CHECK_THROWS_AS(MixtureParams(Vector::Ones(1), Matrix::Zero(1, 2), cov), InvalidParameter);
}

TEST_CASE("density examples") {
  for (int d = 1; d <= 3; ++d) {
    const MixtureParams p(Vector::Ones(1), Matrix::Zero(1, d), Matrix::Identity(d, d));
    CHECK(density(p, Vector::Zero(d)) == doctest::Approx(std::pow(2 * std::numbers::pi, -0.5 * d)).epsilon(1e-14));
  }
  CHECK(density(two_point(), Vector::Zero(1)) == doctest::Approx(std::exp(-2.0) / std::sqrt(2 * std::numbers::pi)));
  std::mt19937_64 rng(5);
  const MixtureParams p = random_mixture(rng, 4, 2);
  const Vector x = Vector::Constant(2, 0.3);
  CHECK(density(p.permuted({2, 0, 3, 1}), x) == doctest::Approx(density(p, x)).epsilon(1e-14));
}

TEST_CASE("density integrates to one") {
  std::mt19937_64 rng(9);
  const MixtureParams p = random_mixture(rng, 3, 1);
  const double sd = std::sqrt(p.covariance()(0, 0));
  const double lo = p.atoms().minCoeff() - 10 * sd;
  const double hi = p.atoms().maxCoeff() + 10 * sd;
  const double mass = test::adaptive_simpson([&](double x) { return density(p, Vector::Constant(1, x)); }, lo, hi, 1e-10);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("cf examples and symmetries") {
  const MixtureParams p = two_point();
  CHECK(std::abs(cf(p, Vector::Zero(1)) - Complex(1, 0)) < 1e-15);
  CHECK(std::abs(cf(p, Vector::Constant(1, std::numbers::pi / 4))) < 1e-15);
  const MixtureParams g(Vector::Ones(1), Matrix::Zero(1, 2), Matrix::Identity(2, 2) * 2.0);
  const Vector t = Vector::Constant(2, 0.7);
  CHECK(cf(g, t).imag() == 0.0);
  CHECK(cf(g, t).real() == doctest::Approx(std::exp(-0.5 * 2.0 * t.squaredNorm())));

  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const MixtureParams q = random_mixture(rng, 5, 2);
    const Vector s = test::random_matrix(2, 1, rng, 2.0);
    const Complex a = cf(q, s);
    CHECK(std::abs(a) <= 1.0 + 1e-15);
    CHECK(std::abs(cf(q, -s) - std::conj(a)) < 1e-14);
  }
}

TEST_CASE("cf matches Fourier quadrature of the density") {
  std::mt19937_64 rng(2);
  const MixtureParams p = random_mixture(rng, 3, 1);
  for (double t : {0.3, 1.1, 2.5}) {
    const double re = test::adaptive_simpson(
        [&](double x) { return std::cos(t * x) * density(p, Vector::Constant(1, x)); }, -25, 25, 1e-11);
    const double im = test::adaptive_simpson(
        [&](double x) { return std::sin(t * x) * density(p, Vector::Constant(1, x)); }, -25, 25, 1e-11);
    CHECK(std::abs(cf(p, Vector::Constant(1, t)) - Complex(re, im)) < 1e-6);
  }
}

TEST_CASE("cf_log_grad examples") {
  const double s2 = 1.7;
  const MixtureParams g(Vector::Ones(1), Matrix::Zero(1, 2), Matrix::Identity(2, 2) * s2);
  const Vector t = (Vector(2) << 0.4, -1.2).finished();
  CHECK((cf_log_grad(g, t) - (-s2 * t).cast<Complex>()).norm() < 1e-14);

  Matrix mu(1, 2);
  mu << 0.5, -1.0;
  Matrix cov(2, 2);
  cov << 1.0, 0.3, 0.3, 2.0;
  const MixtureParams shifted(Vector::Ones(1), mu, cov);
  const ComplexVector expect = Complex(0, 1) * mu.row(0).transpose().cast<Complex>() - (cov * t).cast<Complex>();
  CHECK((cf_log_grad(shifted, t) - expect).norm() < 1e-14);

  const double x = 0.3;
  const Complex got = cf_log_grad(two_point(), Vector::Constant(1, x))(0);
  CHECK(got.real() == doctest::Approx(-x - 2 * std::tan(2 * x)).epsilon(1e-12));
  CHECK(std::abs(got.imag()) < 1e-14);

  CHECK_THROWS_AS(cf_log_grad(two_point(), Vector::Constant(1, std::numbers::pi / 4)), DegeneratePoint);
  try {
    cf_log_grad(two_point(), Vector::Constant(1, std::numbers::pi / 4));
  } catch (const DegeneratePoint& e) {
    CHECK(e.point()(0) == doctest::Approx(std::numbers::pi / 4));
  }
}

TEST_CASE("cf_log_grad at the origin is i times the mean") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const MixtureParams p = random_mixture(rng, 4, 3);
    const ComplexVector g = cf_log_grad(p, Vector::Zero(3));
    const Vector m = mixture_mean(p);
    CHECK(g.real().cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g.imag() - m).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cf_log_hess_1d examples") {
  for (double s : {-2.0, 0.0, 0.7, 3.1}) {
    const Complex a = cf_log_hess_1d(MixtureParams::univariate({1.0}, {0.0}, 2.5), s);
    CHECK(std::abs(a - Complex(-2.5, 0)) < 1e-13);
    const Complex b = cf_log_hess_1d(MixtureParams::univariate({1.0}, {1.3}, 0.4), s);
    CHECK(std::abs(b - Complex(-0.4, 0)) < 1e-13);
  }
  const double s = 0.2;
  const double c = std::cos(2 * s);
  CHECK(cf_log_hess_1d(two_point(), s).real() == doctest::Approx(-1 - 4 / (c * c)).epsilon(1e-12));
}

TEST_CASE("log-derivatives match finite differences of log|phi| and arg phi") {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const MixtureParams p = random_mixture(rng, 3, 1);
    const double t = std::uniform_real_distribution<double>(-2, 2)(rng);
    if (std::abs(cf(p, Vector::Constant(1, t))) <= 0.1) continue;
    ++checked;
    auto logcf = [&](double x) { return std::log(cf(p, Vector::Constant(1, x))); };
    const double h = 1e-5;
    // Local differences of the complex log stay on one branch for small h.
    auto branch = [&](double x) {
      Complex v = logcf(x);
      const double ref = std::arg(cf(p, Vector::Constant(1, t)));
      while (v.imag() - ref > std::numbers::pi) v -= Complex(0, 2 * std::numbers::pi);
      while (v.imag() - ref < -std::numbers::pi) v += Complex(0, 2 * std::numbers::pi);
      return v;
    };
    const Complex d1 = (branch(t + h) - branch(t - h)) / (2 * h);
    const Complex d2 = (branch(t + h) - 2.0 * branch(t) + branch(t - h)) / (h * h);
    const Complex g = cf_log_grad(p, Vector::Constant(1, t))(0);
    const Complex hh = cf_log_hess_1d(p, t);
    CHECK(std::abs(g - d1) / std::max(1.0, std::abs(g)) < 1e-5);
    CHECK(std::abs(hh - d2) / std::max(1.0, std::abs(hh)) < 1e-4);
  }
  CHECK(checked > 10);
}

TEST_CASE("mixture_mean and demean") {
  CHECK(mixture_mean(two_point())(0) == doctest::Approx(0.0));
  const MixtureParams p = MixtureParams::univariate({0.75, 0.25}, {0.0, 4.0}, 1.0);
  CHECK(mixture_mean(p)(0) == doctest::Approx(1.0));
  CHECK(mixture_mean(MixtureParams::univariate({1.0}, {2.5}, 1.0))(0) == 2.5);
  const MixtureParams c = demean(p);
  CHECK(c.atoms()(0, 0) == doctest::Approx(-1.0));
  CHECK(c.atoms()(1, 0) == doctest::Approx(3.0));
  CHECK(c.covariance() == p.covariance());
  CHECK(c.weights() == p.weights());
  CHECK(demean(two_point()) == two_point());
  std::mt19937_64 rng(1);
  const MixtureParams q = random_mixture(rng, 5, 2);
  const MixtureParams dq = demean(q);
  CHECK(mixture_mean(dq).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((demean(dq).atoms() - dq.atoms()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("json round trip") {
  std::mt19937_64 rng(21);
  const MixtureParams p = random_mixture(rng, 3, 2);
  nlohmann::json j = p;
  const MixtureParams q = mixture_from_json(nlohmann::json::parse(j.dump()));
  CHECK(q == p);
  const MixtureParams u = mixture_from_json(nlohmann::json::parse(R"({"weights":[1],"atoms":[0.5],"covariance":2})"));
  CHECK(u.covariance()(0, 0) == 2.0);
}

TEST_CASE("phase table matches direct evaluation") {
  std::mt19937_64 rng(4);
  const Matrix nodes = test::random_matrix(37, 2, rng);
  const Matrix atoms = test::random_matrix(5, 2, rng);
  const PhaseTable tab = phase_table(nodes, atoms);
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    for (Eigen::Index j = 0; j < atoms.rows(); ++j) {
      const double x = nodes.row(i).dot(atoms.row(j));
      CHECK(tab.cos(i, j) == doctest::Approx(std::cos(x)).epsilon(1e-14));
      CHECK(tab.sin(i, j) == doctest::Approx(std::sin(x)).epsilon(1e-14));
    }
  }
}
