#include "qbdecon/quadrature.hpp"
#include "test_util.hpp"

#include <numbers>

using namespace qbd;
constexpr double kPi = std::numbers::pi;

namespace {

double integrate(const NodeSet& set, const std::function<double(const Vector&)>& f) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < set.size(); ++i) acc += set.weights(i) * f(set.nodes.row(i).transpose());
  return acc;
}

}  // namespace

TEST_CASE("box rule examples") {
  const BoxQuadrature q1 = build_box(1.0, 64, 1);
  CHECK(q1.set.weights.sum() == 2.0);
  CHECK(integrate(q1.set, [](const Vector& t) { return t(0) * t(0); }) == doctest::Approx(2.0 / 3).epsilon(1e-3));
  CHECK(build_box(1.0, 16, 2).set.weights.sum() == 4.0);
  for (int d = 1; d <= 3; ++d) {
    const BoxQuadrature q = build_box(1.3, 10, d);
    CHECK(std::abs(q.set.weights.sum() - std::pow(2.6, d)) < 1e-10);
    // Symmetric under negation: the reversed node list is the negated list.
    const Eigen::Index n = q.set.size();
    for (Eigen::Index i = 0; i < n; ++i) CHECK((q.set.nodes.row(i) + q.set.nodes.row(n - 1 - i)).norm() < 1e-15);
  }
  CHECK_THROWS_AS(build_box(1.0, 1, 1), InvalidParameter);
  CHECK_THROWS_AS(build_box(0.0, 8, 1), InvalidParameter);
  CHECK_THROWS_AS(build_box(1.0, 200, 4), ResourceError);
}

TEST_CASE("seminorm examples") {
  const BoxQuadrature q = build_box(2.0, 32, 1);
  std::vector<Complex> zeros(32, Complex{0, 0}), ones(32, Complex{1, 0});
  CHECK(seminorm_sq(zeros, q) == 0.0);
  CHECK(seminorm_sq(ones, q) == doctest::Approx(4.0).epsilon(1e-14));
  const BoxQuadrature p = build_box(kPi, 50, 1);
  std::vector<Complex> v;
  for (Eigen::Index i = 0; i < p.set.size(); ++i) v.push_back(std::polar(1.0, p.set.nodes(i, 0)));
  CHECK(seminorm_sq(v, p) == doctest::Approx(2 * kPi).epsilon(1e-13));
  CHECK_THROWS_AS(seminorm_sq(std::vector<Complex>(3), q), InvalidParameter);
}

TEST_CASE("midpoint refinement converges at second order") {
  auto f = [](const Vector& t) { return std::exp(-t.squaredNorm()) * std::cos(t(0)); };
  double prev_err = 0.0;
  const double exact = [] {
    // int_{-2}^{2} e^{-x^2} cos x dx = sqrt(pi) e^{-1/4} Re erf(2 + i/2)
    return test::adaptive_simpson([](double x) { return std::exp(-x * x) * std::cos(x); }, -2, 2, 1e-14);
  }();
  for (int m : {8, 16, 32, 64}) {
    const double err = std::abs(integrate(build_box(2.0, m, 1).set, f) - exact);
    if (prev_err > 0) CHECK(std::log2(prev_err / err) > 1.9);
    prev_err = err;
  }
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  Vector x, w;
  gauss_legendre(6, -1.0, 2.0, x, w);
  CHECK(w.sum() == doctest::Approx(3.0).epsilon(1e-14));
  double acc = 0.0;
  for (int i = 0; i < 6; ++i) acc += w(i) * std::pow(x(i), 11);
  CHECK(acc == doctest::Approx((std::pow(2.0, 12) - 1.0) / 12).epsilon(1e-12));
}

TEST_CASE("sphere-line examples") {
  const SphereLineQuadrature q = build_sphere_line(3.0, 64, 16, 2);
  CHECK(std::abs(q.sphere_weights.sum() - 6 * kPi) < 1e-12);
  for (Eigen::Index i = 0; i < q.sphere_nodes.rows(); ++i) CHECK(std::abs(q.sphere_nodes.row(i).norm() - 3.0) < 1e-12);
  CHECK(q.line_weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(q.ball.weights.sum() == doctest::Approx(9 * kPi).epsilon(1e-6));

  const double t = 1.5;
  const SphereLineQuadrature q3 = build_sphere_line(t, 500, 16, 3);
  const double area = 4 * kPi * t * t;
  CHECK(q3.sphere_weights.sum() == doctest::Approx(area).epsilon(1e-14));
  double z1 = 0.0;
  for (Eigen::Index i = 0; i < q3.sphere_nodes.rows(); ++i) z1 += q3.sphere_weights(i) * std::pow(q3.sphere_nodes(i, 0), 2);
  CHECK(z1 == doctest::Approx(area * t * t / 3).epsilon(0.01));
  CHECK(q3.ball.weights.sum() == doctest::Approx(4.0 / 3 * kPi * t * t * t).epsilon(1e-6));

  const SphereLineQuadrature q1 = build_sphere_line(2.0, 8, 8, 1);
  CHECK(q1.sphere_weights.sum() == 2.0);
  CHECK(q1.ball.weights.sum() == doctest::Approx(4.0).epsilon(1e-13));

  CHECK_THROWS_AS(build_sphere_line(1.0, 64, 16, 4), DomainError);
  CHECK_THROWS_AS(build_sphere_line(1.0, 4, 16, 2), InvalidParameter);
  CHECK_THROWS_AS(build_sphere_line(1.0, 64, 2, 2), InvalidParameter);
}

TEST_CASE("boundary metric examples") {
  const SphereLineQuadrature q = build_sphere_line(1.7, 64, 16, 2);
  CHECK(boundary_metric_sq([](const Vector&) { return ComplexVector::Zero(2); }, q) == 0.0);
  const ComplexVector c = (ComplexVector(2) << Complex(1, 2), Complex(-0.5, 0)).finished();
  const double t = 1.7;
  CHECK(boundary_metric_sq([&](const Vector&) { return c; }, q) ==
        doctest::Approx(c.squaredNorm() * (kPi * t * t + 2 * kPi * t)).epsilon(1e-6));

  auto identity = [](const Vector& x) { return ComplexVector(x.cast<Complex>()); };
  const double base = boundary_metric_sq(identity, build_sphere_line(1.0, 64, 16, 2));
  const double fine = boundary_metric_sq(identity, build_sphere_line(1.0, 640, 160, 2));
  CHECK(base == doctest::Approx(kPi / 2 + 2 * kPi / 3).epsilon(1e-8));
  CHECK(base == doctest::Approx(fine).epsilon(1e-8));

  const NodeSet ball_only = q.ball;
  auto g = [](const Vector& x) { return ComplexVector::Constant(2, Complex(std::sin(x(0)), x(1))); };
  CHECK(boundary_metric_sq(g, q) >= integrate(ball_only, [&](const Vector& x) { return g(x).squaredNorm(); }));

  const NodeSet all = q.combined();
  CHECK(all.size() == q.ball.size() + q.boundary.size());
  CHECK(integrate(all, [&](const Vector& x) { return g(x).squaredNorm(); }) ==
        doctest::Approx(boundary_metric_sq(g, q)).epsilon(1e-13));

  auto failing = [](const Vector& x) -> ComplexVector {
    if (x.norm() > 1.0) throw DegeneratePoint("bad", x);
    return ComplexVector::Zero(2);
  };
  CHECK_THROWS_AS(boundary_metric_sq(failing, q), DegeneratePoint);
}

TEST_CASE("builds are deterministic") {
  const SphereLineQuadrature a = build_sphere_line(2.0, 256, 16, 3);
  const SphereLineQuadrature b = build_sphere_line(2.0, 256, 16, 3);
  CHECK(a.combined().nodes == b.combined().nodes);
  CHECK(a.combined().weights == b.combined().weights);
  CHECK(build_box(2.0, 24, 3).set.nodes == build_box(2.0, 24, 3).set.nodes);
}

TEST_CASE("defaults") {
  CHECK(default_quadrature(1).per_dim == 128);
  CHECK(default_quadrature(2).per_dim == 48);
  CHECK(default_quadrature(2).sphere_count == 64);
  CHECK(default_quadrature(3).per_dim == 24);
  CHECK(default_quadrature(3).sphere_count == 256);
  CHECK(default_quadrature(3).line_count == 16);
}
