#include "qbdecon/dp_prior.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <numbers>

using namespace qbd;

namespace {

PriorSpec spec_for(int k, int d) {
  PriorSpec s = PriorSpec::defaults(d);
  s.truncation = k;
  return s;
}

Vector random_coords(const StateLayout& layout, std::mt19937_64& rng, double scale = 1.0) {
  return test::random_matrix(layout.size(), 1, rng, scale);
}

// Kolmogorov-Smirnov distance of a sample to a CDF.
double ks_distance(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  double worst = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    worst = std::max({worst, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
  }
  return worst;
}

}  // namespace

TEST_CASE("stick weights examples") {
  const std::vector<double> a = {0.5, 0.5, 0.5};
  const Vector w = stick_weights(a);
  CHECK(w(0) == 0.5);
  CHECK(w(1) == 0.25);
  CHECK(w(2) == 0.125);
  CHECK(w(3) == 0.125);
  const std::vector<double> b = {1 - 1e-9};
  const Vector wb = stick_weights(b);
  CHECK(wb(0) == doctest::Approx(1.0));
  CHECK(wb(1) == doctest::Approx(1e-9).epsilon(1e-6));
  const std::vector<double> c = {1.0 / 3, 0.5};
  const Vector wc = stick_weights(c);
  for (int j = 0; j < 3; ++j) CHECK(wc(j) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(stick_weights(std::vector<double>{}).size() == 1);
  CHECK_THROWS_AS(stick_weights(std::vector<double>{0.5, 1.0}), DomainError);
  CHECK_THROWS_AS(stick_weights(std::vector<double>{0.0}), DomainError);
}

TEST_CASE("stick weights form a simplex with residual closure") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(9);
    for (auto& x : v) x = u(rng);
    const Vector w = stick_weights(v);
    CHECK((w.array() >= 0).all());
    CHECK(std::abs(w.sum() - 1.0) < 1e-14);
    CHECK(w(9) == doctest::Approx(1.0 - w.head(9).sum()).epsilon(1e-12));
  }
}

TEST_CASE("prior draws are deterministic and have the right atom moments") {
  const PriorSpec s = spec_for(10, 2);
  CHECK(sample_prior(s, 42) == sample_prior(s, 42));
  PriorSpec unit = spec_for(1, 2);
  unit.base_cov = Matrix::Identity(2, 2);
  std::mt19937_64 rng(7);
  Vector sum = Vector::Zero(2);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) sum += sample_prior(unit, rng).atoms().row(0).transpose();
  CHECK((sum / draws).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("larger concentration pushes the first weight toward zero") {
  std::vector<double> medians;
  for (double beta : {2.0, 10.0, 50.0}) {
    PriorSpec s = spec_for(30, 1);
    s.concentration = beta;
    std::mt19937_64 rng(3);
    std::vector<double> first;
    for (int i = 0; i < 2000; ++i) first.push_back(sample_prior(s, rng).weights()(0));
    std::nth_element(first.begin(), first.begin() + 1000, first.end());
    medians.push_back(first[1000]);
  }
  CHECK(medians[0] > medians[1]);
  CHECK(medians[1] > medians[2]);
}

TEST_CASE("constrain examples and round trip") {
  const PriorSpec s = spec_for(2, 1);
  const StateLayout layout = StateLayout::of(s);
  CHECK(layout.size() == 1 + 2 + 1);
  const MixtureParams p = constrain({layout, Vector::Zero(layout.size())}, s);
  CHECK(p.weights()(0) == 0.5);
  CHECK(p.weights()(1) == 0.5);
  CHECK(p.atoms().cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.covariance()(0, 0) == 1.0);

  Vector big = Vector::Zero(layout.size());
  big(0) = 40.0;
  CHECK(constrain({layout, big}, s).weights()(0) == doctest::Approx(1.0));

  std::mt19937_64 rng(5);
  for (int d = 1; d <= 3; ++d) {
    const PriorSpec sd = spec_for(6, d);
    for (int rep = 0; rep < 20; ++rep) {
      const MixtureParams q = sample_prior(sd, rng);
      if ((q.weights().array() < 1e-200).any()) continue;
      const MixtureParams back = constrain(unconstrain(q, sd), sd);
      CHECK((back.weights() - q.weights()).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((back.atoms() - q.atoms()).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((back.covariance() - q.covariance()).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, q.covariance().norm()));
      const Vector z = random_coords(StateLayout::of(sd), rng);
      const UnconstrainedState st{StateLayout::of(sd), z};
      CHECK((unconstrain(constrain(st, sd), sd).coords - z).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  const MixtureParams zero_w = MixtureParams::univariate({1.0, 0.0}, {0, 1}, 1.0);
  CHECK_THROWS_AS(unconstrain(zero_w, s), DomainError);
}

TEST_CASE("log prior gradient matches finite differences") {
  std::mt19937_64 rng(8);
  for (int d = 1; d <= 3; ++d) {
    PriorSpec s = spec_for(4, d);
    s.concentration = 1.7;
    const StateLayout layout = StateLayout::of(s);
    for (int rep = 0; rep < 20; ++rep) {
      const Vector z = random_coords(layout, rng);
      Vector g;
      log_prior({layout, z}, s, &g);
      const Vector fd = test::fd_gradient([&](const Vector& x) { return log_prior({layout, x}, s); }, z, true);
      CHECK(test::max_rel_err(g, fd) < 1e-6);
    }
  }
}

TEST_CASE("log prior is symmetric under atom negation") {
  const PriorSpec s = spec_for(3, 2);
  const StateLayout layout = StateLayout::of(s);
  std::mt19937_64 rng(12);
  const Vector z = random_coords(layout, rng);
  Vector neg = z;
  neg.segment(layout.atom_offset(), 3 * 2) *= -1.0;
  CHECK(log_prior({layout, z}, s) == doctest::Approx(log_prior({layout, neg}, s)).epsilon(1e-14));
}

TEST_CASE("uniform sticks under beta = 1") {
  const PriorSpec s = spec_for(2, 1);
  std::mt19937_64 rng(13);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(sample_prior(s, rng).weights()(0));
  CHECK(ks_distance(v, [](double x) { return x; }) < 1.36 / std::sqrt(5000.0));
  // Density of a stick logit under Beta(1,1) is the logistic Jacobian.
  const StateLayout layout = StateLayout::of(s);
  Vector z = Vector::Zero(layout.size());
  Vector z2 = z;
  z2(0) = 1.3;
  const double v13 = 1 / (1 + std::exp(-1.3));
  CHECK(log_prior({layout, z2}, s) - log_prior({layout, z}, s) ==
        doctest::Approx(std::log(v13 * (1 - v13)) - std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("prior density integrates to one for K = 2, d = 1") {
  // Integrate over the stick logit and log sigma^2 on a grid; the two atom
  // coordinates are independent normals and integrate analytically, so test
  // that the remaining two-dimensional marginal has unit mass.
  const PriorSpec s = spec_for(2, 1);
  const StateLayout layout = StateLayout::of(s);
  const int m = 400;
  const double lo = -30, hi = 30, h = (hi - lo) / m;
  double mass = 0.0;
  for (int a = 0; a < m; ++a) {
    for (int c = 0; c < m; ++c) {
      Vector z = Vector::Zero(layout.size());
      z(0) = lo + (a + 0.5) * h;
      z(layout.cov_offset()) = lo + (c + 0.5) * h;
      mass += std::exp(log_prior({layout, z}, s)) * h * h;
    }
  }
  const double atom_density_at_zero = std::pow(test::normal_pdf(0, 0, 4.0), 2);
  CHECK(mass / atom_density_at_zero == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("LKJ correlations have the marginal Beta law") {
  // Under LKJ(eta) every off-diagonal correlation has marginal
  // Beta(eta - 1 + d/2, eta - 1 + d/2) on (-1, 1); variance 1 / (2a + 1).
  const PriorSpec s = spec_for(1, 3);
  std::mt19937_64 rng(19);
  const int draws = 20000;
  Vector sum_sq = Vector::Zero(3);
  for (int i = 0; i < draws; ++i) {
    const Matrix c = sample_prior(s, rng).covariance();
    const Vector sd = c.diagonal().array().sqrt();
    sum_sq(0) += std::pow(c(1, 0) / (sd(1) * sd(0)), 2);
    sum_sq(1) += std::pow(c(2, 0) / (sd(2) * sd(0)), 2);
    sum_sq(2) += std::pow(c(2, 1) / (sd(2) * sd(1)), 2);
  }
  const double a = 2.0 - 1.0 + 1.5;
  for (int j = 0; j < 3; ++j) CHECK(sum_sq(j) / draws == doctest::Approx(1.0 / (2 * a + 1)).epsilon(0.05));
}

TEST_CASE("inverse-variance tail decays") {
  const PriorSpec s = spec_for(1, 1);
  std::mt19937_64 rng(23);
  std::vector<double> inv;
  for (int i = 0; i < 100000; ++i) inv.push_back(1.0 / sample_prior(s, rng).covariance()(0, 0));
  double prev = 1.0;
  for (double thr : {2.0, 4.0, 8.0, 12.0}) {
    const double frac = std::count_if(inv.begin(), inv.end(), [&](double x) { return x > thr; }) / 1e5;
    CHECK(frac < prev);
    prev = frac;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("pullback gradient matches finite differences of a test function") {
  std::mt19937_64 rng(31);
  for (int d = 1; d <= 3; ++d) {
    const PriorSpec s = spec_for(4, d);
    const StateLayout layout = StateLayout::of(s);
    // f = sum c_j p_j + sum A .* atoms + sum B .* Sigma
    const Vector c = test::random_matrix(4, 1, rng);
    const Matrix a = test::random_matrix(4, d, rng);
    const Matrix b = test::random_matrix(d, d, rng);
    auto f = [&](const Vector& z) {
      const MixtureParams p = constrain({layout, z}, s);
      return c.dot(p.weights()) + (a.cwiseProduct(p.atoms())).sum() + (b.cwiseProduct(p.covariance())).sum();
    };
    for (int rep = 0; rep < 10; ++rep) {
      const Vector z = random_coords(layout, rng);
      const Vector g = pullback_gradient({layout, z}, s, {c, a, b});
      CHECK(test::max_rel_err(g, test::fd_gradient(f, z, true)) < 1e-7);
    }
  }
}
