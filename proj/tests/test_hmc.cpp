#include "qbdecon/error.hpp"
#include "qbdecon/hmc.hpp"
#include "test_util.hpp"

#include <algorithm>

using namespace qbd;

namespace {

LogDensityFn std_normal() {
  return [](const Vector& x, Vector* g) {
    if (g) *g = -x;
    return -0.5 * x.squaredNorm();
  };
}

LogDensityFn correlated(double rho) {
  Matrix cov(2, 2);
  cov << 1, rho, rho, 1;
  const Matrix prec = cov.inverse();
  return [prec](const Vector& x, Vector* g) {
    const Vector px = prec * x;
    if (g) *g = -px;
    return -0.5 * x.dot(px);
  };
}

HMCConfig small_config(int warmup, int draws, std::uint64_t seed) {
  HMCConfig c;
  c.warmup = warmup;
  c.draws = draws;
  c.seed = seed;
  c.chains = 1;
  return c;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_distance(Vector x) {
  std::sort(x.data(), x.data() + x.size());
  const double n = double(x.size());
  double d = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double f = normal_cdf(x(i));
    d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  return d;
}

}  // namespace

TEST_CASE("leapfrog is reversible") {
  // A non-quadratic smooth target.
  LogDensityFn target = [](const Vector& x, Vector* g) {
    if (g) {
      *g = -x;
      (*g)(0) -= std::sin(x(0)) + 0.1 * x(1);
      (*g)(1) -= 0.1 * x(0);
    }
    return -0.5 * x.squaredNorm() + std::cos(x(0)) - 0.1 * x(0) * x(1);
  };
  Vector q(3), p(3);
  q << 0.3, -1.2, 0.7;
  p << 1.1, 0.4, -0.9;
  Vector q1 = q, p1 = p;
  for (int i = 0; i < 5; ++i) REQUIRE(leapfrog(q1, p1, 0.17, target));
  p1 = -p1;
  for (int i = 0; i < 5; ++i) REQUIRE(leapfrog(q1, p1, 0.17, target));
  CHECK((q1 - q).norm() < 1e-12);
  CHECK((p1 + p).norm() < 1e-12);
}

TEST_CASE("leapfrog energy error is second order over a fixed time") {
  const LogDensityFn target = std_normal();
  auto energy_error = [&](int steps) {
    PhasePoint z;
    z.q = Vector::Constant(1, 0.8);
    z.p = Vector::Constant(1, 0.5);
    z.grad = -z.q;
    z.logp = -0.5 * z.q.squaredNorm();
    const Vector m = Vector::Ones(1);
    const double h0 = hamiltonian(z, m);
    for (int i = 0; i < steps; ++i) REQUIRE(leapfrog(z, 1.0 / steps, m, target));
    return std::abs(hamiltonian(z, m) - h0);
  };
  for (int steps : {10, 20, 40}) {
    const double ratio = energy_error(steps) / energy_error(2 * steps);
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.1));
  }
}

TEST_CASE("flat target moves in straight lines") {
  LogDensityFn flat = [](const Vector& x, Vector* g) {
    if (g) *g = Vector::Zero(x.size());
    return 0.0;
  };
  PhasePoint z;
  z.q = Vector::Zero(2);
  z.p = (Vector(2) << 0.3, -0.7).finished();
  z.grad = Vector::Zero(2);
  const Vector m = Vector::Ones(2);
  const double h0 = hamiltonian(z, m);
  REQUIRE(leapfrog(z, 0.5, m, flat));
  CHECK(hamiltonian(z, m) == h0);
  CHECK(z.q(0) == 0.15);
  CHECK(z.q(1) == -0.35);
}

TEST_CASE("leapfrog flags non-finite gradients") {
  LogDensityFn cliff = [](const Vector& x, Vector* g) {
    if (g) *g = -x;
    return x(0) > 1.0 ? -std::numeric_limits<double>::infinity() : -0.5 * x.squaredNorm();
  };
  Vector q = Vector::Constant(1, 0.9), p = Vector::Constant(1, 5.0);
  CHECK_FALSE(leapfrog(q, p, 0.5, cliff));
}

TEST_CASE("standard normal in five dimensions") {
  const PosteriorChain c = nuts_sample(std_normal(), small_config(1000, 2000, 11), Vector::Zero(5));
  REQUIRE(c.draws.rows() == 2000);
  CHECK(c.log_density.allFinite());
  for (int j = 0; j < 5; ++j) {
    const Vector x = c.draws.col(j);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / (x.size() - 1);
    CHECK(std::abs(mean) <= 0.1);
    CHECK(var >= 0.8);
    CHECK(var <= 1.2);
  }
  CHECK(std::abs(c.mean_accept - 0.8) <= 0.1);
  CHECK(c.divergences == 0);
}

TEST_CASE("correlated normal") {
  const PosteriorChain c = nuts_sample(correlated(0.9), small_config(1000, 4000, 5), Vector::Zero(2));
  const Matrix centered = c.draws.rowwise() - c.draws.colwise().mean();
  const Matrix cov = centered.transpose() * centered / double(c.draws.rows() - 1);
  const double corr = cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1));
  CHECK(std::abs(corr - 0.9) <= 0.05);
  CHECK(std::abs(c.mean_accept - 0.8) <= 0.1);
}

TEST_CASE("same seed gives identical chains") {
  HMCConfig cfg = small_config(200, 100, 42);
  cfg.chains = 3;
  auto init = [](std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Vector x(3);
    for (int i = 0; i < 3; ++i) x(i) = n(rng);
    return x;
  };
  const auto a = run_chains(std_normal(), cfg, init);
  const auto b = run_chains(std_normal(), cfg, init);
  REQUIRE(a.size() == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(a[c].draws == b[c].draws);
    CHECK(a[c].log_density == b[c].log_density);
    CHECK(a[c].seed == 42u + c);
  }
  CHECK(a[0].draws != a[1].draws);

  cfg.threads = 1;
  const auto serial = run_chains(std_normal(), cfg, init);
  for (int c = 0; c < 3; ++c) CHECK(serial[c].draws == a[c].draws);
}

TEST_CASE("initialization retries and explicit init") {
  LogDensityFn half = [](const Vector& x, Vector* g) {
    if (g) *g = -x;
    return x(0) < 0 ? -std::numeric_limits<double>::infinity() : -0.5 * x.squaredNorm();
  };
  HMCConfig cfg = small_config(50, 20, 3);
  cfg.chains = 2;
  int calls = 0;
  auto negative = [&](std::mt19937_64&) {
    ++calls;
    return Vector::Constant(1, -1.0);
  };
  cfg.threads = 1;
  CHECK_THROWS_AS(run_chains(half, cfg, negative), SamplerAbort);
  CHECK(calls == cfg.init_tries);
  const auto chains = run_chains(half, cfg, negative, Vector::Constant(1, 0.5));
  CHECK(chains.size() == 2);
  for (const auto& c : chains) CHECK(c.log_density.allFinite());
  CHECK_THROWS_AS(nuts_sample(half, cfg, Vector::Constant(1, -1.0)), SamplerAbort);
}

TEST_CASE("persistent divergences abort") {
  // Flat inside a box: trajectories never turn and always leave it.
  LogDensityFn box = [](const Vector& x, Vector* g) {
    if (g) *g = Vector::Zero(x.size());
    return x.cwiseAbs().maxCoeff() < 1.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(nuts_sample(box, small_config(100, 100, 9), Vector::Zero(2)), SamplerAbort);
}

TEST_CASE("config validation") {
  HMCConfig c;
  c.draws = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = HMCConfig{};
  c.target_accept = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(HMCConfig{}.validate());
}

TEST_CASE("KS distance to the standard normal") {
  int ok = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const PosteriorChain c = nuts_sample(std_normal(), small_config(1000, 10000, 100 + seed), Vector::Zero(1));
    ok += ks_distance(c.draws.col(0)) <= 0.03;
  }
  CHECK(ok >= 19);
}

TEST_CASE("R-hat examples") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  for (int coord = 0; coord < 10; ++coord) {
    std::vector<Vector> chains;
    for (int c = 0; c < 4; ++c) {
      Vector x(1000);
      for (auto& v : x) v = n(rng);
      chains.push_back(x);
    }
    const auto r = split_rhat(chains);
    REQUIRE(r.has_value());
    CHECK(*r <= 1.01);
    const auto e = ess_bulk(chains);
    REQUIRE(e.has_value());
    CHECK(*e > 3000);
  }
  const std::vector<Vector> fixed = {Vector::Constant(100, 1.0), Vector::Constant(100, 3.0)};
  const auto r = split_rhat(fixed);
  REQUIRE(r.has_value());
  CHECK(*r > 2.0);
  CHECK_FALSE(split_rhat({Vector::Constant(50, 2.5)}).has_value());
  CHECK_FALSE(ess_bulk({Vector::Constant(50, 2.5)}).has_value());
  CHECK_THROWS_AS(split_rhat({Vector::Zero(3)}), InvalidParameter);
}

TEST_CASE("autocorrelated chains have smaller ESS") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<Vector> chains;
  for (int c = 0; c < 4; ++c) {
    Vector x(2000);
    double prev = 0.0;
    for (auto& v : x) prev = v = 0.9 * prev + std::sqrt(1 - 0.81) * n(rng);
    chains.push_back(x);
  }
  // AR(1) with phi = 0.9: integrated autocorrelation time 19.
  const double e = *ess_bulk(chains);
  CHECK(e == doctest::Approx(8000.0 / 19).epsilon(0.25));
}

TEST_CASE("diagnose merges chains") {
  HMCConfig cfg = small_config(500, 500, 8);
  cfg.chains = 4;
  auto init = [](std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    return Vector::Constant(2, n(rng));
  };
  const auto chains = run_chains(std_normal(), cfg, init);
  const Diagnostics d = diagnose(chains);
  CHECK(d.rhat.size() == 2);
  CHECK(d.chains == 4);
  CHECK(d.draws_per_chain == 500);
  REQUIRE(d.max_rhat().has_value());
  CHECK(*d.max_rhat() < 1.05);
  CHECK(*d.min_ess() > 200);
  CHECK(d.divergences == 0);
}
