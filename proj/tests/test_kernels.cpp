#include "qbdecon/kernels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace qbd::kernels;

namespace {

std::vector<double> sample_args(std::size_t n, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("scalar sincos matches libm") {
  const auto x = sample_args(1003, 50.0, 1);
  std::vector<double> s(x.size()), c(x.size());
  scalar::sincos(x, s, c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(s[i] == std::sin(x[i]));
    CHECK(c[i] == std::cos(x[i]));
  }
}

#if defined(QBD_HAVE_AVX2)
TEST_CASE("avx2 sincos agrees with the scalar reference") {
  if (!isa_available(Isa::avx2)) {
    MESSAGE("AVX2 not available on this CPU, skipping");
    return;
  }
  for (double scale : {1.0, 100.0, 1e5, 1e7}) {
    // Odd length exercises the tail path.
    const auto x = sample_args(4099, scale, 7);
    std::vector<double> s0(x.size()), c0(x.size()), s1(x.size()), c1(x.size());
    scalar::sincos(x, s0, c0);
    avx2::sincos(x, s1, c1);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max({worst, std::abs(s0[i] - s1[i]), std::abs(c0[i] - c1[i])});
    }
    CHECK(worst < 1e-15 * std::max(1.0, scale * 1e-7) + 4e-16);
  }
}

TEST_CASE("avx2 sincos handles special arguments") {
  if (!isa_available(Isa::avx2)) return;
  std::vector<double> x = {0.0, -0.0, M_PI, -M_PI / 2, 1e9, -3e12, std::nan(""), INFINITY, 1e-300};
  std::vector<double> s(x.size()), c(x.size());
  avx2::sincos(x, s, c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isfinite(x[i])) {
      CHECK(s[i] == doctest::Approx(std::sin(x[i])).epsilon(1e-14));
      CHECK(c[i] == doctest::Approx(std::cos(x[i])).epsilon(1e-14));
    } else {
      CHECK(std::isnan(s[i]));
      CHECK(std::isnan(c[i]));
    }
  }
}

TEST_CASE("avx2 expi_sum agrees with the scalar reference") {
  if (!isa_available(Isa::avx2)) return;
  const auto x = sample_args(10007, 30.0, 3);
  const auto w = sample_args(x.size(), 1.0, 4);
  for (bool weighted : {false, true}) {
    const std::span<const double> ws = weighted ? std::span<const double>(w) : std::span<const double>();
    const auto a = scalar::expi_sum(x, ws);
    const auto b = avx2::expi_sum(x, ws);
    CHECK(std::abs(a - b) < 1e-11);
  }
}
#endif

TEST_CASE("dispatch can be pinned to the reference path") {
  const Isa before = active_isa();
  force_isa(Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  const std::vector<double> x = {0.0, 1.0, 2.0};
  const auto z = expi_sum(x, {});
  CHECK(z.real() == doctest::Approx(1.0 + std::cos(1.0) + std::cos(2.0)));
  CHECK(z.imag() == doctest::Approx(std::sin(1.0) + std::sin(2.0)));
  force_isa(before);
  CHECK(isa_name(Isa::scalar) == "scalar");
}
