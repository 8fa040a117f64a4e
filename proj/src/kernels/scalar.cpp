#include "qbdecon/kernels.hpp"

#include <cmath>

namespace qbd::kernels::scalar {

void sincos(std::span<const double> x, std::span<double> s, std::span<double> c) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::sin(x[i]);
    c[i] = std::cos(x[i]);
  }
}

std::complex<double> expi_sum(std::span<const double> x, std::span<const double> w) {
  double re = 0.0;
  double im = 0.0;
  const std::size_t n = x.size();
  if (w.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      re += std::cos(x[i]);
      im += std::sin(x[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      re += w[i] * std::cos(x[i]);
      im += w[i] * std::sin(x[i]);
    }
  }
  return {re, im};
}

}  // namespace qbd::kernels::scalar
