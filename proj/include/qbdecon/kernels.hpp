#pragma once

// Data-parallel inner loops shared by the characteristic-function code.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant compiled in its own translation unit. The dispatched
// entry points pick the variant once per process from CPUID; setting
// QBD_KERNELS=scalar in the environment (or calling force_isa) pins the
// reference path. Variants agree to within a few ulp, not bit-for-bit.

#include <complex>
#include <cstddef>
#include <span>
#include <string_view>

namespace qbd::kernels {

enum class Isa { scalar, avx2 };

Isa active_isa();
bool isa_available(Isa isa);
void force_isa(Isa isa);
std::string_view isa_name(Isa isa);

// s[i] = sin(x[i]), c[i] = cos(x[i]).
void sincos(std::span<const double> x, std::span<double> s, std::span<double> c);

// sum_i w[i] * exp(i * x[i]); an empty weight span means unit weights.
std::complex<double> expi_sum(std::span<const double> x, std::span<const double> w);

namespace scalar {
void sincos(std::span<const double> x, std::span<double> s, std::span<double> c);
std::complex<double> expi_sum(std::span<const double> x, std::span<const double> w);
}  // namespace scalar

#if defined(QBD_HAVE_AVX2)
namespace avx2 {
// Arguments with |x| > kReductionLimit (or non-finite) fall back to libm
// lane by lane; below it the Cody-Waite reduction is exact.
inline constexpr double kReductionLimit = 1e8;
void sincos(std::span<const double> x, std::span<double> s, std::span<double> c);
std::complex<double> expi_sum(std::span<const double> x, std::span<const double> w);
}  // namespace avx2
#endif

}  // namespace qbd::kernels
