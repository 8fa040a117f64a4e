#include "qbdecon/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace qbd::kernels {
namespace {

Isa detect() {
  if (const char* env = std::getenv("QBD_KERNELS"); env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) {
      return Isa::scalar;
    }
  }
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(QBD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  current().store(isa_available(isa) ? isa : Isa::scalar, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void sincos(std::span<const double> x, std::span<double> s, std::span<double> c) {
#if defined(QBD_HAVE_AVX2)
  if (active_isa() == Isa::avx2) {
    avx2::sincos(x, s, c);
    return;
  }
#endif
  scalar::sincos(x, s, c);
}

std::complex<double> expi_sum(std::span<const double> x, std::span<const double> w) {
#if defined(QBD_HAVE_AVX2)
  if (active_isa() == Isa::avx2) {
    return avx2::expi_sum(x, w);
  }
#endif
  return scalar::expi_sum(x, w);
}

}  // namespace qbd::kernels
