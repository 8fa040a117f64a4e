// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; nothing here may be called unless the CPU reports AVX2.

#include "qbdecon/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace qbd::kernels::avx2 {
namespace {

// Cephes sin/cos on [-pi/4, pi/4] with three-part Cody-Waite reduction.
constexpr double kFourOverPi = 1.27323954473516268615;
constexpr double kDp1 = 7.85398125648498535156e-1;
constexpr double kDp2 = 3.77489470793079817668e-8;
constexpr double kDp3 = 2.69515142907905952645e-15;

constexpr double kSin[6] = {1.58962301576546568060e-10, -2.50507477628578072866e-8,
                            2.75573136213857245213e-6,  -1.98412698295895385996e-4,
                            8.33333333332211858878e-3,  -1.66666666666666307295e-1};
constexpr double kCos[6] = {-1.13585365213876817300e-11, 2.08757008419747316778e-9,
                            -2.75573141792967388112e-7,  2.48015872888517045348e-5,
                            -1.38888888888730564116e-3,  4.16666666666665929218e-2};

inline __m256d polevl(__m256d z, const double (&coef)[6]) {
  __m256d acc = _mm256_set1_pd(coef[0]);
  for (int i = 1; i < 6; ++i) {
    acc = _mm256_fmadd_pd(acc, z, _mm256_set1_pd(coef[i]));
  }
  return acc;
}

// True when every lane satisfies |x| <= kReductionLimit (NaN fails).
inline bool in_range(__m256d ax) {
  const __m256d ok = _mm256_cmp_pd(ax, _mm256_set1_pd(kReductionLimit), _CMP_LE_OQ);
  return _mm256_movemask_pd(ok) == 0xF;
}

inline void sincos4(__m256d x, __m256d& s_out, __m256d& c_out) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d ax = _mm256_andnot_pd(sign_mask, x);
  const __m256d x_sign = _mm256_and_pd(sign_mask, x);

  __m256d y = _mm256_round_pd(_mm256_mul_pd(ax, _mm256_set1_pd(kFourOverPi)),
                              _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC);
  // y < 2^27, so adding 2^52 exposes the integer in the low mantissa bits.
  const __m256d magic = _mm256_set1_pd(4503599627370496.0);
  __m256i j = _mm256_castpd_si256(_mm256_add_pd(y, magic));
  const __m256i one = _mm256_set1_epi64x(1);
  const __m256i odd = _mm256_and_si256(j, one);
  j = _mm256_add_epi64(j, odd);
  y = _mm256_add_pd(y, _mm256_and_pd(_mm256_castsi256_pd(_mm256_cmpeq_epi64(odd, one)),
                                     _mm256_set1_pd(1.0)));

  __m256d z = _mm256_fnmadd_pd(y, _mm256_set1_pd(kDp1), ax);
  z = _mm256_fnmadd_pd(y, _mm256_set1_pd(kDp2), z);
  z = _mm256_fnmadd_pd(y, _mm256_set1_pd(kDp3), z);
  const __m256d zz = _mm256_mul_pd(z, z);

  const __m256d ps = _mm256_fmadd_pd(_mm256_mul_pd(z, zz), polevl(zz, kSin), z);
  __m256d pc = _mm256_fnmadd_pd(_mm256_set1_pd(0.5), zz, _mm256_set1_pd(1.0));
  pc = _mm256_fmadd_pd(_mm256_mul_pd(zz, zz), polevl(zz, kCos), pc);

  // j is even here: octant pairs {0,2,4,6} mod 8.
  const __m256i two = _mm256_set1_epi64x(2);
  const __m256i four = _mm256_set1_epi64x(4);
  const __m256d swap = _mm256_castsi256_pd(_mm256_cmpeq_epi64(_mm256_and_si256(j, two), two));
  const __m256d sin_sign = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_and_si256(j, four), 61));
  const __m256i cos_bits =
      _mm256_and_si256(_mm256_xor_si256(_mm256_slli_epi64(j, 1), j), four);
  const __m256d cos_sign = _mm256_castsi256_pd(_mm256_slli_epi64(cos_bits, 61));

  const __m256d sin_mag = _mm256_blendv_pd(ps, pc, swap);
  const __m256d cos_mag = _mm256_blendv_pd(pc, ps, swap);
  s_out = _mm256_xor_pd(_mm256_xor_pd(sin_mag, sin_sign), x_sign);
  c_out = _mm256_xor_pd(cos_mag, cos_sign);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

}  // namespace

void sincos(std::span<const double> x, std::span<double> s, std::span<double> c) {
  const std::size_t n = x.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x.data() + i);
    const __m256d av = _mm256_andnot_pd(_mm256_set1_pd(-0.0), v);
    if (in_range(av)) {
      __m256d sv;
      __m256d cv;
      sincos4(v, sv, cv);
      _mm256_storeu_pd(s.data() + i, sv);
      _mm256_storeu_pd(c.data() + i, cv);
    } else {
      scalar::sincos(x.subspan(i, 4), s.subspan(i, 4), c.subspan(i, 4));
    }
  }
  if (i < n) {
    scalar::sincos(x.subspan(i), s.subspan(i), c.subspan(i));
  }
}

std::complex<double> expi_sum(std::span<const double> x, std::span<const double> w) {
  const std::size_t n = x.size();
  const bool weighted = !w.empty();
  __m256d re = _mm256_setzero_pd();
  __m256d im = _mm256_setzero_pd();
  std::complex<double> tail{0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x.data() + i);
    const __m256d av = _mm256_andnot_pd(_mm256_set1_pd(-0.0), v);
    if (!in_range(av)) {
      tail += scalar::expi_sum(x.subspan(i, 4), weighted ? w.subspan(i, 4) : w);
      continue;
    }
    __m256d sv;
    __m256d cv;
    sincos4(v, sv, cv);
    if (weighted) {
      const __m256d wv = _mm256_loadu_pd(w.data() + i);
      re = _mm256_fmadd_pd(wv, cv, re);
      im = _mm256_fmadd_pd(wv, sv, im);
    } else {
      re = _mm256_add_pd(re, cv);
      im = _mm256_add_pd(im, sv);
    }
  }
  if (i < n) {
    tail += scalar::expi_sum(x.subspan(i), weighted ? w.subspan(i) : w);
  }
  return std::complex<double>(hsum(re), hsum(im)) + tail;
}

}  // namespace qbd::kernels::avx2
