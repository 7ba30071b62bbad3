#include "sgone/kernels_impl.hpp"

#ifdef SGONE_HAVE_AVX2_BACKEND

#include <immintrin.h>

// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma;
// nothing here runs unless the dispatcher verified CPU support.
//
// Reductions (dot, sum) use four independent lanes folded in a fixed order,
// so results are deterministic per backend but may differ from the scalar
// reference by reassociation error. Map-style kernels are elementwise and
// bit-identical to the reference, except dot/axpy-free kernels involving FMA
// contraction never contract across elements.

namespace sgone::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  return _mm_cvtss_f32(_mm_add_ss(sums, shuf));
}

}  // namespace

// ---------------------------------------------------------------- double --

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void scale_f64(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void vmul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_add_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vo = _mm256_loadu_pd(out + i);
    vo = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), vo);
    _mm256_storeu_pd(out + i, vo);
  }
  for (; i < n; ++i) out[i] = std::fma(a[i], b[i], out[i]);
}

void relu_fwd_f64(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_f64(const double* x, const double* gy, double* gx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    __m256d add = _mm256_and_pd(mask, _mm256_loadu_pd(gy + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), add));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += gy[i];
  }
}

double sum_f64(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void sgd_momentum_f64(double* p, const double* g, double* v, std::size_t n, double lr,
                      double momentum, double wd) {
  const __m256d vmu = _mm256_set1_pd(momentum);
  const __m256d vwd = _mm256_set1_pd(wd);
  const __m256d vlr = _mm256_set1_pd(-lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vp = _mm256_loadu_pd(p + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vv = _mm256_add_pd(_mm256_mul_pd(vmu, vv),
                       _mm256_add_pd(_mm256_loadu_pd(g + i), _mm256_mul_pd(vwd, vp)));
    _mm256_storeu_pd(v + i, vv);
    _mm256_storeu_pd(p + i, _mm256_add_pd(vp, _mm256_mul_pd(vlr, vv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + (g[i] + wd * p[i]);
    p[i] = p[i] + (-lr) * v[i];
  }
}

// ----------------------------------------------------------------- float --

float dot_f32(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void scale_f32(float alpha, float* x, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void vmul_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_add_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vo = _mm256_loadu_ps(out + i);
    vo = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), vo);
    _mm256_storeu_ps(out + i, vo);
  }
  for (; i < n; ++i) out[i] = std::fma(a[i], b[i], out[i]);
}

void relu_fwd_f32(const float* x, float* y, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f32(const float* x, const float* gy, float* gx, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    __m256 add = _mm256_and_ps(mask, _mm256_loadu_ps(gy + i));
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), add));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) gx[i] += gy[i];
  }
}

float sum_f32(const float* x, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_add_ps(acc0, _mm256_loadu_ps(x + i));
    acc1 = _mm256_add_ps(acc1, _mm256_loadu_ps(x + i + 8));
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_add_ps(acc0, _mm256_loadu_ps(x + i));
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void sgd_momentum_f32(float* p, const float* g, float* v, std::size_t n, float lr,
                      float momentum, float wd) {
  const __m256 vmu = _mm256_set1_ps(momentum);
  const __m256 vwd = _mm256_set1_ps(wd);
  const __m256 vlr = _mm256_set1_ps(-lr);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vp = _mm256_loadu_ps(p + i);
    __m256 vv = _mm256_loadu_ps(v + i);
    vv = _mm256_add_ps(_mm256_mul_ps(vmu, vv),
                       _mm256_add_ps(_mm256_loadu_ps(g + i), _mm256_mul_ps(vwd, vp)));
    _mm256_storeu_ps(v + i, vv);
    _mm256_storeu_ps(p + i, _mm256_add_ps(vp, _mm256_mul_ps(vlr, vv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + (g[i] + wd * p[i]);
    p[i] = p[i] + (-lr) * v[i];
  }
}

template <>
KernelTable<double> make_table<double>() {
  KernelTable<double> t;
  t.dot = &dot_f64;
  t.axpy = &axpy_f64;
  t.scale = &scale_f64;
  t.vmul = &vmul_f64;
  t.vmul_add = &vmul_add_f64;
  t.relu_fwd = &relu_fwd_f64;
  t.relu_bwd = &relu_bwd_f64;
  t.sum = &sum_f64;
  t.sgd_momentum = &sgd_momentum_f64;
  return t;
}

template <>
KernelTable<float> make_table<float>() {
  KernelTable<float> t;
  t.dot = &dot_f32;
  t.axpy = &axpy_f32;
  t.scale = &scale_f32;
  t.vmul = &vmul_f32;
  t.vmul_add = &vmul_add_f32;
  t.relu_fwd = &relu_fwd_f32;
  t.relu_bwd = &relu_bwd_f32;
  t.sum = &sum_f32;
  t.sgd_momentum = &sgd_momentum_f32;
  return t;
}

}  // namespace sgone::kernels::avx2

#endif  // SGONE_HAVE_AVX2_BACKEND
