#include "sgone/kernels_impl.hpp"

#ifdef SGONE_HAVE_NEON_BACKEND

#include <arm_neon.h>

#include <cmath>

// NEON variants for aarch64. Kept structurally parallel to the AVX2 backend:
// two-lane doubles / four-lane floats, fixed reduction fold order.

namespace sgone::kernels::neon {

// ---------------------------------------------------------------- double --

double dot_f64(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  for (; i + 2 <= n; i += 2) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void scale_f64(double alpha, double* x, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(va, vld1q_f64(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void vmul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_add_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(out + i, vfmaq_f64(vld1q_f64(out + i), vld1q_f64(a + i), vld1q_f64(b + i)));
  }
  for (; i < n; ++i) out[i] = std::fma(a[i], b[i], out[i]);
}

void relu_fwd_f64(const double* x, double* y, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmaxq_f64(zero, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_f64(const double* x, const double* gy, double* gx, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
    float64x2_t add = vreinterpretq_f64_u64(
        vandq_u64(mask, vreinterpretq_u64_f64(vld1q_f64(gy + i))));
    vst1q_f64(gx + i, vaddq_f64(vld1q_f64(gx + i), add));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += gy[i];
  }
}

double sum_f64(const double* x, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
    acc1 = vaddq_f64(acc1, vld1q_f64(x + i + 2));
  }
  for (; i + 2 <= n; i += 2) acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void sgd_momentum_f64(double* p, const double* g, double* v, std::size_t n, double lr,
                      double momentum, double wd) {
  const float64x2_t vmu = vdupq_n_f64(momentum);
  const float64x2_t vwd = vdupq_n_f64(wd);
  const float64x2_t vlr = vdupq_n_f64(-lr);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vp = vld1q_f64(p + i);
    float64x2_t vv = vld1q_f64(v + i);
    vv = vaddq_f64(vmulq_f64(vmu, vv), vaddq_f64(vld1q_f64(g + i), vmulq_f64(vwd, vp)));
    vst1q_f64(v + i, vv);
    vst1q_f64(p + i, vaddq_f64(vp, vmulq_f64(vlr, vv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + (g[i] + wd * p[i]);
    p[i] = p[i] + (-lr) * v[i];
  }
}

// ----------------------------------------------------------------- float --

float dot_f32(const float* a, const float* b, std::size_t n) {
  float32x4_t acc0 = vdupq_n_f32(0.0f);
  float32x4_t acc1 = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
    acc1 = vfmaq_f32(acc1, vld1q_f32(a + i + 4), vld1q_f32(b + i + 4));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
  }
  float acc = vaddvq_f32(vaddq_f32(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  }
  for (; i < n; ++i) y[i] = std::fmaf(alpha, x[i], y[i]);
}

void scale_f32(float alpha, float* x, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(x + i, vmulq_f32(va, vld1q_f32(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void vmul_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_add_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(out + i, vfmaq_f32(vld1q_f32(out + i), vld1q_f32(a + i), vld1q_f32(b + i)));
  }
  for (; i < n; ++i) out[i] = std::fmaf(a[i], b[i], out[i]);
}

void relu_fwd_f32(const float* x, float* y, std::size_t n) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmaxq_f32(zero, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f32(const float* x, const float* gy, float* gx, std::size_t n) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), zero);
    float32x4_t add = vreinterpretq_f32_u32(
        vandq_u32(mask, vreinterpretq_u32_f32(vld1q_f32(gy + i))));
    vst1q_f32(gx + i, vaddq_f32(vld1q_f32(gx + i), add));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) gx[i] += gy[i];
  }
}

float sum_f32(const float* x, std::size_t n) {
  float32x4_t acc0 = vdupq_n_f32(0.0f);
  float32x4_t acc1 = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = vaddq_f32(acc0, vld1q_f32(x + i));
    acc1 = vaddq_f32(acc1, vld1q_f32(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = vaddq_f32(acc0, vld1q_f32(x + i));
  float acc = vaddvq_f32(vaddq_f32(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void sgd_momentum_f32(float* p, const float* g, float* v, std::size_t n, float lr,
                      float momentum, float wd) {
  const float32x4_t vmu = vdupq_n_f32(momentum);
  const float32x4_t vwd = vdupq_n_f32(wd);
  const float32x4_t vlr = vdupq_n_f32(-lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    float32x4_t vp = vld1q_f32(p + i);
    float32x4_t vv = vld1q_f32(v + i);
    vv = vaddq_f32(vmulq_f32(vmu, vv), vaddq_f32(vld1q_f32(g + i), vmulq_f32(vwd, vp)));
    vst1q_f32(v + i, vv);
    vst1q_f32(p + i, vaddq_f32(vp, vmulq_f32(vlr, vv)));
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

}  // namespace sgone::kernels::neon

#endif  // SGONE_HAVE_NEON_BACKEND
