#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops behind the tensor operations. Every kernel has a
// scalar reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at runtime from CPU capabilities. The scalar backend
// defines the semantics; SIMD backends must agree elementwise bit-for-bit for
// the map-style kernels and to reassociation accuracy for the reductions
// (see tests/test_kernels.cpp).
namespace sgone::kernels {

enum class Backend { scalar = 0, avx2 = 1, neon = 2 };

const char* backend_name(Backend b);

// Backend active for all subsequent kernel calls in this process.
Backend active_backend();

// Selects a backend. Returns false (and leaves the active backend unchanged)
// if the CPU does not support it. Intended for tests and benchmarks; normal
// code relies on the startup auto-detection. The SGONE_KERNELS environment
// variable ("scalar", "avx2", "neon") overrides auto-detection.
bool set_backend(Backend b);

bool backend_supported(Backend b);

// ---------------------------------------------------------------------------
// Kernel set. T is float or double.
// ---------------------------------------------------------------------------

// sum_i a[i]*b[i]
template <typename T>
T dot(const T* a, const T* b, std::size_t n);

// y[i] += alpha * x[i]
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

// x[i] *= alpha
template <typename T>
void scale(T alpha, T* x, std::size_t n);

// out[i] = a[i] * b[i]
template <typename T>
void vmul(const T* a, const T* b, T* out, std::size_t n);

// out[i] += a[i] * b[i]
template <typename T>
void vmul_add(const T* a, const T* b, T* out, std::size_t n);

// y[i] = max(0, x[i])
template <typename T>
void relu_fwd(const T* x, T* y, std::size_t n);

// gx[i] += x[i] > 0 ? gy[i] : 0
template <typename T>
void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n);

// sum_i x[i]
template <typename T>
T sum(const T* x, std::size_t n);

// v[i] = momentum*v[i] + g[i] + wd*p[i];  p[i] -= lr*v[i]
template <typename T>
void sgd_momentum(T* p, const T* g, T* v, std::size_t n, T lr, T momentum, T wd);

}  // namespace sgone::kernels
