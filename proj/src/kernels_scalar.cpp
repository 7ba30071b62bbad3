#include "sgone/kernels_impl.hpp"

// Reference implementations. These define the kernel semantics; the SIMD
// backends are checked against them.

namespace sgone::kernels::scalar {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(T alpha, T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
void vmul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void vmul_add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <typename T>
void relu_fwd(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T{0}) gx[i] += gy[i];
  }
}

template <typename T>
T sum(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
void sgd_momentum(T* p, const T* g, T* v, std::size_t n, T lr, T momentum, T wd) {
  // Association fixed as mu*v + (g + wd*p) so SIMD variants can match bit-for-bit.
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + (g[i] + wd * p[i]);
    p[i] = p[i] + (-lr) * v[i];
  }
}

template <typename T>
KernelTable<T> make_table() {
  KernelTable<T> t;
  t.dot = &dot<T>;
  t.axpy = &axpy<T>;
  t.scale = &scale<T>;
  t.vmul = &vmul<T>;
  t.vmul_add = &vmul_add<T>;
  t.relu_fwd = &relu_fwd<T>;
  t.relu_bwd = &relu_bwd<T>;
  t.sum = &sum<T>;
  t.sgd_momentum = &sgd_momentum<T>;
  return t;
}

template KernelTable<float> make_table<float>();
template KernelTable<double> make_table<double>();

}  // namespace sgone::kernels::scalar
