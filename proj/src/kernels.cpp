#include "sgone/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "sgone/kernels_impl.hpp"

namespace sgone::kernels {

namespace {

struct Tables {
  KernelTable<double> f64;
  KernelTable<float> f32;
  Backend backend;
};

Tables make_tables(Backend b) {
  switch (b) {
#ifdef SGONE_HAVE_AVX2_BACKEND
    case Backend::avx2:
      return {avx2::make_table<double>(), avx2::make_table<float>(), b};
#endif
#ifdef SGONE_HAVE_NEON_BACKEND
    case Backend::neon:
      return {neon::make_table<double>(), neon::make_table<float>(), b};
#endif
    default:
      return {scalar::make_table<double>(), scalar::make_table<float>(), Backend::scalar};
  }
}

Backend detect_backend() {
  if (const char* env = std::getenv("SGONE_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0 && backend_supported(Backend::avx2)) return Backend::avx2;
    if (std::strcmp(env, "neon") == 0 && backend_supported(Backend::neon)) return Backend::neon;
  }
#ifdef SGONE_HAVE_AVX2_BACKEND
  if (backend_supported(Backend::avx2)) return Backend::avx2;
#endif
#ifdef SGONE_HAVE_NEON_BACKEND
  if (backend_supported(Backend::neon)) return Backend::neon;
#endif
  return Backend::scalar;
}

// Selection happens once at startup and is stable for the process lifetime,
// so runs on one machine are bit-reproducible.
Tables& tables() {
  static Tables t = make_tables(detect_backend());
  return t;
}

template <typename T>
const KernelTable<T>& table();

template <>
const KernelTable<double>& table<double>() {
  return tables().f64;
}

template <>
const KernelTable<float>& table<float>() {
  return tables().f32;
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::neon:
      return "neon";
  }
  return "?";
}

Backend active_backend() { return tables().backend; }

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#ifdef SGONE_HAVE_AVX2_BACKEND
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#ifdef SGONE_HAVE_NEON_BACKEND
      return true;  // baseline on aarch64
#else
      return false;
#endif
  }
  return false;
}

bool set_backend(Backend b) {
  if (!backend_supported(b)) return false;
  tables() = make_tables(b);
  return true;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  return table<T>().dot(a, b, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  table<T>().axpy(alpha, x, y, n);
}

template <typename T>
void scale(T alpha, T* x, std::size_t n) {
  table<T>().scale(alpha, x, n);
}

template <typename T>
void vmul(const T* a, const T* b, T* out, std::size_t n) {
  table<T>().vmul(a, b, out, n);
}

template <typename T>
void vmul_add(const T* a, const T* b, T* out, std::size_t n) {
  table<T>().vmul_add(a, b, out, n);
}

template <typename T>
void relu_fwd(const T* x, T* y, std::size_t n) {
  table<T>().relu_fwd(x, y, n);
}

template <typename T>
void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n) {
  table<T>().relu_bwd(x, gy, gx, n);
}

template <typename T>
T sum(const T* x, std::size_t n) {
  return table<T>().sum(x, n);
}

template <typename T>
void sgd_momentum(T* p, const T* g, T* v, std::size_t n, T lr, T momentum, T wd) {
  table<T>().sgd_momentum(p, g, v, n, lr, momentum, wd);
}

#define SGONE_INSTANTIATE_KERNELS(T)                                          \
  template T dot<T>(const T*, const T*, std::size_t);                         \
  template void axpy<T>(T, const T*, T*, std::size_t);                        \
  template void scale<T>(T, T*, std::size_t);                                 \
  template void vmul<T>(const T*, const T*, T*, std::size_t);                 \
  template void vmul_add<T>(const T*, const T*, T*, std::size_t);             \
  template void relu_fwd<T>(const T*, T*, std::size_t);                       \
  template void relu_bwd<T>(const T*, const T*, T*, std::size_t);             \
  template T sum<T>(const T*, std::size_t);                                   \
  template void sgd_momentum<T>(T*, const T*, T*, std::size_t, T, T, T);

SGONE_INSTANTIATE_KERNELS(float)
SGONE_INSTANTIATE_KERNELS(double)

#undef SGONE_INSTANTIATE_KERNELS

}  // namespace sgone::kernels
