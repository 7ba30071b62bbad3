#pragma once

#include <cstddef>

#include "sgone/kernels.hpp"

// Internal: per-backend function tables. Each backend TU fills one table per
// scalar type; the dispatcher picks one at startup.
namespace sgone::kernels {

template <typename T>
struct KernelTable {
  T (*dot)(const T*, const T*, std::size_t) = nullptr;
  void (*axpy)(T, const T*, T*, std::size_t) = nullptr;
  void (*scale)(T, T*, std::size_t) = nullptr;
  void (*vmul)(const T*, const T*, T*, std::size_t) = nullptr;
  void (*vmul_add)(const T*, const T*, T*, std::size_t) = nullptr;
  void (*relu_fwd)(const T*, T*, std::size_t) = nullptr;
  void (*relu_bwd)(const T*, const T*, T*, std::size_t) = nullptr;
  T (*sum)(const T*, std::size_t) = nullptr;
  void (*sgd_momentum)(T*, const T*, T*, std::size_t, T, T, T) = nullptr;
};

namespace scalar {
template <typename T>
KernelTable<T> make_table();
}

#if defined(__x86_64__) || defined(_M_X64)
#define SGONE_HAVE_AVX2_BACKEND 1
namespace avx2 {
template <typename T>
KernelTable<T> make_table();
}
#endif

#if defined(__aarch64__)
#define SGONE_HAVE_NEON_BACKEND 1
namespace neon {
template <typename T>
KernelTable<T> make_table();
}
#endif

}  // namespace sgone::kernels
