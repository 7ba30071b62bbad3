#include "sgone/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "sgone/kernels.hpp"

namespace sgone::ops {

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                     (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined tensor"));
  }
}

// Records a backward rule when tracking is on for this op's inputs.
template <typename T, typename Fn>
void record_if(bool track, Fn&& fn) {
  if (track) GradTape<T>::active()->record(std::forward<Fn>(fn));
}

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (GradTape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// im2col, row-major in l = (ic*k + ky)*k + kx, column-major in output site
// s = oy*ow + ox. Each row of length oh*ow is contiguous, which lets the
// convolution loops run on whole rows with the axpy/dot kernels.
template <typename T>
void im2col(const T* in, int c_in, int h, int w, int k, int stride, int padding, int oh, int ow,
            T* col) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t sites = static_cast<std::int64_t>(oh) * ow;
  std::int64_t l = 0;
  for (int ic = 0; ic < c_in; ++ic) {
    const T* in_c = in + ic * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++l) {
        T* row = col + l * sites;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          T* dst = row + static_cast<std::int64_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = in_c + static_cast<std::int64_t>(iy) * w;
          if (stride == 1) {
            const int ix0 = -padding + kx;
            int ox = 0;
            for (; ox < ow && ix0 + ox < 0; ++ox) dst[ox] = T{0};
            const int valid_end = std::min(ow, w - ix0);
            if (valid_end > ox) {
              std::memcpy(dst + ox, src + ix0 + ox,
                          sizeof(T) * static_cast<std::size_t>(valid_end - ox));
              ox = valid_end;
            }
            for (; ox < ow; ++ox) dst[ox] = T{0};
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - padding + kx;
              dst[ox] = (ix < 0 || ix >= w) ? T{0} : src[ix];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a column gradient back into the input gradient.
template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int k, int stride, int padding, int oh,
                int ow, T* gin) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t sites = static_cast<std::int64_t>(oh) * ow;
  std::int64_t l = 0;
  for (int ic = 0; ic < c_in; ++ic) {
    T* g_c = gin + ic * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++l) {
        const T* row = col + l * sites;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          T* g_row = g_c + static_cast<std::int64_t>(iy) * w;
          const T* src = row + static_cast<std::int64_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < w) g_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ------------------------------------------------------------------ conv --

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  if (stride < 1) throw ShapeError("conv2d stride must be positive");
  if (padding < 0) throw ShapeError("conv2d padding must be non-negative");

  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != c_in || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d kernel " + shape_str(kernel.shape()) + " does not match input " +
                     shape_str(input.shape()));
  }
  if (bias.dim(0) != c_out) {
    throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " does not match kernel " +
                     shape_str(kernel.shape()));
  }
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw ShapeError("conv2d kernel " + shape_str(kernel.shape()) +
                     " larger than padded input " + shape_str(input.shape()) + " with padding " +
                     std::to_string(padding));
  }

  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  const std::int64_t sites = static_cast<std::int64_t>(oh) * ow;
  const std::int64_t len = static_cast<std::int64_t>(c_in) * k * k;

  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(len * sites));
  im2col(input.data().data(), c_in, h, w, k, stride, padding, oh, ow, col->data());

  Tensor<T> out = Tensor<T>::zeros({c_out, oh, ow});
  {
    T* o = out.mutable_data().data();
    const T* wgt = kernel.data().data();
    const T* b = bias.data().data();
    for (int oc = 0; oc < c_out; ++oc) {
      T* o_row = o + oc * sites;
      std::fill(o_row, o_row + sites, b[oc]);
      const T* w_row = wgt + oc * len;
      for (std::int64_t l = 0; l < len; ++l) {
        kernels::axpy(w_row[l], col->data() + l * sites, o_row, sites);
      }
    }
  }

  const bool track = tracking<T>({&input, &kernel, &bias});
  out.set_requires_grad(track);
  record_if<T>(track, [input, kernel, bias, out, col, stride, padding, oh, ow]() mutable {
    if (!out.has_grad()) return;
    const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int c_out = kernel.dim(0), k = kernel.dim(2);
    const std::int64_t sites = static_cast<std::int64_t>(oh) * ow;
    const std::int64_t len = static_cast<std::int64_t>(c_in) * k * k;
    const T* gy = out.grad().data();
    if (bias.requires_grad()) {
      T* gb = bias.grad_accum().data();
      for (int oc = 0; oc < c_out; ++oc) gb[oc] += kernels::sum(gy + oc * sites, sites);
    }
    if (kernel.requires_grad()) {
      T* gw = kernel.grad_accum().data();
      for (int oc = 0; oc < c_out; ++oc) {
        T* gw_row = gw + oc * len;
        const T* gy_row = gy + oc * sites;
        for (std::int64_t l = 0; l < len; ++l) {
          gw_row[l] += kernels::dot(gy_row, col->data() + l * sites, sites);
        }
      }
    }
    if (input.requires_grad()) {
      std::vector<T> gcol(static_cast<std::size_t>(len * sites), T{0});
      const T* wgt = kernel.data().data();
      for (int oc = 0; oc < c_out; ++oc) {
        const T* w_row = wgt + oc * len;
        const T* gy_row = gy + oc * sites;
        for (std::int64_t l = 0; l < len; ++l) {
          kernels::axpy(w_row[l], gy_row, gcol.data() + l * sites, sites);
        }
      }
      col2im_add(gcol.data(), c_in, h, w, k, stride, padding, oh, ow,
                 input.grad_accum().data());
    }
  });
  return out;
}

// --------------------------------------------------------------- maxpool --

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int window, int stride) {
  require_rank(input, 3, "maxpool2d input");
  if (window < 1 || stride < 1) throw ShapeError("maxpool2d window/stride must be positive");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < window || w < window) {
    throw ShapeError("maxpool2d input " + shape_str(input.shape()) +
                     " smaller than window " + std::to_string(window));
  }
  const int oh = (h - window) / stride + 1;
  const int ow = (w - window) / stride + 1;

  Tensor<T> out = Tensor<T>::zeros({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(c) * oh * ow);
  {
    const T* in = input.data().data();
    T* o = out.mutable_data().data();
    std::int64_t oi = 0;
    for (int ic = 0; ic < c; ++ic) {
      const T* plane = in + static_cast<std::int64_t>(ic) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          const int iy0 = oy * stride, ix0 = ox * stride;
          T best = plane[static_cast<std::int64_t>(iy0) * w + ix0];
          std::int32_t best_at = iy0 * w + ix0;
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              const std::int32_t at = (iy0 + ky) * w + (ix0 + kx);
              const T v = plane[at];
              if (v > best) {  // ties keep the first site in scan order
                best = v;
                best_at = at;
              }
            }
          }
          o[oi] = best;
          (*argmax)[static_cast<std::size_t>(oi)] = best_at;
        }
      }
    }
  }

  const bool track = tracking<T>({&input});
  out.set_requires_grad(track);
  record_if<T>(track, [input, out, argmax]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int oh = out.dim(1), ow = out.dim(2);
    const T* gy = out.grad().data();
    T* gx = input.grad_accum().data();
    std::int64_t oi = 0;
    for (int ic = 0; ic < c; ++ic) {
      T* plane = gx + static_cast<std::int64_t>(ic) * h * w;
      for (std::int64_t s = 0; s < static_cast<std::int64_t>(oh) * ow; ++s, ++oi) {
        plane[(*argmax)[static_cast<std::size_t>(oi)]] += gy[oi];
      }
    }
  });
  return out;
}

// ------------------------------------------------------------------ relu --

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = Tensor<T>::zeros(input.shape());
  kernels::relu_fwd(input.data().data(), out.mutable_data().data(),
                    static_cast<std::size_t>(input.numel()));
  const bool track = tracking<T>({&input});
  out.set_requires_grad(track);
  record_if<T>(track, [input, out]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    kernels::relu_bwd(input.data().data(), out.grad().data(), input.grad_accum().data(),
                      static_cast<std::size_t>(input.numel()));
  });
  return out;
}

// ---------------------------------------------------------------- resize --

namespace {

struct Lerp {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

inline Lerp make_lerp(int in_size, int out_size) {
  Lerp l;
  l.lo.resize(out_size);
  l.hi.resize(out_size);
  l.frac.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int d = 0; d < out_size; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(s);
    l.lo[d] = lo;
    l.hi[d] = std::min(lo + 1, in_size - 1);
    l.frac[d] = s - lo;
  }
  return l;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w) {
  require_rank(input, 3, "bilinear_resize input");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize output size must be positive");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);

  const Lerp ly = make_lerp(h, out_h);
  const Lerp lx = make_lerp(w, out_w);

  Tensor<T> out = Tensor<T>::zeros({c, out_h, out_w});
  {
    const T* in = input.data().data();
    T* o = out.mutable_data().data();
    for (int ic = 0; ic < c; ++ic) {
      const T* plane = in + static_cast<std::int64_t>(ic) * h * w;
      T* oplane = o + static_cast<std::int64_t>(ic) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const T* r0 = plane + static_cast<std::int64_t>(ly.lo[oy]) * w;
        const T* r1 = plane + static_cast<std::int64_t>(ly.hi[oy]) * w;
        const T fy = static_cast<T>(ly.frac[oy]);
        T* orow = oplane + static_cast<std::int64_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = lx.lo[ox], x1 = lx.hi[ox];
          const T fx = static_cast<T>(lx.frac[ox]);
          // lerp form: exact for identity (frac == 0) and constant input
          const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
          const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
          orow[ox] = top + fy * (bot - top);
        }
      }
    }
  }

  const bool track = tracking<T>({&input});
  out.set_requires_grad(track);
  record_if<T>(track, [input, out, ly, lx]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int out_h = out.dim(1), out_w = out.dim(2);
    const T* gy = out.grad().data();
    T* gx = input.grad_accum().data();
    for (int ic = 0; ic < c; ++ic) {
      T* gplane = gx + static_cast<std::int64_t>(ic) * h * w;
      const T* goplane = gy + static_cast<std::int64_t>(ic) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const std::int64_t y0 = ly.lo[oy], y1 = ly.hi[oy];
        const T fy = static_cast<T>(ly.frac[oy]);
        const T* grow = goplane + static_cast<std::int64_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const std::int64_t x0 = lx.lo[ox], x1 = lx.hi[ox];
          const T fx = static_cast<T>(lx.frac[ox]);
          const T g = grow[ox];
          gplane[y0 * w + x0] += (T{1} - fy) * (T{1} - fx) * g;
          gplane[y0 * w + x1] += (T{1} - fy) * fx * g;
          gplane[y1 * w + x0] += fy * (T{1} - fx) * g;
          gplane[y1 * w + x1] += fy * fx * g;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------- concat/slice --

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 3, "concat_channels lhs");
  require_rank(b, 3, "concat_channels rhs");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels spatial mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const int ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor<T> out = Tensor<T>::zeros({ca + cb, h, w});
  {
    T* o = out.mutable_data().data();
    std::memcpy(o, a.data().data(), sizeof(T) * static_cast<std::size_t>(a.numel()));
    std::memcpy(o + a.numel(), b.data().data(), sizeof(T) * static_cast<std::size_t>(b.numel()));
  }
  const bool track = tracking<T>({&a, &b});
  out.set_requires_grad(track);
  record_if<T>(track, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const T* gy = out.grad().data();
    if (a.requires_grad()) {
      kernels::axpy(T{1}, gy, a.grad_accum().data(), static_cast<std::size_t>(a.numel()));
    }
    if (b.requires_grad()) {
      kernels::axpy(T{1}, gy + a.numel(), b.grad_accum().data(),
                    static_cast<std::size_t>(b.numel()));
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int count) {
  require_rank(input, 3, "slice_channels input");
  if (begin < 0 || count < 0 || begin + count > input.dim(0)) {
    throw ShapeError("slice_channels range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_str(input.shape()));
  }
  const int h = input.dim(1), w = input.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor<T> out = Tensor<T>::zeros({count, h, w});
  std::memcpy(out.mutable_data().data(), input.data().data() + begin * plane,
              sizeof(T) * static_cast<std::size_t>(count * plane));
  const bool track = tracking<T>({&input});
  out.set_requires_grad(track);
  record_if<T>(track, [input, out, begin]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    const std::int64_t plane = static_cast<std::int64_t>(input.dim(1)) * input.dim(2);
    kernels::axpy(T{1}, out.grad().data(), input.grad_accum().data() + begin * plane,
                  static_cast<std::size_t>(out.numel()));
  });
  return out;
}

template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& input, int out_h, int out_w) {
  require_rank(input, 3, "crop_spatial input");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw ShapeError("crop_spatial target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " invalid for " + shape_str(input.shape()));
  }
  if (out_h == h && out_w == w) return input;
  Tensor<T> out = Tensor<T>::zeros({c, out_h, out_w});
  {
    const T* in = input.data().data();
    T* o = out.mutable_data().data();
    for (int ic = 0; ic < c; ++ic) {
      for (int y = 0; y < out_h; ++y) {
        std::memcpy(o + (static_cast<std::int64_t>(ic) * out_h + y) * out_w,
                    in + (static_cast<std::int64_t>(ic) * h + y) * w,
                    sizeof(T) * static_cast<std::size_t>(out_w));
      }
    }
  }
  const bool track = tracking<T>({&input});
  out.set_requires_grad(track);
  record_if<T>(track, [input, out]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int out_h = out.dim(1), out_w = out.dim(2);
    const T* gy = out.grad().data();
    T* gx = input.grad_accum().data();
    for (int ic = 0; ic < c; ++ic) {
      for (int y = 0; y < out_h; ++y) {
        kernels::axpy(T{1}, gy + (static_cast<std::int64_t>(ic) * out_h + y) * out_w,
                      gx + (static_cast<std::int64_t>(ic) * h + y) * w,
                      static_cast<std::size_t>(out_w));
      }
    }
  });
  return out;
}

// ------------------------------------------------------- mul / broadcast --

template <typename T>
Tensor<T> elementwise_mul_broadcast(const Tensor<T>& features, const Tensor<T>& map) {
  require_rank(features, 3, "elementwise_mul_broadcast features");
  require_rank(map, 3, "elementwise_mul_broadcast map");
  if (map.dim(0) != 1 || map.dim(1) != features.dim(1) || map.dim(2) != features.dim(2)) {
    throw ShapeError("elementwise_mul_broadcast map " + shape_str(map.shape()) +
                     " does not broadcast over features " + shape_str(features.shape()));
  }
  const int c = features.dim(0);
  const std::size_t plane = static_cast<std::size_t>(features.dim(1)) * features.dim(2);
  Tensor<T> out = Tensor<T>::zeros(features.shape());
  {
    const T* f = features.data().data();
    const T* m = map.data().data();
    T* o = out.mutable_data().data();
    for (int ic = 0; ic < c; ++ic) kernels::vmul(f + ic * plane, m, o + ic * plane, plane);
  }
  const bool track = tracking<T>({&features, &map});
  out.set_requires_grad(track);
  record_if<T>(track, [features, map, out]() mutable {
    if (!out.has_grad()) return;
    const int c = features.dim(0);
    const std::size_t plane = static_cast<std::size_t>(features.dim(1)) * features.dim(2);
    const T* gy = out.grad().data();
    if (features.requires_grad()) {
      T* gf = features.grad_accum().data();
      const T* m = map.data().data();
      for (int ic = 0; ic < c; ++ic) kernels::vmul_add(gy + ic * plane, m, gf + ic * plane, plane);
    }
    if (map.requires_grad()) {
      T* gm = map.grad_accum().data();
      const T* f = features.data().data();
      for (int ic = 0; ic < c; ++ic) kernels::vmul_add(gy + ic * plane, f + ic * plane, gm, plane);
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::vmul(a.data().data(), b.data().data(), out.mutable_data().data(),
                static_cast<std::size_t>(a.numel()));
  const bool track = tracking<T>({&a, &b});
  out.set_requires_grad(track);
  record_if<T>(track, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const std::size_t n = static_cast<std::size_t>(out.numel());
    if (a.requires_grad()) kernels::vmul_add(out.grad().data(), b.data().data(),
                                             a.grad_accum().data(), n);
    if (b.requires_grad()) kernels::vmul_add(out.grad().data(), a.data().data(),
                                             b.grad_accum().data(), n);
  });
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& input) {
  Tensor<T> out = Tensor<T>::zeros({1});
  out.mutable_data()[0] =
      kernels::sum(input.data().data(), static_cast<std::size_t>(input.numel()));
  const bool track = tracking<T>({&input});
  out.set_requires_grad(track);
  record_if<T>(track, [input, out]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    const T g = out.grad()[0];
    auto gx = input.grad_accum();
    for (auto& v : gx) v += g;
  });
  return out;
}

// ----------------------------------------------------------- masked mean --

template <typename T>
Tensor<T> masked_mean_spatial(const Tensor<T>& features, const Tensor<T>& mask) {
  require_rank(features, 3, "masked_mean_spatial features");
  require_rank(mask, 3, "masked_mean_spatial mask");
  if (mask.dim(0) != 1 || mask.dim(1) != features.dim(1) || mask.dim(2) != features.dim(2)) {
    throw ShapeError("masked_mean_spatial mask " + shape_str(mask.shape()) +
                     " does not match features " + shape_str(features.shape()));
  }
  const int c = features.dim(0);
  const std::size_t plane = static_cast<std::size_t>(features.dim(1)) * features.dim(2);
  const T area = kernels::sum(mask.data().data(), plane);
  if (!(area > T{0})) {
    throw DataError("empty support mask: masked mean over zero foreground pixels");
  }

  Tensor<T> out = Tensor<T>::zeros({c});
  {
    const T* f = features.data().data();
    const T* m = mask.data().data();
    T* o = out.mutable_data().data();
    for (int ic = 0; ic < c; ++ic) o[ic] = kernels::dot(f + ic * plane, m, plane) / area;
  }
  const bool track = tracking<T>({&features});
  out.set_requires_grad(track);
  record_if<T>(track, [features, mask, out, area]() mutable {
    if (!out.has_grad() || !features.requires_grad()) return;
    const int c = features.dim(0);
    const std::size_t plane = static_cast<std::size_t>(features.dim(1)) * features.dim(2);
    const T* gv = out.grad().data();
    const T* m = mask.data().data();
    T* gf = features.grad_accum().data();
    for (int ic = 0; ic < c; ++ic) kernels::axpy(gv[ic] / area, m, gf + ic * plane, plane);
  });
  return out;
}

// ------------------------------------------------------------------ loss --

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target) {
  require_rank(logits, 3, "softmax_cross_entropy logits");
  require_rank(target, 2, "softmax_cross_entropy target");
  if (logits.dim(0) != 2) {
    throw ShapeError("softmax_cross_entropy expects 2-channel logits, got " +
                     shape_str(logits.shape()));
  }
  if (logits.dim(1) != target.dim(0) || logits.dim(2) != target.dim(1)) {
    throw ShapeError("softmax_cross_entropy logits " + shape_str(logits.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  const std::int64_t n = target.numel();
  const T* l = logits.data().data();
  const T* t = target.data().data();

  // p1 = softmax channel-1 probability, kept for the backward rule.
  auto p1 = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T label = t[i];
    if (!(label == T{0} || label == T{1})) {
      throw DataError("softmax_cross_entropy target label out of range {0,1}: " +
                      std::to_string(static_cast<double>(label)));
    }
    const T l0 = l[i], l1 = l[n + i];
    const T m = std::max(l0, l1);
    const T e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const T z = e0 + e1;
    (*p1)[static_cast<std::size_t>(i)] = e1 / z;
    const T log_z = m + std::log(z);
    total += static_cast<double>(log_z - (label == T{1} ? l1 : l0));
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  out.mutable_data()[0] = static_cast<T>(total / static_cast<double>(n));

  const bool track = tracking<T>({&logits});
  out.set_requires_grad(track);
  record_if<T>(track, [logits, target, out, p1]() mutable {
    if (!out.has_grad() || !logits.requires_grad()) return;
    const std::int64_t n = target.numel();
    const T g = out.grad()[0] / static_cast<T>(n);
    const T* t = target.data().data();
    T* gl = logits.grad_accum().data();
    for (std::int64_t i = 0; i < n; ++i) {
      const T p = (*p1)[static_cast<std::size_t>(i)];
      const T y = t[i];
      gl[i] += g * ((T{1} - p) - (T{1} - y));  // d/dl0 = p0 - 1{y==0}
      gl[n + i] += g * (p - y);                // d/dl1 = p1 - 1{y==1}
    }
  });
  return out;
}

// -------------------------------------------------------------- backward --

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward() expects a scalar loss tensor");
  }
  GradTape<T>* tape = GradTape<T>::active();
  if (tape == nullptr) {
    throw TapeError("backward() requires an active gradient tape");
  }
  if (tape->consumed()) {
    throw TapeError("backward() called twice on a consumed tape");
  }
  Tensor<T> seed = loss;  // shared handle
  seed.grad_accum()[0] += T{1};
  tape->run_backward();
}

#define SGONE_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                               int);                                                        \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, int, int);                              \
  template Tensor<T> relu<T>(const Tensor<T>&);                                             \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int, int);                        \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);                         \
  template Tensor<T> crop_spatial<T>(const Tensor<T>&, int, int);                           \
  template Tensor<T> elementwise_mul_broadcast<T>(const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                          \
  template Tensor<T> masked_mean_spatial<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);          \
  template void backward<T>(const Tensor<T>&);

SGONE_INSTANTIATE_OPS(float)
SGONE_INSTANTIATE_OPS(double)

#undef SGONE_INSTANTIATE_OPS

}  // namespace sgone::ops
