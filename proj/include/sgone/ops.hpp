#pragma once

#include "sgone/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward result and,
// when a GradTape is active and some input requires a gradient, records a
// backward rule on the tape. Inputs that do not require gradients are skipped
// during accumulation.
namespace sgone::ops {

// 2-D convolution with explicit zero padding.
//   input  [c_in, h, w], kernel [c_out, c_in, k, k], bias [c_out]
//   output [c_out, h', w'] with h' = (h + 2*padding - k) / stride + 1
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding);

// Max pooling. Backward routes the gradient to the first maximal site of each
// window in row-major scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int window = 2, int stride = 2);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Bilinear interpolation, pixel-center alignment:
//   src = (dst + 0.5) * (in_size / out_size) - 0.5, clamped to [0, in_size-1].
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Channel slice [begin, begin+count); inverse of concat_channels.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int count);

// Top-left spatial crop to out_h x out_w.
template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& input, int out_h, int out_w);

// features [c, h, w] * map [1, h, w], map broadcast across channels.
template <typename T>
Tensor<T> elementwise_mul_broadcast(const Tensor<T>& features, const Tensor<T>& map);

// Mean over pixels of -log softmax(logits)[target]. logits [2, h, w],
// target [h, w] with values in {0, 1}.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target);

// Elementwise product of same-shape tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// Sum of all elements -> scalar (shape [1]).
template <typename T>
Tensor<T> sum_all(const Tensor<T>& input);

// Per-channel mean over the pixels selected by a {0,1} mask tensor of shape
// [1, h, w]: out[i] = sum_xy mask*x[i] / sum_xy mask. The mask is a constant;
// gradients flow to the features only. Rejects an all-zero mask.
template <typename T>
Tensor<T> masked_mean_spatial(const Tensor<T>& features, const Tensor<T>& mask);

// Populates gradients of every requires_grad tensor reachable from loss.
// Requires an active, unconsumed tape; consumes it.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace sgone::ops
