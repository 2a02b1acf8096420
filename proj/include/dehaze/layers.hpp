#pragma once

#include <cstdint>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze::nn {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

// Convolution. x: N×Cin×H×W, weight: Cout×Cin×k×k, bias: Cout.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvGeometry g);

/// Accumulates into grad_weight / grad_bias when non-null; writes grad_input
/// when non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias);

// Transposed convolution. weight: Cin×Cout×k×k (the adjoint of conv2d).
// Output size is (H − 1)·stride − 2·padding + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvGeometry g);

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, ConvGeometry g, Tensor<T>* grad_input,
                               Tensor<T>* grad_weight, Tensor<T>* grad_bias);

/// 2×2 max pooling with stride 2. `argmax` receives flat input indices.
template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x, std::vector<std::uint32_t>* argmax);

template <typename T>
Tensor<T> max_pool2x2_backward(const Shape& input_shape, const Tensor<T>& grad_out,
                               const std::vector<std::uint32_t>& argmax);

template <typename T>
void relu_inplace(Tensor<T>& x);
/// grad *= (activated > 0)
template <typename T>
void relu_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad);

template <typename T>
void tanh_inplace(Tensor<T>& x);
/// grad *= 1 − activated²
template <typename T>
void tanh_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad);

/// Channel-wise concatenation [a, b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits a gradient of concat_channels back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& grad, std::int64_t channels_a, Tensor<T>& grad_a,
                    Tensor<T>& grad_b);

}  // namespace dehaze::nn
