#pragma once

#include <cstddef>

#include "dmsa/tensor.hpp"

namespace dmsa {

/// Square dilated-convolution geometry on one spatial axis.
struct ConvGeometry {
  std::size_t input_size = 1;   // m
  std::size_t padding = 0;      // p, zero padding on each side
  std::size_t kernel_size = 1;  // k
  std::size_t dilation = 1;     // r
  std::size_t stride = 1;       // s

  /// k' = k + (k-1)(r-1)
  std::size_t effective_kernel() const { return kernel_size + (kernel_size - 1) * (dilation - 1); }
  bool valid() const;
  /// Throws GeometryError describing the first violated constraint.
  void validate() const;
};

/// M = floor((m + 2p - k') / s) + 1
std::size_t output_size(const ConvGeometry& g);

/// Dilated 2-D convolution of input[C_in,m,m] with kernel[C_out,C_in,k,k].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g);

/// Per-channel dilated convolution: input[C,m,m], kernel[C,k,k].
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g);

/// 1x1 channel mixing: input[C,H,W], weights[C_out,C].
Tensor pointwise_conv(const Tensor& input, const Tensor& weights);

/// depthwise_conv2d followed by pointwise_conv.
Tensor depthwise_separable_conv(const Tensor& input, const Tensor& dw_kernel, const Tensor& pw_kernel,
                                const ConvGeometry& g);

}  // namespace dmsa
