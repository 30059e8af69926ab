#pragma once

#include <vector>

#include "dmsa/tape.hpp"
#include "dmsa/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes, rejects
// non-finite results and records itself on the active GradTape when one of
// its inputs is tracked.
namespace dmsa::ops {

// elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

/// x[m,n] + b[n] broadcast over rows.
Tensor add_row_vector(const Tensor& x, const Tensor& b);
/// x[m,n] * s[m] broadcast over columns.
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// x[C,H,W] + b[C].
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces the last axis: [..., n] -> [...] (rank-1 input gives shape [1]).
Tensor sum_last(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Numerically stable softmax along `axis` (max-subtracted).
Tensor softmax(const Tensor& x, std::size_t axis);
/// Divides every slice along `axis` by its sum.
Tensor normalize(const Tensor& x, std::size_t axis);

/// Row-wise layer normalisation of x[m,n] with affine gamma[n], beta[n].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// Scalar x[flat_index].
Tensor pick(const Tensor& x, std::size_t flat_index);

/// Largest minus second-largest entry along axis 0 of x[C,...] -> [...].
/// Ties resolve to the lowest index for the largest entry; the gradient
/// flows through the two selected entries only.
Tensor top2_margin(const Tensor& x);

/// Bilinear resize of x[C,h,w] to [C,H,W] with the align-corners-false
/// convention: output pixel centre (y+0.5)*h/H-0.5 in input coordinates,
/// clamped to the border.
Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// x[C,H,W] -> [C] spatial mean.
Tensor global_avg_pool(const Tensor& x);
/// v[C] -> [C,H,W] constant planes.
Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w);

}  // namespace dmsa::ops
