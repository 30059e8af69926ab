#pragma once

#include "dmsa/tensor.hpp"

namespace dmsa {

/// Per-head token-to-token weights [h, N+1, N+1]; token 0 is the class token.
struct AttentionMap {
  Tensor weights;

  std::size_t heads() const { return weights.dim(0); }
  std::size_t tokens() const { return weights.dim(1); }
  /// Head slice as [N+1, N+1].
  Tensor head(std::size_t h) const;
  /// Largest deviation of any row sum from 1.
  double max_row_error() const;
  double min_entry() const;
};

struct AttentionResult {
  Tensor out;      // [N', d_k]
  Tensor weights;  // [N', N']
};

/// softmax(Q K^T / sqrt(d_k)) row-wise.
Tensor attention_weights(const Tensor& q, const Tensor& k);

/// Scaled dot-product attention for one head.
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace dmsa
