#include "dmsa/attention.hpp"

#include <algorithm>
#include <cmath>

#include "dmsa/ops.hpp"

namespace dmsa {

Tensor AttentionMap::head(std::size_t h) const {
  const std::size_t n = tokens();
  return ops::reshape(ops::slice(weights, 0, h, 1), {n, n});
}

double AttentionMap::max_row_error() const {
  const std::size_t n = tokens();
  double worst = 0.0;
  for (std::size_t r = 0; r < heads() * n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += weights[r * n + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

double AttentionMap::min_entry() const {
  auto d = weights.data();
  return *std::min_element(d.begin(), d.end());
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.shape() != k.shape()) {
    throw ShapeError("attention: query " + shape_str(q.shape()) + " and key " + shape_str(k.shape()) +
                     " must both be [N', d_k]");
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_dk), 1);
}

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) {
    throw ShapeError("attention: value " + shape_str(v.shape()) + " does not match key " +
                     shape_str(k.shape()));
  }
  Tensor w = attention_weights(q, k);
  return {ops::matmul(w, v), w};
}

}  // namespace dmsa
