#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "dmsa/tensor.hpp"

namespace dmsa::testing {

inline Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Random per-pixel distribution over C classes, [C,H,W].
inline Tensor random_simplex(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  std::vector<double> v(c * h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += v[k * h * w + p] = dist(rng);
    for (std::size_t k = 0; k < c; ++k) v[k * h * w + p] /= z;
  }
  return Tensor({c, h, w}, std::move(v));
}

}  // namespace dmsa::testing
