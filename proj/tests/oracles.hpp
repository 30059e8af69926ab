#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dmsa/par.hpp"
#include "dmsa/tensor.hpp"

namespace dmsa::testing {

struct LoopWeights {
  std::vector<std::array<std::size_t, 2>> nbrs;
  std::vector<double> w;
};

// Independent evaluation of the mixed kernel at pixel (i,j).
inline LoopWeights loop_weights(const Tensor& img, std::size_t i, std::size_t j, const ParParams& p) {
  const std::size_t h = img.dim(1), w = img.dim(2), ch = img.dim(0);
  LoopWeights out;
  for (std::size_t d : p.dilations)
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b) {
        if (a == 0 && b == 0) continue;
        const long k = static_cast<long>(i) + a * static_cast<long>(d);
        const long l = static_cast<long>(j) + b * static_cast<long>(d);
        if (k >= 0 && l >= 0 && k < static_cast<long>(h) && l < static_cast<long>(w))
          out.nbrs.push_back({static_cast<std::size_t>(k), static_cast<std::size_t>(l)});
      }
  const std::size_t n = out.nbrs.size();
  std::vector<double> dsum(n, 0.0), dsq(n, 0.0), psum(n), psq(n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto [k, l] = out.nbrs[m];
    for (std::size_t c = 0; c < ch; ++c) {
      const double diff = img.at({c, k, l}) - img.at({c, i, j});
      dsum[m] += diff;
      dsq[m] += diff * diff;
    }
    const double di = double(k) - double(i), dj = double(l) - double(j);
    psum[m] = di + dj;
    psq[m] = di * di + dj * dj;
  }
  auto stdev = [&](const std::vector<double>& v) {
    double mu = 0.0, var = 0.0;
    for (double x : v) mu += x / double(n);
    for (double x : v) var += (x - mu) * (x - mu) / double(n);
    return std::max(std::sqrt(var), 1e-8);
  };
  const double sr = stdev(dsum), sp = stdev(psum);
  double zr = 0.0, zp = 0.0, mr = -INFINITY, mp = -INFINITY;
  std::vector<double> kr(n), kp(n);
  for (std::size_t m = 0; m < n; ++m) {
    kr[m] = -dsq[m] / (p.w1 * sr * sr);
    kp[m] = -psq[m] / (p.w2 * sp * sp);
    mr = std::max(mr, kr[m]);
    mp = std::max(mp, kp[m]);
  }
  for (std::size_t m = 0; m < n; ++m) {
    zr += kr[m] = std::exp(kr[m] - mr);
    zp += kp[m] = std::exp(kp[m] - mp);
  }
  for (std::size_t m = 0; m < n; ++m) out.w.push_back((kr[m] / zr + p.omega3 * kp[m] / zp) / (1.0 + p.omega3));
  return out;
}

inline Tensor loop_par_step(const Tensor& img, const Tensor& probs, const ParParams& p) {
  const std::size_t c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const LoopWeights ref = loop_weights(img, i, j, p);
      std::vector<double> acc(c, 0.0);
      double z = 0.0;
      for (std::size_t m = 0; m < ref.w.size(); ++m)
        for (std::size_t k = 0; k < c; ++k) acc[k] += ref.w[m] * probs.at({k, ref.nbrs[m][0], ref.nbrs[m][1]});
      for (double v : acc) z += v;
      for (std::size_t k = 0; k < c; ++k) out[(k * h + i) * w + j] = acc[k] / z;
    }
  return Tensor(probs.shape(), std::move(out));
}

}  // namespace dmsa::testing
