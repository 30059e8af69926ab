#include "dmsa/par.hpp"

#include <algorithm>
#include <cmath>

namespace dmsa {

namespace {

constexpr double kSigmaFloor = 1e-8;

double population_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    z += x;
  }
  for (auto& x : v) x /= z;
}

}  // namespace

void ParParams::validate() const {
  if (dilations.empty()) throw Error("PAR: dilation list must not be empty");
  for (auto d : dilations)
    if (d == 0) throw Error("PAR: dilations must be strictly positive");
  if (!(w1 > 0.0) || !(w2 > 0.0)) throw Error("PAR: bandwidth scales w1 and w2 must be positive");
  if (!(omega3 >= 0.0) || !std::isfinite(omega3)) throw Error("PAR: omega3 must be finite and >= 0");
  if (iterations < 1) throw Error("PAR: iterations must be >= 1");
}

std::vector<Pixel> neighbor_set(Pixel pos, std::size_t height, std::size_t width,
                                std::span<const std::size_t> dilations) {
  std::vector<Pixel> out;
  out.reserve(8 * dilations.size());
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  for (auto d : dilations) {
    const long ld = static_cast<long>(d);
    for (long a = -1; a <= 1; ++a)
      for (long b = -1; b <= 1; ++b) {
        if (a == 0 && b == 0) continue;
        const long k = static_cast<long>(pos.i) + a * ld;
        const long l = static_cast<long>(pos.j) + b * ld;
        if (k < 0 || k >= h || l < 0 || l >= w) continue;
        out.push_back({static_cast<std::size_t>(k), static_cast<std::size_t>(l)});
      }
  }
  return out;
}

std::span<const double> AffinityKernel::weights_at(std::size_t i, std::size_t j) const {
  const std::size_t p = i * width + j;
  return std::span<const double>(weights).subspan(offsets[p], offsets[p + 1] - offsets[p]);
}

std::span<const std::size_t> AffinityKernel::neighbors_at(std::size_t i, std::size_t j) const {
  const std::size_t p = i * width + j;
  return std::span<const std::size_t>(neighbors).subspan(offsets[p], offsets[p + 1] - offsets[p]);
}

double AffinityKernel::max_sum_error() const {
  double worst = 0.0;
  for (std::size_t p = 0; p + 1 < offsets.size(); ++p) {
    if (offsets[p] == offsets[p + 1]) continue;
    double s = 0.0;
    for (std::size_t e = offsets[p]; e < offsets[p + 1]; ++e) s += weights[e];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

AffinityKernel affinity_kernel(const Tensor& image, const ParParams& params) {
  params.validate();
  if (image.rank() != 3) throw ShapeError("PAR: image must be [channels,H,W], got " + shape_str(image.shape()));
  check_finite(image.data(), "PAR image");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2), plane = h * w;

  AffinityKernel kern;
  kern.height = h;
  kern.width = w;
  kern.offsets.reserve(plane + 1);
  kern.offsets.push_back(0);

  std::vector<double> summed, rgb, pos;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto nbrs = neighbor_set({i, j}, h, w, params.dilations);
      const std::size_t p = i * w + j;
      summed.assign(nbrs.size(), 0.0);
      rgb.assign(nbrs.size(), 0.0);
      for (std::size_t n = 0; n < nbrs.size(); ++n) {
        const std::size_t q = nbrs[n].i * w + nbrs[n].j;
        for (std::size_t c = 0; c < ch; ++c) {
          const double diff = image[c * plane + q] - image[c * plane + p];
          summed[n] += diff;
          rgb[n] += diff * diff;
        }
      }
      pos.assign(nbrs.size(), 0.0);
      std::vector<double> pos_summed(nbrs.size(), 0.0);
      for (std::size_t n = 0; n < nbrs.size(); ++n) {
        const double di = static_cast<double>(nbrs[n].i) - static_cast<double>(i);
        const double dj = static_cast<double>(nbrs[n].j) - static_cast<double>(j);
        pos_summed[n] = di + dj;
        pos[n] = di * di + dj * dj;
      }
      if (!nbrs.empty()) {
        const double s_rgb = std::max(population_std(summed), kSigmaFloor);
        const double s_pos = std::max(population_std(pos_summed), kSigmaFloor);
        for (std::size_t n = 0; n < nbrs.size(); ++n) {
          rgb[n] = -rgb[n] / (params.w1 * s_rgb * s_rgb);
          pos[n] = -pos[n] / (params.w2 * s_pos * s_pos);
        }
        softmax_inplace(rgb);
        softmax_inplace(pos);
      }
      for (std::size_t n = 0; n < nbrs.size(); ++n) {
        kern.neighbors.push_back(nbrs[n].i * w + nbrs[n].j);
        kern.rgb_weights.push_back(rgb[n]);
        kern.pos_weights.push_back(pos[n]);
        kern.weights.push_back((rgb[n] + params.omega3 * pos[n]) / (1.0 + params.omega3));
      }
      kern.offsets.push_back(kern.neighbors.size());
    }
  return kern;
}

PseudoLabelMask par_step(const PseudoLabelMask& mask, const AffinityKernel& kernel) {
  const std::size_t cls = mask.classes(), h = mask.height(), w = mask.width(), plane = h * w;
  if (h != kernel.height || w != kernel.width) {
    throw ShapeError("PAR: mask is " + std::to_string(h) + "x" + std::to_string(w) + " but the affinity kernel is " +
                     std::to_string(kernel.height) + "x" + std::to_string(kernel.width));
  }
  const auto& src = mask.probs;
  std::vector<double> out(src.size(), 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    const std::size_t begin = kernel.offsets[p], end = kernel.offsets[p + 1];
    if (begin == end) {
      for (std::size_t c = 0; c < cls; ++c) out[c * plane + p] = src[c * plane + p];
      continue;
    }
    for (std::size_t e = begin; e < end; ++e) {
      const double wt = kernel.weights[e];
      const std::size_t q = kernel.neighbors[e];
      for (std::size_t c = 0; c < cls; ++c) out[c * plane + p] += wt * src[c * plane + q];
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cls; ++c) z += out[c * plane + p];
    for (std::size_t c = 0; c < cls; ++c) out[c * plane + p] /= z;
  }
  check_finite(out, "par_refine");
  return {Tensor(src.shape(), std::move(out))};
}

PseudoLabelMask par_refine(const PseudoLabelMask& mask, const Tensor& image, const ParParams& params) {
  if (mask.probs.rank() != 3 || image.rank() != 3 || mask.height() != image.dim(1) ||
      mask.width() != image.dim(2)) {
    throw ShapeError("PAR: mask " + shape_str(mask.probs.shape()) + " and image " + shape_str(image.shape()) +
                     " differ spatially");
  }
  const AffinityKernel kernel = affinity_kernel(image, params);
  PseudoLabelMask current{mask.probs.detach()};
  for (std::size_t t = 0; t < params.iterations; ++t) current = par_step(current, kernel);
  return current;
}

}  // namespace dmsa
