#pragma once

#include <span>
#include <vector>

#include "dmsa/decoder.hpp"
#include "dmsa/tensor.hpp"

namespace dmsa {

struct ParParams {
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  double w1 = 0.3;       // colour bandwidth scale
  double w2 = 0.01;      // positional bandwidth scale
  double omega3 = 0.01;  // weight of the positional term
  std::size_t iterations = 10;

  void validate() const;
};

struct Pixel {
  std::size_t i = 0;
  std::size_t j = 0;
  bool operator==(const Pixel&) const = default;
};

/// For each dilation d, the 8 ring positions (i + a*d, j + b*d) with
/// a, b in {-1,0,1} and (a,b) != (0,0), ordered row-major by (a,b).
/// Out-of-bounds positions are dropped.
std::vector<Pixel> neighbor_set(Pixel pos, std::size_t height, std::size_t width,
                                std::span<const std::size_t> dilations);

/// Per-pixel propagation weights over each pixel's neighbour set, stored in
/// CSR form: the neighbours of flat pixel p are entries [offsets[p], offsets[p+1]).
struct AffinityKernel {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> neighbors;  // flat pixel index i*W + j
  std::vector<double> weights;         // (rgb + omega3 * pos) / (1 + omega3)
  std::vector<double> rgb_weights;     // softmax of k_rgb
  std::vector<double> pos_weights;     // softmax of k_pos

  std::span<const double> weights_at(std::size_t i, std::size_t j) const;
  std::span<const std::size_t> neighbors_at(std::size_t i, std::size_t j) const;
  /// Largest deviation of any pixel's weight sum from 1 (pixels with
  /// neighbours only).
  double max_sum_error() const;
};

/// Colour term k_rgb = -|I(ij) - I(kl)|^2 / (w1 * sigma_rgb(ij)^2), where
/// sigma_rgb is the standard deviation over the neighbour set of the
/// channel-summed differences I(kl) - I(ij); the positional term is the same
/// construction on coordinates. Each term is softmaxed over the neighbour
/// set, then mixed as (rgb + omega3 * pos) / (1 + omega3). Standard
/// deviations below 1e-8 are floored to 1e-8.
AffinityKernel affinity_kernel(const Tensor& image, const ParParams& params);

/// One gather step P'(ij) = sum_kl w(ij,kl) P(kl), then per-pixel
/// renormalisation. Pixels with an empty neighbour set keep their value.
PseudoLabelMask par_step(const PseudoLabelMask& mask, const AffinityKernel& kernel);

/// `params.iterations` propagation steps with the image's affinity kernel.
PseudoLabelMask par_refine(const PseudoLabelMask& mask, const Tensor& image, const ParParams& params);

}  // namespace dmsa
