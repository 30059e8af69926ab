#pragma once

#include <cstdint>
#include <vector>

#include "dmsa/netpbm.hpp"
#include "dmsa/tensor.hpp"

namespace dmsa {

struct Sample {
  Tensor image;    // [3,H,W], values in [0,1]
  LabelMap gt;     // 0 = background, 1..C-1 = shape classes
};

/// Deterministic scenes of discs and rectangles on a dark textured
/// background. Shape class k >= 1 is drawn from colour family k-1; every
/// image's shape-pixel fraction lies in [0.05, 0.6].
std::vector<Sample> synth_dataset(std::uint64_t seed, std::size_t n_images, std::size_t height, std::size_t width,
                                  std::size_t classes);

/// Fraction of non-background pixels.
double shape_fraction(const LabelMap& gt);

}  // namespace dmsa
