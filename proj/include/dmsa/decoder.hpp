#pragma once

#include "dmsa/tensor.hpp"

namespace dmsa {

/// One learned embedding per class, c[C,D].
struct ClassEmbeddings {
  Tensor c;

  std::size_t classes() const { return c.dim(0); }
  std::size_t dim() const { return c.dim(1); }
  void validate() const;
};

/// Per-pixel class distribution probs[C,H,W].
struct PseudoLabelMask {
  Tensor probs;

  std::size_t classes() const { return probs.dim(0); }
  std::size_t height() const { return probs.dim(1); }
  std::size_t width() const { return probs.dim(2); }
  /// Largest deviation of a pixel's sum from 1.
  double max_simplex_error() const;
  /// Per-pixel argmax, row-major; ties go to the lowest class.
  std::vector<std::size_t> argmax() const;
};

/// Class logits z_mask c^T / sqrt(D): [N,C]. The class token must already be
/// removed from z_mask.
Tensor decode_logits(const Tensor& z_mask, const ClassEmbeddings& c);

/// softmax over classes of decode_logits.
Tensor decode_masks(const Tensor& z_mask, const ClassEmbeddings& c);

/// [N,C] token field -> [C, sqrt(N), sqrt(N)] grid.
Tensor tokens_to_grid(const Tensor& token_values);

/// Reshape token masks to a grid, bilinearly upsample to H x W and
/// renormalise each pixel.
PseudoLabelMask masks_to_full_res(const Tensor& token_masks, std::size_t height, std::size_t width);

/// relu(sum_k alpha[c,k] A[k]) per class, divided by its per-class max when
/// that max is positive. features[K,H,W], alpha[C,K] -> [C,H,W].
Tensor cam(const Tensor& features, const Tensor& alpha);

/// CAM classifier weights read off the mask decoder: row c is
/// (c_c - c_0) / sqrt(D), so each foreground map scores a class against the
/// background class 0 and the background row is zero.
Tensor cam_weights(const ClassEmbeddings& classes);

/// Pixels whose strongest activation is below `threshold` become one-hot
/// background (class 0); the rest get softmax of their activations.
PseudoLabelMask cam_to_initial_labels(const Tensor& cam_maps, double threshold);

/// Per-pixel beta * cam + (1 - beta) * teacher, renormalised.
PseudoLabelMask fuse_masks(const PseudoLabelMask& cam_mask, const PseudoLabelMask& teacher_mask, double beta);

}  // namespace dmsa
