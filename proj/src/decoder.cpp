#include "dmsa/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "dmsa/ops.hpp"

namespace dmsa {

namespace {

std::size_t square_side(std::size_t n, const char* op) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ShapeError(std::string(op) + ": token count " + std::to_string(n) + " is not a perfect square");
  }
  return side;
}

void require_mask_shape(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + " must be [C,H,W], got " + shape_str(t.shape()));
}

}  // namespace

void ClassEmbeddings::validate() const {
  if (c.rank() != 2 || c.dim(0) < 2) {
    throw ShapeError("class embeddings must be [C,D] with C >= 2, got " + shape_str(c.shape()));
  }
  check_finite(c.data(), "class embeddings");
}

double PseudoLabelMask::max_simplex_error() const {
  const std::size_t cls = classes(), plane = height() * width();
  double worst = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < cls; ++k) s += probs[k * plane + i];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

std::vector<std::size_t> PseudoLabelMask::argmax() const {
  const std::size_t cls = classes(), plane = height() * width();
  std::vector<std::size_t> labels(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < cls; ++k)
      if (probs[k * plane + i] > probs[best * plane + i]) best = k;
    labels[i] = best;
  }
  return labels;
}

Tensor decode_logits(const Tensor& z_mask, const ClassEmbeddings& c) {
  c.validate();
  if (z_mask.rank() != 2 || z_mask.dim(1) != c.dim()) {
    throw ShapeError("decode_masks: patch embeddings " + shape_str(z_mask.shape()) + " vs class embeddings " +
                     shape_str(c.c.shape()) + " (embedding dims differ)");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.dim()));
  return ops::scale(ops::matmul(z_mask, ops::transpose(c.c)), inv_sqrt_d);
}

Tensor decode_masks(const Tensor& z_mask, const ClassEmbeddings& c) {
  return ops::softmax(decode_logits(z_mask, c), 1);
}

Tensor tokens_to_grid(const Tensor& token_values) {
  if (token_values.rank() != 2) {
    throw ShapeError("token field must be [N,C], got " + shape_str(token_values.shape()));
  }
  const std::size_t n = token_values.dim(0), cls = token_values.dim(1);
  const std::size_t side = square_side(n, "tokens_to_grid");
  return ops::reshape(ops::transpose(token_values), {cls, side, side});
}

PseudoLabelMask masks_to_full_res(const Tensor& token_masks, std::size_t height, std::size_t width) {
  Tensor grid = tokens_to_grid(token_masks);
  Tensor up = ops::bilinear_upsample(grid, height, width);
  return {ops::normalize(up, 0)};
}

Tensor cam(const Tensor& features, const Tensor& alpha) {
  require_mask_shape(features, "cam features");
  if (alpha.rank() != 2 || alpha.dim(1) != features.dim(0)) {
    throw ShapeError("cam: weights " + shape_str(alpha.shape()) + " do not match " +
                     std::to_string(features.dim(0)) + " feature channels");
  }
  const std::size_t k = features.dim(0), h = features.dim(1), w = features.dim(2), cls = alpha.dim(0);
  Tensor flat = ops::reshape(features, {k, h * w});
  Tensor act = ops::relu(ops::matmul(alpha, flat));  // [C, HW]
  std::vector<double> inv(cls, 1.0);
  for (std::size_t c = 0; c < cls; ++c) {
    double mx = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) mx = std::max(mx, act[c * h * w + i]);
    if (mx > 0.0) inv[c] = 1.0 / mx;
  }
  return ops::reshape(ops::scale_rows(act, Tensor({cls}, std::move(inv))), {cls, h, w});
}

Tensor cam_weights(const ClassEmbeddings& classes) {
  classes.validate();
  const std::size_t cls = classes.c.dim(0), d = classes.c.dim(1);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> w(cls * d, 0.0);
  for (std::size_t c = 1; c < cls; ++c)
    for (std::size_t k = 0; k < d; ++k) w[c * d + k] = (classes.c[c * d + k] - classes.c[k]) * inv;
  return Tensor({cls, d}, std::move(w));
}

PseudoLabelMask cam_to_initial_labels(const Tensor& cam_maps, double threshold) {
  require_mask_shape(cam_maps, "cam maps");
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("cam_to_initial_labels: threshold must lie in (0,1)");
  const std::size_t cls = cam_maps.dim(0), plane = cam_maps.dim(1) * cam_maps.dim(2);
  std::vector<double> out(cam_maps.size(), 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = cam_maps[i];
    for (std::size_t c = 1; c < cls; ++c) mx = std::max(mx, cam_maps[c * plane + i]);
    if (mx < threshold) {
      out[i] = 1.0;
      continue;
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cls; ++c) {
      double e = std::exp(cam_maps[c * plane + i] - mx);
      out[c * plane + i] = e;
      z += e;
    }
    for (std::size_t c = 0; c < cls; ++c) out[c * plane + i] /= z;
  }
  return {Tensor(cam_maps.shape(), std::move(out))};
}

PseudoLabelMask fuse_masks(const PseudoLabelMask& cam_mask, const PseudoLabelMask& teacher_mask, double beta) {
  if (cam_mask.probs.shape() != teacher_mask.probs.shape()) {
    throw ShapeError("fuse_masks: CAM mask " + shape_str(cam_mask.probs.shape()) + " vs teacher mask " +
                     shape_str(teacher_mask.probs.shape()));
  }
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error("fuse_masks: beta must lie in [0,1]");
  Tensor mixed = ops::add(ops::scale(cam_mask.probs, beta), ops::scale(teacher_mask.probs, 1.0 - beta));
  return {ops::normalize(mixed, 0)};
}

}  // namespace dmsa
