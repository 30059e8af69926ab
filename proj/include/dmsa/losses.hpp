#pragma once

#include <functional>
#include <span>

#include "dmsa/decoder.hpp"
#include "dmsa/tensor.hpp"

namespace dmsa {

struct LossWeights {
  double seg = 1.0;  // lambda1
  double ce = 1.0;   // lambda2
  double un = 0.1;   // lambda3
  double cls = 0.1;  // lambda4

  void validate() const;
};

/// Scalar loss components, each a [1] tensor.
struct LossParts {
  Tensor seg, ce, un, cls;
};

/// Mean over pixels of -sum_c pseudo_c * log(student_c + 1e-12).
Tensor ce_loss(const Tensor& student_probs, const PseudoLabelMask& pseudo);

/// Soft Dice: 1 - mean_c (2 sum s p + eps) / (sum s^2 + sum p^2 + eps), eps = 1e-6.
Tensor seg_loss(const Tensor& student_probs, const PseudoLabelMask& pseudo);

/// Negative mean top-2 softmax margin of the logits over classes.
Tensor uncertainty_loss(const Tensor& student_logits);

/// KL(q || uniform) of the mean class usage q.
Tensor cls_loss(const Tensor& student_probs);

/// lambda1 seg + lambda2 ce + lambda3 un + lambda4 cls.
Tensor total_loss(const LossParts& parts, const LossWeights& w);

/// The four loss functions behind named slots so a term can be swapped for
/// ablations without touching the training loop.
struct LossSuite {
  std::function<Tensor(const Tensor& probs, const PseudoLabelMask& pseudo)> seg = seg_loss;
  std::function<Tensor(const Tensor& probs, const PseudoLabelMask& pseudo)> ce = ce_loss;
  std::function<Tensor(const Tensor& logits)> un = uncertainty_loss;
  std::function<Tensor(const Tensor& probs)> cls = cls_loss;

  LossParts evaluate(const Tensor& probs, const Tensor& logits, const PseudoLabelMask& pseudo) const;
  /// seg, ce and un averaged over the batch; cls on the pooled class usage
  /// of the whole batch.
  LossParts evaluate_batch(std::span<const Tensor> probs, std::span<const Tensor> logits,
                           std::span<const PseudoLabelMask> pseudo) const;
};

}  // namespace dmsa
