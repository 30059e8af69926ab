#include "dmsa/losses.hpp"

#include <cmath>
#include <utility>

#include "dmsa/ops.hpp"

namespace dmsa {

namespace {

constexpr double kLogFloor = 1e-12;
constexpr double kDiceEps = 1e-6;

void require_match(const Tensor& student, const PseudoLabelMask& pseudo, const char* name) {
  if (student.rank() != 3 || student.shape() != pseudo.probs.shape()) {
    throw ShapeError(std::string(name) + ": student " + shape_str(student.shape()) + " vs pseudo label " +
                     shape_str(pseudo.probs.shape()));
  }
}

Tensor flatten_classes(const Tensor& x) { return ops::reshape(x, {x.dim(0), x.size() / x.dim(0)}); }

}  // namespace

void LossWeights::validate() const {
  for (double v : {seg, ce, un, cls}) {
    if (!std::isfinite(v) || v < 0.0) throw Error("loss weights must be finite and non-negative");
  }
}

Tensor ce_loss(const Tensor& student_probs, const PseudoLabelMask& pseudo) {
  require_match(student_probs, pseudo, "ce_loss");
  const double pixels = static_cast<double>(student_probs.dim(1) * student_probs.dim(2));
  Tensor logp = ops::log(ops::add_scalar(student_probs, kLogFloor));
  return ops::scale(ops::sum(ops::mul(pseudo.probs.detach(), logp)), -1.0 / pixels);
}

Tensor seg_loss(const Tensor& student_probs, const PseudoLabelMask& pseudo) {
  require_match(student_probs, pseudo, "seg_loss");
  Tensor s = flatten_classes(student_probs);
  Tensor p = flatten_classes(pseudo.probs.detach());
  Tensor inter = ops::sum_last(ops::mul(s, p));
  Tensor s_sq = ops::sum_last(ops::square(s));
  Tensor p_sq = ops::sum_last(ops::square(p));
  Tensor ratio = ops::div(ops::add_scalar(ops::scale(inter, 2.0), kDiceEps),
                          ops::add_scalar(ops::add(s_sq, p_sq), kDiceEps));
  return ops::add_scalar(ops::scale(ops::mean(ratio), -1.0), 1.0);
}

Tensor uncertainty_loss(const Tensor& student_logits) {
  if (student_logits.rank() != 3 || student_logits.dim(0) < 2) {
    throw ShapeError("uncertainty_loss: need [C,H,W] logits with C >= 2, got " + shape_str(student_logits.shape()));
  }
  return ops::scale(ops::mean(ops::top2_margin(ops::softmax(student_logits, 0))), -1.0);
}

Tensor cls_loss(const Tensor& student_probs) {
  if (student_probs.rank() != 3) throw ShapeError("cls_loss: need [C,H,W], got " + shape_str(student_probs.shape()));
  const double classes = static_cast<double>(student_probs.dim(0));
  const double pixels = static_cast<double>(student_probs.dim(1) * student_probs.dim(2));
  Tensor q = ops::scale(ops::sum_last(flatten_classes(student_probs)), 1.0 / pixels);
  Tensor logq = ops::log(ops::add_scalar(ops::scale(q, classes), kLogFloor));
  return ops::sum(ops::mul(q, logq));
}

Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  const std::pair<const Tensor*, const char*> named[] = {
      {&parts.seg, "seg"}, {&parts.ce, "ce"}, {&parts.un, "un"}, {&parts.cls, "cls"}};
  for (auto [t, name] : named) {
    if (t->size() != 1) throw ShapeError(std::string("total_loss: ") + name + " is not a scalar");
    if (!std::isfinite(t->item())) throw NumericError(std::string("total_loss: ") + name + " is not finite");
  }
  Tensor total = ops::scale(parts.seg, w.seg);
  total = ops::add(total, ops::scale(parts.ce, w.ce));
  total = ops::add(total, ops::scale(parts.un, w.un));
  return ops::add(total, ops::scale(parts.cls, w.cls));
}

LossParts LossSuite::evaluate(const Tensor& probs, const Tensor& logits, const PseudoLabelMask& pseudo) const {
  return {seg(probs, pseudo), ce(probs, pseudo), un(logits), cls(probs)};
}

LossParts LossSuite::evaluate_batch(std::span<const Tensor> probs, std::span<const Tensor> logits,
                                    std::span<const PseudoLabelMask> pseudo) const {
  if (probs.empty() || probs.size() != logits.size() || probs.size() != pseudo.size()) {
    throw ShapeError("loss batch: " + std::to_string(probs.size()) + " probability maps, " +
                     std::to_string(logits.size()) + " logit maps, " + std::to_string(pseudo.size()) +
                     " pseudo labels");
  }
  std::vector<Tensor> s, c, u;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    s.push_back(seg(probs[i], pseudo[i]));
    c.push_back(ce(probs[i], pseudo[i]));
    u.push_back(un(logits[i]));
  }
  const double inv = 1.0 / static_cast<double>(probs.size());
  auto mean_of = [&](const std::vector<Tensor>& v) { return ops::scale(ops::sum(ops::concat(v, 0)), inv); };
  const Tensor pooled = probs.size() == 1 ? probs[0] : ops::concat(std::vector<Tensor>(probs.begin(), probs.end()), 2);
  return {mean_of(s), mean_of(c), mean_of(u), cls(pooled)};
}

}  // namespace dmsa
