#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dmsa/grad_check.hpp"
#include "dmsa/losses.hpp"
#include "dmsa/ops.hpp"
#include "dmsa/tape.hpp"
#include "test_util.hpp"

using namespace dmsa;
using dmsa::testing::random_simplex;
using dmsa::testing::uniform;

namespace {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> v(c * h * w, 0.0);
  for (std::size_t i = 0; i < h * w; ++i) v[labels[i] * h * w + i] = 1.0;
  return Tensor({c, h, w}, std::move(v));
}

double loop_ce(const Tensor& s, const Tensor& p) {
  const std::size_t c = s.dim(0), n = s.dim(1) * s.dim(2);
  double acc = 0.0;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < n; ++i) acc -= p[k * n + i] * std::log(s[k * n + i] + 1e-12);
  return acc / double(n);
}

double loop_dice(const Tensor& s, const Tensor& p) {
  const std::size_t c = s.dim(0), n = s.dim(1) * s.dim(2);
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    double inter = 0, ss = 0, pp = 0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += s[k * n + i] * p[k * n + i];
      ss += s[k * n + i] * s[k * n + i];
      pp += p[k * n + i] * p[k * n + i];
    }
    total += (2 * inter + 1e-6) / (ss + pp + 1e-6);
  }
  return 1.0 - total / double(c);
}

double loop_un(const Tensor& logits) {
  const std::size_t c = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p(c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += p[k] = std::exp(logits[k * n + i]);
    for (auto& v : p) v /= z;
    std::sort(p.begin(), p.end(), std::greater<>());
    acc -= p[0] - p[1];
  }
  return acc / double(n);
}

double loop_cls(const Tensor& s) {
  const std::size_t c = s.dim(0), n = s.dim(1) * s.dim(2);
  double acc = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) q += s[k * n + i];
    q /= double(n);
    acc += q * std::log(q * double(c) + 1e-12);
  }
  return acc;
}

LossParts parts_of(const Tensor& probs, const Tensor& logits, const PseudoLabelMask& pseudo) {
  return LossSuite{}.evaluate(probs, logits, pseudo);
}

}  // namespace

TEST(CeLoss, AnalyticValues) {
  const std::vector<std::size_t> labels{0, 1, 2, 1, 0, 2, 2, 1, 0};
  const Tensor oh = one_hot(labels, 3, 3, 3);
  EXPECT_LE(ce_loss(oh, PseudoLabelMask{oh}).item(), 1e-10);
  EXPECT_NEAR(ce_loss(Tensor::full({3, 3, 3}, 1.0 / 3.0), PseudoLabelMask{oh}).item(), std::log(3.0), 1e-10);
  EXPECT_THROW(ce_loss(Tensor::zeros({3, 3, 2}), PseudoLabelMask{oh}), ShapeError);
}

TEST(SegLoss, AnalyticValues) {
  const Tensor a = one_hot({0, 0, 1, 1}, 2, 2, 2), b = one_hot({1, 1, 0, 0}, 2, 2, 2);
  EXPECT_LE(seg_loss(a, PseudoLabelMask{a}).item(), 1e-5);
  EXPECT_NEAR(seg_loss(a, PseudoLabelMask{b}).item(), 1.0, 1e-6);
}

TEST(UncertaintyLoss, AnalyticValues) {
  // Huge logit gap gives a one-hot softmax.
  EXPECT_NEAR(uncertainty_loss(Tensor({2, 1, 1}, {800, 0})).item(), -1.0, 1e-15);
  EXPECT_NEAR(uncertainty_loss(Tensor({3, 1, 1}, {1.5, 1.5, -2})).item(), 0.0, 1e-15);
  EXPECT_THROW(uncertainty_loss(Tensor::zeros({1, 2, 2})), ShapeError);
}

TEST(ClsLoss, AnalyticValues) {
  EXPECT_LE(std::abs(cls_loss(Tensor::full({4, 3, 3}, 0.25)).item()), 1e-9);
  EXPECT_NEAR(cls_loss(one_hot(std::vector<std::size_t>(9, 2), 4, 3, 3)).item(), std::log(4.0), 1e-10);
}

TEST(Losses, MatchLoopEvaluation) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + trial % 3;
    const Tensor logits = uniform({c, 5, 7}, rng, -3, 3);
    const Tensor s = ops::softmax(logits, 0);
    const Tensor p = random_simplex(c, 5, 7, rng);
    const LossParts parts = parts_of(s, logits, PseudoLabelMask{p});
    EXPECT_NEAR(parts.ce.item(), loop_ce(s, p), 1e-12);
    EXPECT_NEAR(parts.seg.item(), loop_dice(s, p), 1e-12);
    EXPECT_NEAR(parts.un.item(), loop_un(logits), 1e-12);
    EXPECT_NEAR(parts.cls.item(), loop_cls(s), 1e-12);
  }
}

TEST(Losses, RespectAnalyticBounds) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + trial % 4;
    const Tensor logits = uniform({c, 6, 6}, rng, -6, 6);
    const Tensor s = ops::softmax(logits, 0);
    const LossParts parts = parts_of(s, logits, PseudoLabelMask{random_simplex(c, 6, 6, rng)});
    EXPECT_GE(parts.ce.item(), 0.0);
    EXPECT_GE(parts.seg.item(), -1e-9);
    EXPECT_LE(parts.seg.item(), 1.0 + 1e-9);
    EXPECT_GE(parts.un.item(), -1.0);
    EXPECT_LE(parts.un.item(), 0.0);
    EXPECT_GE(parts.cls.item(), -1e-12);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t c = 2 + seed % 3;
    const Tensor logits = uniform({c, 8, 8}, rng);
    const PseudoLabelMask pseudo{random_simplex(c, 8, 8, rng)};
    const LossWeights w{0.7, 1.3, 0.4, 0.9};
    auto through_softmax = [&](auto loss) {
      return grad_check([&](const Tensor& x) { return loss(ops::softmax(x, 0), x); }, logits);
    };
    EXPECT_LE(through_softmax([&](const Tensor& s, const Tensor&) { return ce_loss(s, pseudo); }), 1e-5) << seed;
    EXPECT_LE(through_softmax([&](const Tensor& s, const Tensor&) { return seg_loss(s, pseudo); }), 1e-5) << seed;
    EXPECT_LE(through_softmax([&](const Tensor&, const Tensor& x) { return uncertainty_loss(x); }), 1e-5) << seed;
    EXPECT_LE(through_softmax([&](const Tensor& s, const Tensor&) { return cls_loss(s); }), 1e-5) << seed;
    EXPECT_LE(through_softmax([&](const Tensor& s, const Tensor& x) {
                return total_loss(parts_of(s, x, pseudo), w);
              }),
              1e-5)
        << seed;
  }
}

TEST(TotalLoss, GradientIsWeightedSumOfParts) {
  std::mt19937_64 rng(3);
  const Tensor logits = uniform({3, 8, 8}, rng);
  const PseudoLabelMask pseudo{random_simplex(3, 8, 8, rng)};
  const LossWeights w{0.5, 2.0, 0.3, 1.5};
  auto grad_of = [&](auto f) {
    return numeric_gradient([&](const Tensor& x) { return f(ops::softmax(x, 0), x); }, logits);
  };
  const Tensor gt = grad_of([&](const Tensor& s, const Tensor& x) { return total_loss(parts_of(s, x, pseudo), w); });
  const Tensor gs = grad_of([&](const Tensor& s, const Tensor&) { return seg_loss(s, pseudo); });
  const Tensor gc = grad_of([&](const Tensor& s, const Tensor&) { return ce_loss(s, pseudo); });
  const Tensor gu = grad_of([&](const Tensor&, const Tensor& x) { return uncertainty_loss(x); });
  const Tensor gk = grad_of([&](const Tensor& s, const Tensor&) { return cls_loss(s); });
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_NEAR(gt[i], w.seg * gs[i] + w.ce * gc[i] + w.un * gu[i] + w.cls * gk[i], 1e-8);
  }
}

TEST(TotalLoss, WeightedCombination) {
  const LossParts parts{Tensor::scalar(0.5), Tensor::scalar(0.25), Tensor::scalar(-0.5), Tensor::scalar(0.125)};
  EXPECT_EQ(total_loss(parts, {0, 0, 0, 0}).item(), 0.0);
  EXPECT_EQ(total_loss(parts, {1, 0, 0, 0}).item(), 0.5);
  // Linear in each weight with the others held fixed.
  for (double a : {0.0, 0.5, 1.0, 3.0}) {
    EXPECT_DOUBLE_EQ(total_loss(parts, {1, 1, a, 1}).item(), 0.875 - 0.5 * a);
    EXPECT_DOUBLE_EQ(total_loss(parts, {1, a, 0, 0}).item(), 0.5 + 0.25 * a);
  }
  const LossParts bad{Tensor::scalar(NAN), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)};
  EXPECT_THROW(total_loss(bad, {}), Error);
  EXPECT_THROW(total_loss(parts, {-1, 1, 1, 1}), Error);
}

TEST(UncertaintyLoss, InvariantToPerPixelShift) {
  std::mt19937_64 rng(4);
  const Tensor logits = uniform({4, 6, 6}, rng);
  const Tensor shift = uniform({1, 6, 6}, rng, -10, 10);
  std::vector<double> v(logits.data().begin(), logits.data().end());
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 36; ++i) v[c * 36 + i] += shift[i];
  EXPECT_NEAR(uncertainty_loss(logits).item(), uncertainty_loss(Tensor({4, 6, 6}, v)).item(), 1e-13);
}

TEST(LossSuite, BatchAveragesAndPoolsClassUsage) {
  std::mt19937_64 rng(5);
  std::vector<Tensor> probs, logits;
  std::vector<PseudoLabelMask> pseudo;
  for (int i = 0; i < 3; ++i) {
    logits.push_back(uniform({2, 4, 4}, rng, -3, 3));
    probs.push_back(ops::softmax(logits.back(), 0));
    pseudo.push_back({random_simplex(2, 4, 4, rng)});
  }
  const LossParts b = LossSuite{}.evaluate_batch(probs, logits, pseudo);
  double ce = 0, seg = 0, un = 0;
  std::vector<double> pooled(2 * 48);
  for (std::size_t i = 0; i < 3; ++i) {
    ce += loop_ce(probs[i], pseudo[i].probs) / 3;
    seg += loop_dice(probs[i], pseudo[i].probs) / 3;
    un += loop_un(logits[i]) / 3;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 16; ++k) pooled[c * 48 + i * 16 + k] = probs[i][c * 16 + k];
  }
  EXPECT_NEAR(b.ce.item(), ce, 1e-12);
  EXPECT_NEAR(b.seg.item(), seg, 1e-12);
  EXPECT_NEAR(b.un.item(), un, 1e-12);
  EXPECT_NEAR(b.cls.item(), loop_cls(Tensor({2, 4, 12}, pooled)), 1e-12);
  EXPECT_THROW(LossSuite{}.evaluate_batch(probs, std::span<const Tensor>(logits).first(2), pseudo), ShapeError);
}

TEST(LossSuite, SlotsCanBeReplaced) {
  LossSuite suite;
  suite.cls = [](const Tensor&) { return Tensor::scalar(42.0); };
  std::mt19937_64 rng(6);
  const Tensor logits = uniform({2, 3, 3}, rng);
  const LossParts p = suite.evaluate(ops::softmax(logits, 0), logits, {random_simplex(2, 3, 3, rng)});
  EXPECT_EQ(p.cls.item(), 42.0);
}
