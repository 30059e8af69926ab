#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dmsa/metrics.hpp"

using namespace dmsa;

namespace {

std::uint64_t matched_total(const ConfusionMatrix& m, const std::vector<std::size_t>& perm) {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < m.n; ++p) s += m.at(p, perm[p]);
  return s;
}

std::uint64_t brute_force_best(const ConfusionMatrix& m) {
  std::vector<std::size_t> perm(m.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::uint64_t best = 0;
  do best = std::max(best, matched_total(m, perm));
  while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

LabelMap random_labels(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(c) - 1);
  LabelMap m{h, w, std::vector<std::uint8_t>(h * w)};
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(d(rng));
  return m;
}

}  // namespace

TEST(Hungarian, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(0, 50);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionMatrix m(6);
    for (auto& v : m.counts) v = static_cast<std::uint64_t>(d(rng));
    const auto perm = hungarian_match(m);
    ASSERT_EQ(perm.size(), 6u);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 6; ++i) ASSERT_EQ(sorted[i], i);
    EXPECT_EQ(matched_total(m, perm), brute_force_best(m)) << "trial " << trial;
  }
}

TEST(Hungarian, SmallCases) {
  ConfusionMatrix one(1);
  one.at(0, 0) = 3;
  EXPECT_EQ(hungarian_match(one), (std::vector<std::size_t>{0}));
  ConfusionMatrix swapped(2);
  swapped.at(0, 1) = 10;
  swapped.at(1, 0) = 7;
  swapped.at(0, 0) = 1;
  EXPECT_EQ(hungarian_match(swapped), (std::vector<std::size_t>{1, 0}));
}

TEST(Evaluate, HandCountedExample) {
  const LabelMap gt{2, 2, {0, 0, 1, 1}}, pred{2, 2, {0, 1, 1, 1}};
  for (bool match : {false, true}) {
    const EvalReport r = evaluate(pred, gt, 2, match);
    EXPECT_EQ(r.acc, 0.75);
    EXPECT_EQ(r.miou, (0.5 + 2.0 / 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(r.miou, 7.0 / 12.0);
    ASSERT_EQ(r.per_class_iou.size(), 2u);
    EXPECT_DOUBLE_EQ(*r.per_class_iou[0], 0.5);
    EXPECT_DOUBLE_EQ(*r.per_class_iou[1], 2.0 / 3.0);
  }
}

TEST(Evaluate, MatchingUndoesLabelPermutation) {
  std::mt19937_64 rng(2);
  for (std::size_t c = 2; c <= 6; ++c) {
    std::vector<LabelMap> gts, preds;
    std::vector<std::uint8_t> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < 3; ++i) {
      gts.push_back(random_labels(8, 8, c, rng));
      LabelMap p = gts.back();
      for (auto& l : p.labels) l = perm[l];
      preds.push_back(p);
    }
    const EvalReport r = evaluate(preds, gts, c, true);
    EXPECT_EQ(r.miou, 1.0);
    EXPECT_EQ(r.acc, 1.0);
    for (std::size_t k = 0; k < c; ++k) EXPECT_EQ(r.matching[perm[k]], k);
  }
}

TEST(Evaluate, MatchedScoreInvariantToPredictionRelabelling) {
  std::mt19937_64 rng(3);
  for (std::size_t c = 2; c <= 6; ++c) {
    const LabelMap gt = random_labels(10, 10, c, rng), pred = random_labels(10, 10, c, rng);
    std::vector<std::uint8_t> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabelMap relabelled = pred;
    for (auto& l : relabelled.labels) l = perm[l];
    const EvalReport a = evaluate(pred, gt, c, true), b = evaluate(relabelled, gt, c, true);
    EXPECT_DOUBLE_EQ(a.miou, b.miou);
    EXPECT_DOUBLE_EQ(a.acc, b.acc);
  }
}

TEST(Evaluate, AbsentClassesAreSkipped) {
  const LabelMap gt{1, 4, {0, 0, 1, 1}}, pred{1, 4, {0, 0, 1, 1}};
  const EvalReport r = evaluate(pred, gt, 3, false);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_FALSE(r.per_class_iou[2].has_value());
  EXPECT_EQ(r.to_json(), R"({"acc":1.0,"matching":[0,1,2],"miou":1.0,"per_class_iou":[1.0,1.0,null]})");
}

TEST(Evaluate, RejectsBadInput) {
  const LabelMap a{2, 2, {0, 0, 1, 1}}, b{1, 4, {0, 0, 1, 1}}, c{2, 2, {0, 3, 1, 1}};
  EXPECT_THROW(evaluate(a, b, 2, false), Error);
  EXPECT_THROW(evaluate(c, a, 2, false), Error);
}

TEST(ConfusionMatrix, CountsPredictionAgainstTruth) {
  const std::vector<LabelMap> gt{{1, 3, {0, 1, 1}}}, pred{{1, 3, {1, 1, 0}}};
  const ConfusionMatrix m = confusion_matrix(pred, gt, 2);
  EXPECT_EQ(m.at(1, 0), 1u);
  EXPECT_EQ(m.at(1, 1), 1u);
  EXPECT_EQ(m.at(0, 1), 1u);
  EXPECT_EQ(m.at(0, 0), 0u);
}
