#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "dmsa/par.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dmsa;
using dmsa::testing::loop_par_step;
using dmsa::testing::loop_weights;
using dmsa::testing::LoopWeights;
using dmsa::testing::max_abs_diff;
using dmsa::testing::random_simplex;
using dmsa::testing::uniform;

namespace {

PseudoLabelMask one_hot(const std::vector<std::size_t>& labels, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> v(c * h * w, 0.0);
  for (std::size_t i = 0; i < h * w; ++i) v[labels[i] * h * w + i] = 1.0;
  return {Tensor({c, h, w}, std::move(v))};
}

double total_variation(const Tensor& p, std::size_t c) {
  const std::size_t h = p.dim(1), w = p.dim(2);
  double tv = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double v = p.at({c, i, j});
      if (i + 1 < h) tv += std::abs(p.at({c, i + 1, j}) - v);
      if (j + 1 < w) tv += std::abs(p.at({c, i, j + 1}) - v);
    }
  return tv;
}

ParParams rgb_only() {
  ParParams p;
  p.omega3 = 0.0;
  return p;
}

}  // namespace

TEST(NeighborSet, Counts) {
  const std::vector<std::size_t> one{1}, all{1, 2, 4, 8};
  EXPECT_EQ(neighbor_set({2, 2}, 5, 5, one).size(), 8u);
  EXPECT_EQ(neighbor_set({0, 0}, 5, 5, one).size(), 3u);
  EXPECT_EQ(neighbor_set({0, 0}, 9, 7, one).size(), 3u);
  EXPECT_EQ(neighbor_set({8, 8}, 17, 17, all).size(), 32u);
  const auto ring = neighbor_set({2, 2}, 5, 5, std::vector<std::size_t>{2});
  const std::vector<Pixel> expected{{0, 0}, {0, 2}, {0, 4}, {2, 0}, {2, 4}, {4, 0}, {4, 2}, {4, 4}};
  EXPECT_EQ(ring, expected);
  EXPECT_TRUE(neighbor_set({0, 0}, 1, 1, one).empty());
}

TEST(AffinityKernel, MatchesLoopEvaluation) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    ParParams p;
    p.omega3 = trial == 0 ? 0.01 : 0.5 * trial;
    p.dilations = {1, 2};
    const Tensor img = uniform({3, 6, 6}, rng, 0, 1);
    const AffinityKernel k = affinity_kernel(img, p);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        const LoopWeights ref = loop_weights(img, i, j, p);
        const auto w = k.weights_at(i, j);
        const auto n = k.neighbors_at(i, j);
        ASSERT_EQ(w.size(), ref.w.size());
        for (std::size_t m = 0; m < w.size(); ++m) {
          EXPECT_EQ(n[m], ref.nbrs[m][0] * 6 + ref.nbrs[m][1]);
          EXPECT_NEAR(w[m], ref.w[m], 1e-10);
          EXPECT_GE(w[m], 0.0);
        }
      }
  }
}

TEST(ParStep, MatchesLoopEvaluation) {
  std::mt19937_64 rng(2);
  ParParams p;
  const Tensor img = uniform({3, 6, 6}, rng, 0, 1);
  const PseudoLabelMask mask{random_simplex(3, 6, 6, rng)};
  p.iterations = 1;
  const PseudoLabelMask out = par_refine(mask, img, p);
  EXPECT_LE(max_abs_diff(out.probs, loop_par_step(img, mask.probs, p)), 1e-10);
}

TEST(AffinityKernel, ConstantImageGivesUniformWeights) {
  const Tensor img = Tensor::full({3, 7, 7}, 0.4);
  const AffinityKernel k = affinity_kernel(img, rgb_only());
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      const auto w = k.weights_at(i, j);
      for (double v : w) EXPECT_NEAR(v, 1.0 / static_cast<double>(w.size()), 1e-15);
    }
}

TEST(AffinityKernel, WeightsSumToOne) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    ParParams p;
    p.w1 = 0.05 + u(rng);
    p.w2 = 0.005 + u(rng);
    p.omega3 = trial % 5 == 0 ? 0.0 : 10.0 * u(rng);
    const Tensor img = uniform({3, 9, 9}, rng, 0, 1);
    const AffinityKernel k = affinity_kernel(img, p);
    EXPECT_LE(k.max_sum_error(), 1e-6);
    for (double w : k.weights) EXPECT_GE(w, 0.0);
  }
}

TEST(AffinityKernel, LargeOmegaApproachesPositionalWeights) {
  std::mt19937_64 rng(4);
  ParParams p;
  p.omega3 = 1e6;
  const AffinityKernel k = affinity_kernel(uniform({3, 8, 8}, rng, 0, 1), p);
  EXPECT_LE(max_abs_diff(Tensor({k.weights.size()}, k.weights), Tensor({k.pos_weights.size()}, k.pos_weights)), 1e-4);
}

TEST(AffinityKernel, RejectsBadParameters) {
  ParParams p;
  p.dilations = {};
  EXPECT_THROW(p.validate(), Error);
  p = ParParams{};
  p.dilations = {1, 0};
  EXPECT_THROW(p.validate(), Error);
  p = ParParams{};
  p.w1 = 0.0;
  EXPECT_THROW(p.validate(), Error);
  p = ParParams{};
  p.omega3 = -1.0;
  EXPECT_THROW(p.validate(), Error);
  p = ParParams{};
  p.iterations = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(ParRefine, ConstantMaskIsFixedPoint) {
  std::mt19937_64 rng(5);
  std::vector<double> v(3 * 64);
  for (std::size_t i = 0; i < 64; ++i) {
    v[i] = 0.2;
    v[64 + i] = 0.5;
    v[128 + i] = 0.3;
  }
  const PseudoLabelMask mask{Tensor({3, 8, 8}, v)};
  ParParams p;
  p.iterations = 7;
  EXPECT_LE(max_abs_diff(par_refine(mask, uniform({3, 8, 8}, rng, 0, 1), p).probs, mask.probs), 1e-15);
}

TEST(ParRefine, CheckerboardOnConstantImage) {
  std::vector<std::size_t> labels(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) labels[i * 4 + j] = (i + j) % 2;
  const PseudoLabelMask mask = one_hot(labels, 2, 4, 4);
  ParParams p = rgb_only();
  p.dilations = {1};
  p.iterations = 1;
  const PseudoLabelMask out = par_refine(mask, Tensor::full({3, 4, 4}, 0.7), p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      // Edge neighbours carry the opposite colour, diagonal ones the same.
      double same = 0, opposite = 0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const int k = int(i) + a, l = int(j) + b;
          if ((a == 0 && b == 0) || k < 0 || l < 0 || k > 3 || l > 3) continue;
          ((a + b) % 2 == 0 ? same : opposite) += 1;
        }
      const std::size_t own = labels[i * 4 + j];
      EXPECT_NEAR(out.probs.at({own, i, j}), same / (same + opposite), 1e-15);
      EXPECT_NEAR(out.probs.at({1 - own, i, j}), opposite / (same + opposite), 1e-15);
    }
}

TEST(ParRefine, InvariantToColourShift) {
  std::mt19937_64 rng(6);
  const Tensor img = uniform({3, 8, 8}, rng, 0, 1);
  std::vector<double> shifted(img.data().begin(), img.data().end());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 64; ++i) shifted[c * 64 + i] += 0.25 * double(c + 1);
  const PseudoLabelMask mask{random_simplex(3, 8, 8, rng)};
  EXPECT_LE(max_abs_diff(par_refine(mask, img, {}).probs, par_refine(mask, Tensor({3, 8, 8}, shifted), {}).probs),
            1e-12);
}

TEST(ParRefine, EquivariantToClassPermutation) {
  std::mt19937_64 rng(7);
  const Tensor img = uniform({3, 8, 8}, rng, 0, 1);
  const PseudoLabelMask mask{random_simplex(3, 8, 8, rng)};
  const std::array<std::size_t, 3> perm{2, 0, 1};
  auto permute = [&](const Tensor& t) {
    std::vector<double> v(t.size());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 64; ++i) v[perm[c] * 64 + i] = t[c * 64 + i];
    return Tensor(t.shape(), std::move(v));
  };
  const Tensor a = permute(par_refine(mask, img, {}).probs);
  const Tensor b = par_refine(PseudoLabelMask{permute(mask.probs)}, img, {}).probs;
  EXPECT_LE(max_abs_diff(a, b), 1e-15);
}

TEST(ParRefine, StaysOnSimplexEveryIteration) {
  std::mt19937_64 rng(8);
  const Tensor img = uniform({3, 10, 10}, rng, 0, 1);
  const AffinityKernel k = affinity_kernel(img, {});
  PseudoLabelMask m{random_simplex(4, 10, 10, rng)};
  for (int t = 0; t < 20; ++t) {
    m = par_step(m, k);
    EXPECT_LE(m.max_simplex_error(), 1e-12);
    for (double v : m.probs.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(ParRefine, TotalVariationDoesNotGrowOnConstantImage) {
  std::mt19937_64 rng(9);
  const Tensor img = Tensor::full({3, 12, 12}, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    const AffinityKernel k = affinity_kernel(img, {});
    PseudoLabelMask m{random_simplex(2, 12, 12, rng)};
    for (int t = 0; t < 10; ++t) {
      const PseudoLabelMask next = par_step(m, k);
      for (std::size_t c = 0; c < 2; ++c) EXPECT_LE(total_variation(next.probs, c), total_variation(m.probs, c) + 1e-12);
      m = next;
    }
  }
}

TEST(ParRefine, BoundaryMovesTowardColourEdge) {
  // Left half dark, right half bright; the mask edge sits one column to the right.
  const std::size_t h = 16, w = 16, edge = 8;
  std::vector<double> img(3 * h * w);
  std::vector<std::size_t> gt(h * w), labels(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t c = 0; c < 3; ++c) img[(c * h + i) * w + j] = j < edge ? 0.1 : 0.9;
      gt[i * w + j] = j < edge ? 0 : 1;
      labels[i * w + j] = j < edge + 1 ? 0 : 1;
    }
  const PseudoLabelMask out = par_refine(one_hot(labels, 2, h, w), Tensor({3, h, w}, img), {});
  const auto refined = out.argmax();
  std::size_t before = 0, after = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    before += labels[i] != gt[i];
    after += refined[i] != gt[i];
  }
  EXPECT_EQ(before, h);
  EXPECT_LT(after, before);
}

TEST(ParRefine, ShapeMismatch) {
  std::mt19937_64 rng(10);
  EXPECT_THROW(par_refine(PseudoLabelMask{random_simplex(2, 4, 4, rng)}, Tensor::zeros({3, 4, 5}), {}), ShapeError);
  const AffinityKernel k = affinity_kernel(Tensor::zeros({3, 4, 5}), {});
  EXPECT_THROW(par_step(PseudoLabelMask{random_simplex(2, 4, 4, rng)}, k), ShapeError);
}
