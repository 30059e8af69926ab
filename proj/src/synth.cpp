#include "dmsa/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace dmsa {

namespace {

using Rgb = std::array<double, 3>;

// Saturated base colours; class k >= 1 uses kFamilies[(k-1) % size].
constexpr std::array<Rgb, 8> kFamilies = {{
    {0.90, 0.20, 0.15},
    {0.20, 0.80, 0.25},
    {0.20, 0.35, 0.95},
    {0.95, 0.85, 0.15},
    {0.85, 0.25, 0.85},
    {0.15, 0.85, 0.90},
    {0.95, 0.55, 0.10},
    {0.60, 0.95, 0.55},
}};

constexpr double kMinFraction = 0.05;
constexpr double kMaxFraction = 0.6;

struct Scene {
  std::vector<double> rgb;  // [3,H,W]
  LabelMap gt;
};

Scene draw_scene(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t classes) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  const std::size_t plane = h * w;
  Scene s;
  s.rgb.resize(3 * plane);
  s.gt = {h, w, std::vector<std::uint8_t>(plane, 0)};

  // Background: dark grey with a gentle tint, a low-frequency wave and noise.
  const double base = 0.15 + 0.15 * unit(rng);
  const Rgb tint = {0.03 * (unit(rng) - 0.5), 0.03 * (unit(rng) - 0.5), 0.03 * (unit(rng) - 0.5)};
  const double fx = 0.5 + 1.5 * unit(rng), fy = 0.5 + 1.5 * unit(rng), phase = 2.0 * std::numbers::pi * unit(rng);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double wave = 0.05 * std::sin(2.0 * std::numbers::pi * (fx * j / w + fy * i / h) + phase);
      for (std::size_t c = 0; c < 3; ++c) s.rgb[c * plane + i * w + j] = base + tint[c] + wave + noise(rng);
    }

  std::uniform_int_distribution<std::size_t> n_shapes(1, 3);
  std::uniform_int_distribution<std::size_t> cls_pick(1, classes - 1);
  const std::size_t count = n_shapes(rng);
  const double side = static_cast<double>(std::min(h, w));
  for (std::size_t k = 0; k < count; ++k) {
    const auto label = static_cast<std::uint8_t>(cls_pick(rng));
    const Rgb& fam = kFamilies[(label - 1) % kFamilies.size()];
    const Rgb colour = {std::clamp(fam[0] + 0.16 * (unit(rng) - 0.5), 0.0, 1.0),
                        std::clamp(fam[1] + 0.16 * (unit(rng) - 0.5), 0.0, 1.0),
                        std::clamp(fam[2] + 0.16 * (unit(rng) - 0.5), 0.0, 1.0)};
    const bool disc = unit(rng) < 0.5;
    const double cy = side * (0.15 + 0.7 * unit(rng)), cx = side * (0.15 + 0.7 * unit(rng));
    const double ry = side * (0.1 + 0.2 * unit(rng));
    const double rx = disc ? ry : side * (0.1 + 0.2 * unit(rng));
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double dy = (static_cast<double>(i) + 0.5 - cy) / ry;
        const double dx = (static_cast<double>(j) + 0.5 - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        s.gt.labels[i * w + j] = label;
        for (std::size_t c = 0; c < 3; ++c) s.rgb[c * plane + i * w + j] = colour[c] + noise(rng);
      }
  }
  for (auto& v : s.rgb) v = std::clamp(v, 0.0, 1.0);
  return s;
}

}  // namespace

double shape_fraction(const LabelMap& gt) {
  if (gt.labels.empty()) return 0.0;
  const auto shapes = std::count_if(gt.labels.begin(), gt.labels.end(), [](std::uint8_t v) { return v != 0; });
  return static_cast<double>(shapes) / static_cast<double>(gt.labels.size());
}

std::vector<Sample> synth_dataset(std::uint64_t seed, std::size_t n_images, std::size_t height, std::size_t width,
                                  std::size_t classes) {
  if (classes < 2 || classes > 256) throw Error("synth_dataset: class count must be in 2..256");
  if (height < 16 || width < 16) throw Error("synth_dataset: images must be at least 16x16");
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(n_images);
  while (out.size() < n_images) {
    Scene s = draw_scene(rng, height, width, classes);
    const double frac = shape_fraction(s.gt);
    if (frac < kMinFraction || frac > kMaxFraction) continue;
    out.push_back({Tensor({3, height, width}, std::move(s.rgb)), std::move(s.gt)});
  }
  return out;
}

}  // namespace dmsa
