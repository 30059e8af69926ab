#include "dmsa/metrics.hpp"

#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace dmsa {

std::vector<std::size_t> hungarian_match(const ConfusionMatrix& confusion) {
  const std::size_t n = confusion.n;
  if (n == 0) return {};
  // Minimise -count with the potential-based Hungarian method (1-indexed rows).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), way_cost(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  auto cost = [&](std::size_t r, std::size_t c) { return -static_cast<double>(confusion.at(r - 1, c - 1)); };

  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t r0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost(r0, c) - u[r0] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> perm(n);
  for (std::size_t c = 1; c <= n; ++c) perm[match[c] - 1] = c - 1;
  return perm;
}

ConfusionMatrix confusion_matrix(std::span<const LabelMap> pred, std::span<const LabelMap> gt, std::size_t classes) {
  if (pred.size() != gt.size()) {
    throw ShapeError("evaluate: " + std::to_string(pred.size()) + " predictions for " + std::to_string(gt.size()) +
                     " ground-truth maps");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t m = 0; m < pred.size(); ++m) {
    const auto& p = pred[m];
    const auto& g = gt[m];
    if (p.height != g.height || p.width != g.width || p.labels.size() != g.labels.size()) {
      throw ShapeError("evaluate: prediction " + std::to_string(p.height) + "x" + std::to_string(p.width) +
                       " vs ground truth " + std::to_string(g.height) + "x" + std::to_string(g.width));
    }
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      if (p.labels[i] >= classes || g.labels[i] >= classes) {
        throw Error("evaluate: label " + std::to_string(std::max(p.labels[i], g.labels[i])) + " out of range for " +
                    std::to_string(classes) + " classes");
      }
      ++cm.at(p.labels[i], g.labels[i]);
    }
  }
  return cm;
}

EvalReport evaluate(std::span<const LabelMap> pred, std::span<const LabelMap> gt, std::size_t classes,
                    bool use_matching) {
  if (classes == 0) throw Error("evaluate: class count must be positive");
  const ConfusionMatrix raw = confusion_matrix(pred, gt, classes);
  EvalReport report;
  report.matching.resize(classes);
  std::iota(report.matching.begin(), report.matching.end(), std::size_t{0});
  if (use_matching) report.matching = hungarian_match(raw);

  ConfusionMatrix cm(classes);
  for (std::size_t p = 0; p < classes; ++p)
    for (std::size_t g = 0; g < classes; ++g) cm.at(report.matching[p], g) += raw.at(p, g);

  std::uint64_t total = 0, correct = 0;
  for (std::size_t p = 0; p < classes; ++p)
    for (std::size_t g = 0; g < classes; ++g) {
      total += cm.at(p, g);
      if (p == g) correct += cm.at(p, g);
    }
  report.acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

  double iou_sum = 0.0;
  std::size_t present = 0;
  report.per_class_iou.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t pred_c = 0, gt_c = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      pred_c += cm.at(c, k);
      gt_c += cm.at(k, c);
    }
    const std::uint64_t inter = cm.at(c, c);
    const std::uint64_t uni = pred_c + gt_c - inter;
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    report.per_class_iou[c] = iou;
    iou_sum += iou;
    ++present;
  }
  report.miou = present ? iou_sum / static_cast<double>(present) : 0.0;
  return report;
}

EvalReport evaluate(const LabelMap& pred, const LabelMap& gt, std::size_t classes, bool use_matching) {
  return evaluate(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), classes, use_matching);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["miou"] = miou;
  j["acc"] = acc;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : per_class_iou) {
    if (v) per.push_back(*v);
    else per.push_back(nullptr);
  }
  j["per_class_iou"] = per;
  j["matching"] = matching;
  return j.dump();
}

}  // namespace dmsa
