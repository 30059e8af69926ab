#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmsa/netpbm.hpp"

namespace dmsa {

/// Square count matrix; counts[pred * n + gt].
struct ConfusionMatrix {
  std::size_t n = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t classes = 0) : n(classes), counts(classes * classes, 0) {}
  std::uint64_t at(std::size_t pred, std::size_t gt) const { return counts[pred * n + gt]; }
  std::uint64_t& at(std::size_t pred, std::size_t gt) { return counts[pred * n + gt]; }
};

/// Permutation perm[pred] = gt maximising the total matched count
/// (Kuhn-Munkres, O(n^3)).
std::vector<std::size_t> hungarian_match(const ConfusionMatrix& confusion);

struct EvalReport {
  double miou = 0.0;
  double acc = 0.0;
  /// Per ground-truth class; empty when the class is absent from both the
  /// prediction and the ground truth.
  std::vector<std::optional<double>> per_class_iou;
  /// Predicted label -> ground-truth label mapping used (identity without matching).
  std::vector<std::size_t> matching;

  std::string to_json() const;
};

ConfusionMatrix confusion_matrix(std::span<const LabelMap> pred, std::span<const LabelMap> gt, std::size_t classes);

/// mIoU and pixel accuracy over a set of label maps, optionally after
/// Hungarian relabelling of the predictions. Classes absent from both sides
/// are left out of the mean.
EvalReport evaluate(std::span<const LabelMap> pred, std::span<const LabelMap> gt, std::size_t classes,
                    bool use_matching);
EvalReport evaluate(const LabelMap& pred, const LabelMap& gt, std::size_t classes, bool use_matching);

}  // namespace dmsa
