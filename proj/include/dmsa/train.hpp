#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmsa/config.hpp"
#include "dmsa/decoder.hpp"
#include "dmsa/metrics.hpp"
#include "dmsa/synth.hpp"
#include "dmsa/vit.hpp"

namespace dmsa {

/// Encoder plus class embeddings; the same layout serves student, teacher
/// and the optimiser's momentum buffers.
struct ModelParams {
  EncoderParams encoder;
  ClassEmbeddings classes;

  static ModelParams init(const EncoderConfig& cfg, std::size_t num_classes, std::mt19937_64& rng);
  static ModelParams zeros_like(const ModelParams& other);

  template <class F>
  void visit(F&& f) {
    encoder.visit("encoder.", f);
    f(std::string("class_embeddings"), classes.c);
  }
  /// Named tensors in visit order.
  std::vector<std::pair<std::string, Tensor>> flatten() const;
  std::vector<Tensor*> tensors();
};

struct ModelState {
  ModelParams student;
  ModelParams teacher;
  ModelParams momentum;
  std::size_t step = 0;
  std::size_t epoch = 1;
};

/// Student and teacher start identical; momentum starts at zero.
ModelState init_state(const TrainConfig& cfg);

/// teacher = mu * teacher + (1 - mu) * student, elementwise.
void ema_update(ModelParams& teacher, const ModelParams& student, double mu);

struct Forward {
  Tensor tokens;  // [N+1, D]
  Tensor logits;  // [C, H, W], bilinearly upsampled token logits
  Tensor probs;   // [C, H, W], masks_to_full_res of the token masks
};

/// Fixed per-channel input scaling applied before the encoder.
Tensor normalize_input(const Tensor& image);

Forward model_forward(const ModelParams& params, const Tensor& image, const TrainConfig& cfg, std::size_t epoch);

/// Teacher masks fused with CAM seeds, refined by PAR when enabled. Runs
/// without recording gradients.
PseudoLabelMask make_pseudo_label(const ModelParams& teacher, const Tensor& image, const TrainConfig& cfg,
                                  std::size_t epoch);

LabelMap predict_labels(const ModelParams& params, const Tensor& image, const TrainConfig& cfg, std::size_t epoch);

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 1;
  double seg = 0.0, ce = 0.0, un = 0.0, cls = 0.0, total = 0.0;
  /// Student predictions on this batch before the update, Hungarian matched.
  double miou = 0.0, acc = 0.0;
  /// Global L2 norm of the student gradient before clipping.
  double grad_norm = 0.0;
};

/// One teacher-student step on `batch`; advances state.step.
StepMetrics train_step(std::span<const Sample> batch, ModelState& state, const TrainConfig& cfg);

std::size_t steps_per_epoch(const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  /// Called after the last step of each epoch (and after the final step).
  std::function<void(std::size_t epoch, const ModelState&, const std::vector<Sample>&)> on_epoch_end;
};

struct TrainResult {
  ModelState state;
  std::vector<StepMetrics> history;
  EvalReport final_eval;  // student on the whole dataset
};

TrainResult run_training(const TrainConfig& cfg, const TrainHooks& hooks = {});

EvalReport evaluate_model(const ModelParams& params, const std::vector<Sample>& data, const TrainConfig& cfg,
                          std::size_t epoch);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

}  // namespace dmsa
