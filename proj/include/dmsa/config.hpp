#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "dmsa/losses.hpp"
#include "dmsa/par.hpp"
#include "dmsa/vit.hpp"

namespace dmsa {

struct DatasetSpec {
  std::size_t images = 64;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 7;
};

/// Ablation switches. `losses` off trains with cross-entropy only.
struct Toggles {
  bool aspp = true;
  bool par = true;
  bool losses = true;
};

struct TrainConfig {
  EncoderConfig encoder;
  bool aspp_residual = false;
  ParParams par;
  LossWeights loss_weights;
  double fusion_beta = 0.5;
  double cam_threshold = 0.25;
  double ema_momentum = 0.99;
  double learning_rate = 0.05;
  double sgd_momentum = 0.9;
  /// Global L2 norm bound on the student gradient; 0 disables clipping.
  double grad_clip = 1.0;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t classes = 2;
  DatasetSpec dataset;
  Toggles toggles;
  bool flip_augment = false;
  /// Student masks written per epoch by the CLI.
  std::size_t sample_masks = 2;
  /// Keep one checkpoint file per epoch instead of overwriting the latest.
  bool keep_epoch_checkpoints = false;

  void validate() const;
};

/// Parses a config document; unknown keys anywhere raise ConfigError.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace dmsa
