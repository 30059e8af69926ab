#include "dmsa/config.hpp"

#include <cmath>
#include <set>

#include "dmsa/netpbm.hpp"

namespace dmsa {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw ConfigError("config: unknown key \"" + k + "\" in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for " + where + "." + key + ": " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  encoder.validate();
  par.validate();
  loss_weights.validate();
  if (classes < 2 || classes > 256) throw ConfigError("config: classes must be in 2..256");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw ConfigError("config: ema_momentum must lie in [0,1)");
  if (!(fusion_beta >= 0.0 && fusion_beta <= 1.0)) throw ConfigError("config: fusion_beta must lie in [0,1]");
  if (!(cam_threshold > 0.0 && cam_threshold < 1.0)) throw ConfigError("config: cam_threshold must lie in (0,1)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("config: learning_rate must be >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("config: sgd_momentum must lie in [0,1)");
  if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) throw ConfigError("config: grad_clip must be >= 0");
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (dataset.images == 0) throw ConfigError("config: dataset.images must be positive");
  if (dataset.height != encoder.image_size || dataset.width != encoder.image_size) {
    throw ConfigError("config: dataset images are " + std::to_string(dataset.height) + "x" +
                      std::to_string(dataset.width) + " but the encoder expects " +
                      std::to_string(encoder.image_size) + "x" + std::to_string(encoder.image_size));
  }
}

TrainConfig config_from_json(const json& j) {
  reject_unknown(j, "config",
                 {"encoder", "aspp_residual", "par", "loss_weights", "fusion_beta", "cam_threshold", "ema_momentum",
                  "learning_rate", "sgd_momentum", "grad_clip", "steps", "batch_size", "seed", "classes", "dataset", "toggles",
                  "flip_augment", "sample_masks", "keep_epoch_checkpoints"});
  TrainConfig cfg;
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    reject_unknown(e, "encoder", {"image_size", "patch_size", "embed_dim", "num_heads", "num_blocks", "mlp_ratio"});
    read(e, "image_size", cfg.encoder.image_size, "encoder");
    read(e, "patch_size", cfg.encoder.patch_size, "encoder");
    read(e, "embed_dim", cfg.encoder.embed_dim, "encoder");
    read(e, "num_heads", cfg.encoder.num_heads, "encoder");
    read(e, "num_blocks", cfg.encoder.num_blocks, "encoder");
    read(e, "mlp_ratio", cfg.encoder.mlp_ratio, "encoder");
  }
  if (j.contains("par")) {
    const auto& p = j.at("par");
    reject_unknown(p, "par", {"dilations", "w1", "w2", "omega3", "iterations"});
    read(p, "dilations", cfg.par.dilations, "par");
    read(p, "w1", cfg.par.w1, "par");
    read(p, "w2", cfg.par.w2, "par");
    read(p, "omega3", cfg.par.omega3, "par");
    read(p, "iterations", cfg.par.iterations, "par");
  }
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    reject_unknown(w, "loss_weights", {"seg", "ce", "un", "cls"});
    read(w, "seg", cfg.loss_weights.seg, "loss_weights");
    read(w, "ce", cfg.loss_weights.ce, "loss_weights");
    read(w, "un", cfg.loss_weights.un, "loss_weights");
    read(w, "cls", cfg.loss_weights.cls, "loss_weights");
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, "dataset", {"images", "height", "width", "seed"});
    read(d, "images", cfg.dataset.images, "dataset");
    read(d, "height", cfg.dataset.height, "dataset");
    read(d, "width", cfg.dataset.width, "dataset");
    read(d, "seed", cfg.dataset.seed, "dataset");
  }
  if (j.contains("toggles")) {
    const auto& t = j.at("toggles");
    reject_unknown(t, "toggles", {"aspp", "par", "losses"});
    read(t, "aspp", cfg.toggles.aspp, "toggles");
    read(t, "par", cfg.toggles.par, "toggles");
    read(t, "losses", cfg.toggles.losses, "toggles");
  }
  read(j, "aspp_residual", cfg.aspp_residual, "config");
  read(j, "fusion_beta", cfg.fusion_beta, "config");
  read(j, "cam_threshold", cfg.cam_threshold, "config");
  read(j, "ema_momentum", cfg.ema_momentum, "config");
  read(j, "learning_rate", cfg.learning_rate, "config");
  read(j, "sgd_momentum", cfg.sgd_momentum, "config");
  read(j, "grad_clip", cfg.grad_clip, "config");
  read(j, "steps", cfg.steps, "config");
  read(j, "batch_size", cfg.batch_size, "config");
  read(j, "seed", cfg.seed, "config");
  read(j, "classes", cfg.classes, "config");
  read(j, "flip_augment", cfg.flip_augment, "config");
  read(j, "sample_masks", cfg.sample_masks, "config");
  read(j, "keep_epoch_checkpoints", cfg.keep_epoch_checkpoints, "config");
  cfg.validate();
  return cfg;
}

json config_to_json(const TrainConfig& cfg) {
  json j;
  j["encoder"] = {{"image_size", cfg.encoder.image_size}, {"patch_size", cfg.encoder.patch_size},
                  {"embed_dim", cfg.encoder.embed_dim},   {"num_heads", cfg.encoder.num_heads},
                  {"num_blocks", cfg.encoder.num_blocks}, {"mlp_ratio", cfg.encoder.mlp_ratio}};
  j["aspp_residual"] = cfg.aspp_residual;
  j["par"] = {{"dilations", cfg.par.dilations}, {"w1", cfg.par.w1}, {"w2", cfg.par.w2},
              {"omega3", cfg.par.omega3},       {"iterations", cfg.par.iterations}};
  j["loss_weights"] = {{"seg", cfg.loss_weights.seg},
                       {"ce", cfg.loss_weights.ce},
                       {"un", cfg.loss_weights.un},
                       {"cls", cfg.loss_weights.cls}};
  j["fusion_beta"] = cfg.fusion_beta;
  j["cam_threshold"] = cfg.cam_threshold;
  j["ema_momentum"] = cfg.ema_momentum;
  j["learning_rate"] = cfg.learning_rate;
  j["sgd_momentum"] = cfg.sgd_momentum;
  j["grad_clip"] = cfg.grad_clip;
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["classes"] = cfg.classes;
  j["dataset"] = {{"images", cfg.dataset.images},
                  {"height", cfg.dataset.height},
                  {"width", cfg.dataset.width},
                  {"seed", cfg.dataset.seed}};
  j["toggles"] = {{"aspp", cfg.toggles.aspp}, {"par", cfg.toggles.par}, {"losses", cfg.toggles.losses}};
  j["flip_augment"] = cfg.flip_augment;
  j["sample_masks"] = cfg.sample_masks;
  j["keep_epoch_checkpoints"] = cfg.keep_epoch_checkpoints;
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace dmsa
