#include "dmsa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dmsa/losses.hpp"
#include "dmsa/ops.hpp"
#include "dmsa/par.hpp"
#include "dmsa/tape.hpp"

namespace dmsa {

namespace {

constexpr double kInputMean = 0.5;
constexpr double kInputScale = 4.0;

Tensor flip_horizontal(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[(k * h + i) * w + j] = x[(k * h + i) * w + (w - 1 - j)];
  return Tensor(x.shape(), std::move(out));
}

LabelMap flip_horizontal(const LabelMap& m) {
  LabelMap out = m;
  for (std::size_t i = 0; i < m.height; ++i)
    for (std::size_t j = 0; j < m.width; ++j) out.labels[i * m.width + j] = m.labels[i * m.width + (m.width - 1 - j)];
  return out;
}

LabelMap to_label_map(const PseudoLabelMask& mask) {
  auto arg = mask.argmax();
  LabelMap out{mask.height(), mask.width(), std::vector<std::uint8_t>(arg.size())};
  for (std::size_t i = 0; i < arg.size(); ++i) out.labels[i] = static_cast<std::uint8_t>(arg[i]);
  return out;
}

LossWeights effective_weights(const TrainConfig& cfg) {
  if (cfg.toggles.losses) return cfg.loss_weights;
  return {0.0, cfg.loss_weights.ce, 0.0, 0.0};
}

EncoderOptions encoder_options(const TrainConfig& cfg) {
  EncoderOptions opt;
  opt.aspp_on = cfg.toggles.aspp;
  opt.aspp_residual = cfg.aspp_residual;
  return opt;
}

void require_same_layout(const std::vector<std::pair<std::string, Tensor>>& a,
                         const std::vector<std::pair<std::string, Tensor>>& b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": parameter trees differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
      throw ShapeError(std::string(what) + ": parameter " + a[i].first + " " + shape_str(a[i].second.shape()) +
                       " does not match " + b[i].first + " " + shape_str(b[i].second.shape()));
    }
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

ModelParams ModelParams::init(const EncoderConfig& cfg, std::size_t num_classes, std::mt19937_64& rng) {
  ModelParams p;
  p.encoder = EncoderParams::init(cfg, rng);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> c(num_classes * cfg.embed_dim);
  for (auto& v : c) v = dist(rng);
  p.classes.c = Tensor({num_classes, cfg.embed_dim}, std::move(c));
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams p = other;
  p.visit([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape()); });
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::flatten() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const_cast<ModelParams*>(this)->visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

ModelState init_state(const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ModelState s;
  s.student = ModelParams::init(cfg.encoder, cfg.classes, rng);
  s.teacher = s.student;
  s.momentum = ModelParams::zeros_like(s.student);
  return s;
}

void ema_update(ModelParams& teacher, const ModelParams& student, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) throw Error("ema_update: momentum must lie in [0,1)");
  require_same_layout(teacher.flatten(), student.flatten(), "ema_update");
  auto dst = teacher.tensors();
  auto src = const_cast<ModelParams&>(student).tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const Tensor& t = *dst[i];
    const Tensor& s = *src[i];
    std::vector<double> v(t.size());
    // Written as a step toward the student so equal entries stay bit-identical.
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = mu == 0.0 ? s[k] : t[k] + (1.0 - mu) * (s[k] - t[k]);
    *dst[i] = t.with_data(std::move(v));
  }
}

Tensor normalize_input(const Tensor& image) {
  std::vector<double> v(image.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (image[i] - kInputMean) * kInputScale;
  return image.with_data(std::move(v));
}

Forward model_forward(const ModelParams& params, const Tensor& image, const TrainConfig& cfg, std::size_t epoch) {
  EncoderOutput enc = encoder_forward(normalize_input(image), cfg.encoder, params.encoder, epoch, encoder_options(cfg));
  const std::size_t n = cfg.encoder.num_patches(), h = image.dim(1), w = image.dim(2);
  Tensor z_mask = ops::slice(enc.tokens, 0, 1, n);
  Tensor logits = decode_logits(z_mask, params.classes);
  Tensor probs = masks_to_full_res(ops::softmax(logits, 1), h, w).probs;
  Tensor full_logits = ops::bilinear_upsample(tokens_to_grid(logits), h, w);
  return {enc.tokens, full_logits, probs};
}

PseudoLabelMask make_pseudo_label(const ModelParams& teacher, const Tensor& image, const TrainConfig& cfg,
                                  std::size_t epoch) {
  const std::size_t n = cfg.encoder.num_patches(), g = cfg.encoder.grid(), d = cfg.encoder.embed_dim;
  const std::size_t h = image.dim(1), w = image.dim(2);
  EncoderOutput enc = encoder_forward(normalize_input(image), cfg.encoder, teacher.encoder, epoch, encoder_options(cfg));
  Tensor z_mask = ops::slice(enc.tokens.detach(), 0, 1, n);
  PseudoLabelMask teacher_mask = masks_to_full_res(decode_masks(z_mask, teacher.classes), h, w);

  // CAM features are the patch tokens centred on their image mean.
  Tensor centred = ops::sub(z_mask, ops::add_row_vector(Tensor::zeros(z_mask.shape()),
                                                        ops::scale(ops::sum_last(ops::transpose(z_mask)), 1.0 / n)));
  Tensor features = ops::reshape(ops::transpose(centred), {d, g, g});
  Tensor cam_maps = ops::bilinear_upsample(cam(features, cam_weights(teacher.classes)), h, w);
  PseudoLabelMask cam_mask = cam_to_initial_labels(cam_maps, cfg.cam_threshold);

  PseudoLabelMask fused = fuse_masks(cam_mask, teacher_mask, cfg.fusion_beta);
  if (!cfg.toggles.par) return fused;
  return par_refine(fused, image, cfg.par);
}

LabelMap predict_labels(const ModelParams& params, const Tensor& image, const TrainConfig& cfg, std::size_t epoch) {
  return to_label_map({model_forward(params, image, cfg, epoch).probs});
}

std::size_t steps_per_epoch(const TrainConfig& cfg) {
  return (cfg.dataset.images + cfg.batch_size - 1) / cfg.batch_size;
}

StepMetrics train_step(std::span<const Sample> batch, ModelState& state, const TrainConfig& cfg) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const std::size_t epoch = state.epoch;
  const LossWeights weights = effective_weights(cfg);
  const LossSuite suite;
  std::mt19937_64 flip_rng(mix_seed(cfg.seed, 0x5eed0000ULL + state.step));
  std::bernoulli_distribution coin(0.5);

  std::vector<Tensor> images;
  std::vector<PseudoLabelMask> pseudo;
  std::vector<LabelMap> gts;
  for (const auto& s : batch) {
    PseudoLabelMask p = make_pseudo_label(state.teacher, s.image, cfg, epoch);
    if (cfg.flip_augment && coin(flip_rng)) {
      images.push_back(flip_horizontal(s.image));
      pseudo.push_back({flip_horizontal(p.probs)});
      gts.push_back(flip_horizontal(s.gt));
    } else {
      images.push_back(s.image);
      pseudo.push_back(std::move(p));
      gts.push_back(s.gt);
    }
  }

  ModelParams tracked = state.student;
  tracked.visit([](const std::string&, Tensor& t) { t = t.requires_grad(true); });

  StepMetrics m;
  m.step = state.step;
  m.epoch = epoch;
  std::vector<LabelMap> preds;
  Gradients grads;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    std::vector<Tensor> probs, logits;
    for (const auto& img : images) {
      Forward fwd = model_forward(tracked, img, cfg, epoch);
      preds.push_back(to_label_map({fwd.probs.detach()}));
      probs.push_back(fwd.probs);
      logits.push_back(fwd.logits);
    }
    LossParts parts = suite.evaluate_batch(probs, logits, pseudo);
    Tensor loss = total_loss(parts, weights);
    m.seg = parts.seg.item();
    m.ce = parts.ce.item();
    m.un = parts.un.item();
    m.cls = parts.cls.item();
    m.total = loss.item();
    grads = tape.backward(loss);
  }

  // SGD with momentum on the clipped gradient: v = mu v + g; p -= lr v.
  auto params = state.student.tensors();
  auto moments = state.momentum.tensors();
  auto leaves = tracked.tensors();
  std::vector<Tensor> g_all;
  double sq = 0.0;
  for (const Tensor* leaf : leaves) {
    g_all.push_back(grads.get(*leaf));
    for (double v : g_all.back().data()) sq += v * v;
  }
  m.grad_norm = std::sqrt(sq);
  const double clip = cfg.grad_clip > 0.0 && m.grad_norm > cfg.grad_clip ? cfg.grad_clip / m.grad_norm : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = g_all[i];
    const Tensor& p = *params[i];
    const Tensor& v = *moments[i];
    std::vector<double> nv(p.size()), np(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      nv[k] = cfg.sgd_momentum * v[k] + clip * g[k];
      np[k] = p[k] - cfg.learning_rate * nv[k];
    }
    check_finite(np, "sgd update");
    *moments[i] = v.with_data(std::move(nv));
    *params[i] = p.with_data(std::move(np));
  }
  ema_update(state.teacher, state.student, cfg.ema_momentum);
  ++state.step;

  EvalReport r = evaluate(preds, gts, cfg.classes, true);
  m.miou = r.miou;
  m.acc = r.acc;
  return m;
}

EvalReport evaluate_model(const ModelParams& params, const std::vector<Sample>& data, const TrainConfig& cfg,
                          std::size_t epoch) {
  std::vector<LabelMap> preds, gts;
  for (const auto& s : data) {
    preds.push_back(predict_labels(params, s.image, cfg, epoch));
    gts.push_back(s.gt);
  }
  return evaluate(preds, gts, cfg.classes, true);
}

TrainResult run_training(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto data = synth_dataset(cfg.dataset.seed, cfg.dataset.images, cfg.dataset.height, cfg.dataset.width,
                                  cfg.classes);
  TrainResult result;
  result.state = init_state(cfg);
  const std::size_t spe = steps_per_epoch(cfg);
  std::vector<std::size_t> order(data.size());
  std::vector<Sample> batch;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t epoch = step / spe + 1;
    const std::size_t pos = step % spe;
    if (pos == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(cfg.seed, epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    result.state.epoch = epoch;
    batch.clear();
    for (std::size_t k = pos * cfg.batch_size; k < std::min(data.size(), (pos + 1) * cfg.batch_size); ++k) {
      batch.push_back(data[order[k]]);
    }
    StepMetrics m = train_step(batch, result.state, cfg);
    result.history.push_back(m);
    if (hooks.on_step) hooks.on_step(m);
    if ((pos + 1 == spe || step + 1 == cfg.steps) && hooks.on_epoch_end) hooks.on_epoch_end(epoch, result.state, data);
  }
  result.final_eval = evaluate_model(result.state.student, data, cfg, result.state.epoch);
  return result;
}

std::string metrics_csv_header() { return "step,epoch,seg,ce,un,cls,total,miou,acc"; }

std::string metrics_csv_row(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", m.step, m.epoch, m.seg, m.ce,
                m.un, m.cls, m.total, m.miou, m.acc);
  return buf;
}

}  // namespace dmsa
