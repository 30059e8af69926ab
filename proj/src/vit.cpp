#include "dmsa/vit.hpp"

#include <cmath>

#include "dmsa/ops.hpp"

namespace dmsa {

namespace {

Tensor normal(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Xavier-normal for a [fan_in, fan_out] matrix.
Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return normal({fan_in, fan_out}, rng, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ShapeError("encoder parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                     shape_str(shape));
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ShapeError("encoder: image size " + std::to_string(image_size) + " is not divisible by patch size " +
                     std::to_string(patch_size));
  }
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ShapeError("encoder: embed dim " + std::to_string(embed_dim) + " is not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  if (num_blocks == 0 || mlp_ratio == 0) throw ShapeError("encoder: need at least one block and mlp_ratio >= 1");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, hidden = cfg.mlp_ratio * d, n = cfg.num_patches();
  EncoderParams p;
  p.patch_proj = xavier(cfg.patch_dim(), d, rng);
  p.patch_bias = Tensor::zeros({d});
  p.cls_token = normal({d}, rng, 0.02);
  p.pos_embed = normal({n + 1, d}, rng, 0.02);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    BlockParams blk;
    blk.ln1_gamma = Tensor::full({d}, 1.0);
    blk.ln1_beta = Tensor::zeros({d});
    blk.qkv = xavier(d, 3 * d, rng);
    blk.qkv_bias = Tensor::zeros({3 * d});
    blk.proj = xavier(d, d, rng);
    blk.proj_bias = Tensor::zeros({d});
    blk.ln2_gamma = Tensor::full({d}, 1.0);
    blk.ln2_beta = Tensor::zeros({d});
    blk.fc1 = xavier(d, hidden, rng);
    blk.fc1_bias = Tensor::zeros({hidden});
    blk.fc2 = xavier(hidden, d, rng);
    blk.fc2_bias = Tensor::zeros({d});
    p.blocks.push_back(std::move(blk));
  }
  p.norm_gamma = Tensor::full({d}, 1.0);
  p.norm_beta = Tensor::zeros({d});
  p.aspp = AsppParams::random(n, rng, 0.02);
  return p;
}

void EncoderParams::validate(const EncoderConfig& cfg) const {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, hidden = cfg.mlp_ratio * d, n = cfg.num_patches();
  expect_shape(patch_proj, {cfg.patch_dim(), d}, "patch_proj");
  expect_shape(patch_bias, {d}, "patch_bias");
  expect_shape(cls_token, {d}, "cls_token");
  expect_shape(pos_embed, {n + 1, d}, "pos_embed");
  if (blocks.size() != cfg.num_blocks) {
    throw ShapeError("encoder has " + std::to_string(blocks.size()) + " blocks, config expects " +
                     std::to_string(cfg.num_blocks));
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    expect_shape(blk.qkv, {d, 3 * d}, pre + "attn.qkv");
    expect_shape(blk.qkv_bias, {3 * d}, pre + "attn.qkv_bias");
    expect_shape(blk.proj, {d, d}, pre + "attn.proj");
    expect_shape(blk.fc1, {d, hidden}, pre + "mlp.fc1");
    expect_shape(blk.fc2, {hidden, d}, pre + "mlp.fc2");
  }
  if (aspp.channels() != n) {
    throw ShapeError("encoder ASPP has " + std::to_string(aspp.channels()) + " channels, expected N=" +
                     std::to_string(n));
  }
}

Tensor extract_patches(const Tensor& image, const EncoderConfig& cfg) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("patchify: image must be [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) != cfg.image_size || image.dim(2) != cfg.image_size) {
    throw ShapeError("patchify: image is " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     ", encoder expects " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const std::size_t p = cfg.patch_size, g = cfg.grid(), s = cfg.image_size;
  std::vector<double> out(cfg.num_patches() * cfg.patch_dim());
  std::size_t idx = 0;
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) out[idx++] = image[(c * s + py * p + y) * s + px * p + x];
  return Tensor({cfg.num_patches(), cfg.patch_dim()}, std::move(out));
}

Tensor patchify(const Tensor& image, const EncoderConfig& cfg, const EncoderParams& params) {
  Tensor patches = extract_patches(image, cfg);
  Tensor embedded = ops::add_row_vector(ops::matmul(patches, params.patch_proj), params.patch_bias);
  Tensor cls = ops::reshape(params.cls_token, {1, cfg.embed_dim});
  return ops::add(ops::concat({cls, embedded}, 0), params.pos_embed);
}

EncoderOutput encoder_forward(const Tensor& image, const EncoderConfig& cfg, const EncoderParams& params,
                              std::size_t epoch, const EncoderOptions& options) {
  params.validate(cfg);
  const std::size_t d = cfg.embed_dim, dk = cfg.head_dim(), t = cfg.num_patches() + 1;
  Tensor x = patchify(image, cfg, params);
  Tensor last_weights;

  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& blk = params.blocks[b];
    const bool last = b + 1 == params.blocks.size();

    Tensor h = ops::layer_norm(x, blk.ln1_gamma, blk.ln1_beta);
    Tensor qkv = ops::add_row_vector(ops::matmul(h, blk.qkv), blk.qkv_bias);
    std::vector<Tensor> head_out;
    std::vector<Tensor> head_weights;
    for (std::size_t hd = 0; hd < cfg.num_heads; ++hd) {
      Tensor q = ops::slice(qkv, 1, hd * dk, dk);
      Tensor k = ops::slice(qkv, 1, d + hd * dk, dk);
      Tensor v = ops::slice(qkv, 1, 2 * d + hd * dk, dk);
      Tensor w = attention_weights(q, k);
      if (last && options.aspp_on) {
        w = inject_attention_head(w, options.schedule.rates(epoch), params.aspp, options.aspp_residual);
      }
      head_out.push_back(ops::matmul(w, v));
      if (last) head_weights.push_back(ops::reshape(w, {1, t, t}));
    }
    Tensor attn = ops::add_row_vector(ops::matmul(ops::concat(head_out, 1), blk.proj), blk.proj_bias);
    x = ops::add(x, attn);

    Tensor h2 = ops::layer_norm(x, blk.ln2_gamma, blk.ln2_beta);
    Tensor mlp = ops::add_row_vector(ops::matmul(ops::gelu(ops::add_row_vector(ops::matmul(h2, blk.fc1), blk.fc1_bias)),
                                                 blk.fc2),
                                     blk.fc2_bias);
    x = ops::add(x, mlp);
    if (last) last_weights = ops::concat(head_weights, 0);
  }
  return {ops::layer_norm(x, params.norm_gamma, params.norm_beta), AttentionMap{last_weights}};
}

}  // namespace dmsa
