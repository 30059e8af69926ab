#pragma once

#include <random>
#include <string>
#include <vector>

#include "dmsa/aspp.hpp"
#include "dmsa/attention.hpp"
#include "dmsa/tensor.hpp"

namespace dmsa {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 4;
  std::size_t mlp_ratio = 4;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
};

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv, qkv_bias;    // [D,3D], [3D]
  Tensor proj, proj_bias;  // [D,D], [D]
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1, fc1_bias;  // [D,rD], [rD]
  Tensor fc2, fc2_bias;  // [rD,D], [D]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1.gamma", ln1_gamma);
    f(prefix + "ln1.beta", ln1_beta);
    f(prefix + "attn.qkv", qkv);
    f(prefix + "attn.qkv_bias", qkv_bias);
    f(prefix + "attn.proj", proj);
    f(prefix + "attn.proj_bias", proj_bias);
    f(prefix + "ln2.gamma", ln2_gamma);
    f(prefix + "ln2.beta", ln2_beta);
    f(prefix + "mlp.fc1", fc1);
    f(prefix + "mlp.fc1_bias", fc1_bias);
    f(prefix + "mlp.fc2", fc2);
    f(prefix + "mlp.fc2_bias", fc2_bias);
  }
};

struct EncoderParams {
  Tensor patch_proj;  // [3*p*p, D]
  Tensor patch_bias;  // [D]
  Tensor cls_token;   // [D]
  Tensor pos_embed;   // [N+1, D]
  std::vector<BlockParams> blocks;
  Tensor norm_gamma, norm_beta;
  AsppParams aspp;  // channels = N (one per query token)

  static EncoderParams init(const EncoderConfig& cfg, std::mt19937_64& rng);
  void validate(const EncoderConfig& cfg) const;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "patch_proj", patch_proj);
    f(prefix + "patch_bias", patch_bias);
    f(prefix + "cls_token", cls_token);
    f(prefix + "pos_embed", pos_embed);
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].visit(prefix + "block" + std::to_string(b) + ".", f);
    f(prefix + "norm.gamma", norm_gamma);
    f(prefix + "norm.beta", norm_beta);
    aspp.visit(prefix + "aspp.", f);
  }
};

struct EncoderOptions {
  bool aspp_on = true;
  /// Add ASPP output to the attention weights instead of replacing them.
  bool aspp_residual = false;
  DilationSchedule schedule;
};

struct EncoderOutput {
  Tensor tokens;           // [N+1, D], final layer norm applied
  AttentionMap last_attn;  // [h, N+1, N+1]
};

/// Flattened patches [N, 3*p*p] in row-major patch order; each patch is
/// flattened channel-major, then row, then column.
Tensor extract_patches(const Tensor& image, const EncoderConfig& cfg);

/// Linear patch embedding with a prepended class token and learned
/// positional embeddings: [N+1, D].
Tensor patchify(const Tensor& image, const EncoderConfig& cfg, const EncoderParams& params);

/// Pre-norm transformer. The last block's per-head attention weights go
/// through attention_aspp_inject (rates for `epoch`) before they are applied
/// to V, unless options.aspp_on is false.
EncoderOutput encoder_forward(const Tensor& image, const EncoderConfig& cfg, const EncoderParams& params,
                              std::size_t epoch, const EncoderOptions& options = {});

}  // namespace dmsa
