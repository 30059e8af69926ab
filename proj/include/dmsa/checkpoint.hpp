#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmsa/decoder.hpp"
#include "dmsa/train.hpp"

namespace dmsa {

inline constexpr std::uint32_t kBundleVersion = 1;

/// Named tensors plus free-form metadata. On disk:
///   "DMSA" | u32 version | u64 header length | JSON header | f64 payload
/// with all integers and reals little-endian and tensors in header order.
struct TensorBundle {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
};

std::string encode_bundle(const TensorBundle& bundle);
/// FormatError on bad magic, version, checksum or truncation.
TensorBundle decode_bundle(std::string_view bytes);

/// Student, teacher and momentum groups with counters and the encoder layout.
TensorBundle checkpoint_bundle(const ModelState& state, const EncoderConfig& encoder, std::size_t classes);

struct Checkpoint {
  EncoderConfig encoder;
  std::size_t classes = 0;
  ModelState state;
};

/// ShapeError naming the tensor when a stored shape disagrees with the
/// layout implied by the stored encoder config.
Checkpoint checkpoint_from_bundle(const TensorBundle& bundle);

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const EncoderConfig& encoder,
                     std::size_t classes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Soft masks for `refine --probs-out` and as refine input.
TensorBundle probabilities_bundle(const PseudoLabelMask& mask);
PseudoLabelMask mask_from_bundle(const TensorBundle& bundle);

}  // namespace dmsa
