#include "dmsa/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include <zlib.h>

#include "dmsa/netpbm.hpp"

namespace dmsa {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'S', 'A'};
constexpr const char* kGroups[3] = {"student.", "teacher.", "momentum."};

template <class T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const char* p) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

std::uint32_t checksum(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t len = std::min(kChunk, bytes.size() - off);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(len));
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json encoder_json(const EncoderConfig& e) {
  return {{"image_size", e.image_size}, {"patch_size", e.patch_size}, {"embed_dim", e.embed_dim},
          {"num_heads", e.num_heads},   {"num_blocks", e.num_blocks}, {"mlp_ratio", e.mlp_ratio}};
}

EncoderConfig encoder_from_json(const nlohmann::json& j) {
  EncoderConfig e;
  try {
    e.image_size = j.at("image_size").get<std::size_t>();
    e.patch_size = j.at("patch_size").get<std::size_t>();
    e.embed_dim = j.at("embed_dim").get<std::size_t>();
    e.num_heads = j.at("num_heads").get<std::size_t>();
    e.num_blocks = j.at("num_blocks").get<std::size_t>();
    e.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("checkpoint: bad encoder record: ") + ex.what());
  }
  e.validate();
  return e;
}

std::size_t meta_size(const nlohmann::json& meta, const char* key) {
  if (!meta.contains(key) || !meta.at(key).is_number_unsigned()) {
    throw FormatError(std::string("checkpoint: header is missing unsigned field \"") + key + "\"");
  }
  return meta.at(key).get<std::size_t>();
}

}  // namespace

const Tensor& TensorBundle::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("bundle: no tensor named " + name);
}

std::string encode_bundle(const TensorBundle& bundle) {
  std::string payload;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : bundle.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}});
    for (double v : t.data()) put_le(payload, v);
  }
  nlohmann::json header = {{"kind", bundle.kind},
                           {"meta", bundle.meta},
                           {"tensors", entries},
                           {"payload_bytes", payload.size()},
                           {"crc32", checksum(payload)}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kBundleVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

TensorBundle decode_bundle(std::string_view bytes) {
  constexpr std::size_t kPreamble = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < kPreamble) throw FormatError("bundle: truncated preamble");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bundle: bad magic bytes");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kBundleVersion) {
    throw FormatError("bundle: format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kBundleVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - kPreamble) throw FormatError("bundle: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPreamble, header_len));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("bundle: unreadable header: ") + ex.what());
  }
  const std::string_view payload = bytes.substr(kPreamble + header_len);

  TensorBundle out;
  std::size_t declared = 0;
  std::uint32_t crc = 0;
  std::vector<std::pair<std::string, Shape>> entries;
  try {
    out.kind = header.at("kind").get<std::string>();
    out.meta = header.at("meta");
    declared = header.at("payload_bytes").get<std::size_t>();
    crc = header.at("crc32").get<std::uint32_t>();
    for (const auto& e : header.at("tensors")) {
      entries.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("bundle: malformed header: ") + ex.what());
  }
  if (payload.size() < declared) {
    throw FormatError("bundle: truncated payload (" + std::to_string(payload.size()) + " of " +
                      std::to_string(declared) + " bytes)");
  }
  if (payload.size() > declared) throw FormatError("bundle: trailing bytes after payload");
  if (checksum(payload) != crc) throw FormatError("bundle: payload checksum mismatch");

  std::size_t offset = 0;
  for (auto& [name, shape] : entries) {
    if (shape.empty() || shape_numel(shape) == 0) throw FormatError("bundle: tensor " + name + " has an empty shape");
    const std::size_t n = shape_numel(shape);
    if (n * 8 > declared - offset) throw FormatError("bundle: tensor " + name + " runs past the payload");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get_le<double>(payload.data() + offset + 8 * i);
    offset += 8 * n;
    check_finite(v, "bundle tensor");
    out.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(v)));
  }
  if (offset != declared) throw FormatError("bundle: payload size disagrees with the tensor table");
  return out;
}

TensorBundle checkpoint_bundle(const ModelState& state, const EncoderConfig& encoder, std::size_t classes) {
  TensorBundle b;
  b.kind = "checkpoint";
  b.meta = {{"encoder", encoder_json(encoder)}, {"classes", classes}, {"step", state.step}, {"epoch", state.epoch}};
  const ModelParams* groups[3] = {&state.student, &state.teacher, &state.momentum};
  for (std::size_t g = 0; g < 3; ++g)
    for (auto& [name, t] : groups[g]->flatten()) b.tensors.emplace_back(kGroups[g] + name, t.detach());
  return b;
}

Checkpoint checkpoint_from_bundle(const TensorBundle& bundle) {
  if (bundle.kind != "checkpoint") throw FormatError("checkpoint: bundle holds \"" + bundle.kind + "\"");
  Checkpoint ck;
  if (!bundle.meta.contains("encoder")) throw FormatError("checkpoint: header has no encoder record");
  ck.encoder = encoder_from_json(bundle.meta.at("encoder"));
  ck.classes = meta_size(bundle.meta, "classes");
  if (ck.classes < 2) throw FormatError("checkpoint: class count must be at least 2");
  ck.state.step = meta_size(bundle.meta, "step");
  ck.state.epoch = meta_size(bundle.meta, "epoch");

  std::mt19937_64 rng(0);
  const ModelParams layout = ModelParams::init(ck.encoder, ck.classes, rng);
  ModelParams* groups[3] = {&ck.state.student, &ck.state.teacher, &ck.state.momentum};
  std::size_t expected = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    *groups[g] = layout;
    groups[g]->visit([&](const std::string& name, Tensor& t) {
      const std::string full = kGroups[g] + name;
      const Tensor& stored = bundle.get(full);
      if (stored.shape() != t.shape()) {
        throw ShapeError("checkpoint: tensor " + full + " is stored as " + shape_str(stored.shape()) +
                         " but the encoder layout needs " + shape_str(t.shape()));
      }
      t = stored;
      ++expected;
    });
  }
  if (expected != bundle.tensors.size()) {
    throw FormatError("checkpoint: " + std::to_string(bundle.tensors.size() - expected) + " unexpected tensors");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const EncoderConfig& encoder,
                     std::size_t classes) {
  write_file(path, encode_bundle(checkpoint_bundle(state, encoder, classes)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bundle(decode_bundle(read_file(path)));
}

TensorBundle probabilities_bundle(const PseudoLabelMask& mask) {
  TensorBundle b;
  b.kind = "probabilities";
  b.tensors.emplace_back("probs", mask.probs.detach());
  return b;
}

PseudoLabelMask mask_from_bundle(const TensorBundle& bundle) {
  if (bundle.kind != "probabilities") throw FormatError("probabilities: bundle holds \"" + bundle.kind + "\"");
  const Tensor& p = bundle.get("probs");
  if (p.rank() != 3) throw ShapeError("probabilities: expected [C,H,W], got " + shape_str(p.shape()));
  PseudoLabelMask m{p};
  if (m.max_simplex_error() > 1e-6) throw FormatError("probabilities: pixels do not sum to one");
  return m;
}

}  // namespace dmsa
