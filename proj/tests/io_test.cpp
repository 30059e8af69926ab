#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dmsa/checkpoint.hpp"
#include "dmsa/config.hpp"
#include "dmsa/netpbm.hpp"

using namespace dmsa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dmsa_io_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.encoder = {16, 4, 8, 2, 1, 2};
  cfg.dataset = {8, 16, 16, 3};
  cfg.classes = 3;
  return cfg;
}

template <class Fn>
std::string error_message(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Netpbm, PpmRoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  PpmImage img{5, 3, std::vector<std::uint8_t>(45)};
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng());
  const std::string bytes = encode_ppm(img);
  EXPECT_EQ(bytes.substr(0, 11), "P6\n5 3\n255\n");
  const PpmImage back = parse_ppm(bytes);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.rgb, img.rgb);
  EXPECT_EQ(encode_ppm(back), bytes);
  EXPECT_EQ(tensor_to_ppm(ppm_to_tensor(img)).rgb, img.rgb);
}

TEST(Netpbm, PgmRoundTripIsBitExact) {
  const LabelMap labels{2, 3, {0, 1, 2, 2, 1, 0}};
  const PgmImage pgm = labels_to_pgm(labels, 3);
  EXPECT_EQ(pgm.maxval, 2u);
  const std::string bytes = encode_pgm(pgm);
  EXPECT_EQ(bytes.substr(0, 9), "P5\n3 2\n2\n");
  EXPECT_EQ(pgm_to_labels(parse_pgm(bytes)), labels);
  EXPECT_EQ(encode_pgm(parse_pgm(bytes)), bytes);

  const fs::path dir = temp_dir("pgm");
  write_pgm(dir / "m.pgm", pgm);
  EXPECT_EQ(read_file(dir / "m.pgm"), bytes);
  fs::remove_all(dir);
}

TEST(Netpbm, HeaderCommentsAreSkipped) {
  const PgmImage p = parse_pgm(std::string("P5\n# made by hand\n2 1\n1\n") + '\x01' + '\x00');
  EXPECT_EQ(p.pixels, (std::vector<std::uint8_t>{1, 0}));
}

TEST(Netpbm, RejectsMalformedFiles) {
  EXPECT_THROW(parse_ppm("P3\n1 1\n255\n0 0 0"), FormatError);
  EXPECT_THROW(parse_ppm("P6\n2 2\n255\nabc"), FormatError);
  EXPECT_THROW(parse_ppm("P6\n1 1\n65535\n......"), FormatError);
  EXPECT_THROW(parse_pgm("P5\n2 1\n1\n\x01"), FormatError);
  EXPECT_THROW(parse_pgm(std::string("P5\n2 1\n1\n") + '\x02' + '\x00'), FormatError);
  EXPECT_THROW(parse_pgm("P5\n0 1\n1\n"), FormatError);
  EXPECT_THROW(parse_pgm("P"), FormatError);
  EXPECT_THROW(labels_to_pgm(LabelMap{1, 1, {4}}, 3), FormatError);
}

TEST(Bundle, RoundTrip) {
  TensorBundle b;
  b.kind = "probabilities";
  b.meta = {{"note", "x"}};
  b.tensors.emplace_back("a", Tensor({2, 2}, {1.5, -2.25, 1e-300, 7}));
  b.tensors.emplace_back("b", Tensor({3}, {0.1, 0.2, 0.3}));
  const std::string bytes = encode_bundle(b);
  EXPECT_EQ(bytes.substr(0, 4), "DMSA");
  const TensorBundle back = decode_bundle(bytes);
  EXPECT_EQ(back.kind, b.kind);
  EXPECT_EQ(back.meta, b.meta);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].first, b.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), b.tensors[i].second.shape());
    for (std::size_t k = 0; k < b.tensors[i].second.size(); ++k)
      EXPECT_EQ(back.tensors[i].second[k], b.tensors[i].second[k]);
  }
  EXPECT_EQ(encode_bundle(back), bytes);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const TrainConfig cfg = tiny_config();
  ModelState st = init_state(cfg);
  st.step = 17;
  st.epoch = 3;
  const fs::path dir = temp_dir("ckpt");
  save_checkpoint(dir / "a.dmsa", st, cfg.encoder, cfg.classes);
  const Checkpoint ck = load_checkpoint(dir / "a.dmsa");
  EXPECT_EQ(ck.state.step, 17u);
  EXPECT_EQ(ck.state.epoch, 3u);
  EXPECT_EQ(ck.classes, 3u);
  EXPECT_EQ(ck.encoder.embed_dim, 8u);
  save_checkpoint(dir / "b.dmsa", ck.state, ck.encoder, ck.classes);
  EXPECT_EQ(read_file(dir / "a.dmsa"), read_file(dir / "b.dmsa"));
  const auto orig = st.teacher.flatten(), loaded = ck.state.teacher.flatten();
  ASSERT_EQ(orig.size(), loaded.size());
  for (std::size_t i = 0; i < orig.size(); ++i)
    for (std::size_t k = 0; k < orig[i].second.size(); ++k) ASSERT_EQ(orig[i].second[k], loaded[i].second[k]);
  fs::remove_all(dir);
}

TEST(Checkpoint, DetectsCorruption) {
  const TrainConfig cfg = tiny_config();
  const std::string good = encode_bundle(checkpoint_bundle(init_state(cfg), cfg.encoder, cfg.classes));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_NE(error_message([&] { decode_bundle(bad_magic); }).find("magic"), std::string::npos);

  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_NE(error_message([&] { decode_bundle(bad_version); }).find("version"), std::string::npos);

  EXPECT_NE(error_message([&] { decode_bundle(good.substr(0, good.size() - 8)); }).find("truncated"),
            std::string::npos);
  EXPECT_THROW(decode_bundle(good.substr(0, 10)), FormatError);
  EXPECT_THROW(decode_bundle(good + "x"), FormatError);

  std::string flipped = good;
  flipped[flipped.size() - 3] ^= 0x10;
  EXPECT_NE(error_message([&] { decode_bundle(flipped); }).find("checksum"), std::string::npos);
}

TEST(Checkpoint, ShapeMismatchNamesTheTensor) {
  const TrainConfig cfg = tiny_config();
  TensorBundle b = checkpoint_bundle(init_state(cfg), cfg.encoder, cfg.classes);
  for (auto& [name, t] : b.tensors)
    if (name == "teacher.encoder.pos_embed") t = Tensor::zeros({5, 8});
  const TensorBundle reread = decode_bundle(encode_bundle(b));
  const std::string msg = error_message([&] { checkpoint_from_bundle(reread); });
  EXPECT_NE(msg.find("teacher.encoder.pos_embed"), std::string::npos) << msg;
  EXPECT_THROW(checkpoint_from_bundle(reread), ShapeError);

  TensorBundle missing = checkpoint_bundle(init_state(cfg), cfg.encoder, cfg.classes);
  missing.tensors.pop_back();
  EXPECT_THROW(checkpoint_from_bundle(missing), FormatError);
}

TEST(Checkpoint, ProbabilityBundles) {
  const PseudoLabelMask m{Tensor({2, 1, 2}, {0.25, 1.0, 0.75, 0.0})};
  const PseudoLabelMask back = mask_from_bundle(decode_bundle(encode_bundle(probabilities_bundle(m))));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.probs[i], m.probs[i]);
  EXPECT_THROW(mask_from_bundle(probabilities_bundle(PseudoLabelMask{Tensor({2, 1, 1}, {0.5, 0.2})})), FormatError);
}

TEST(Config, RoundTripsThroughJson) {
  TrainConfig cfg = tiny_config();
  cfg.par.dilations = {1, 3};
  cfg.loss_weights.un = 0.5;
  cfg.toggles.par = false;
  cfg.grad_clip = 0.0;
  const TrainConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  EXPECT_EQ(back.par.dilations, cfg.par.dilations);
  EXPECT_FALSE(back.toggles.par);
}

TEST(Config, RejectsUnknownKeys) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"learning_rat": 0.1})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"par": {"omega": 1}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"toggles": {"crf": true}})")), ConfigError);
  const std::string msg = error_message([] { config_from_json(nlohmann::json::parse(R"({"encoder": {"depth": 2}})")); });
  EXPECT_NE(msg.find("depth"), std::string::npos);
}

TEST(Config, RejectsInvalidValues) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"ema_momentum": 1.0})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"learning_rate": "fast"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"dataset": {"height": 16}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"par": {"iterations": 0}})")), Error);
  EXPECT_NO_THROW(config_from_json(nlohmann::json::object()));
}
