#include "dmsa/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>

#include <CLI11.hpp>

#include "dmsa/aspp.hpp"
#include "dmsa/checkpoint.hpp"
#include "dmsa/config.hpp"
#include "dmsa/metrics.hpp"
#include "dmsa/netpbm.hpp"
#include "dmsa/par.hpp"
#include "dmsa/train.hpp"

namespace dmsa {

namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::string numbered(const char* stem, std::size_t n, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%03zu%s", stem, n, ext);
  return buf;
}

int run_train(const fs::path& config_path, const fs::path& out_dir, std::ostream& out) {
  const TrainConfig cfg = load_config(config_path);
  fs::create_directories(out_dir / "masks");
  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw Error("cannot open " + (out_dir / "metrics.csv").string() + " for writing");
  csv << metrics_csv_header() << '\n';

  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) { csv << metrics_csv_row(m) << '\n'; };
  hooks.on_epoch_end = [&](std::size_t epoch, const ModelState& state, const std::vector<Sample>& data) {
    csv.flush();
    const fs::path ck = out_dir / (cfg.keep_epoch_checkpoints ? numbered("checkpoint_epoch_", epoch, ".dmsa")
                                                              : std::string("checkpoint.dmsa"));
    save_checkpoint(ck, state, cfg.encoder, cfg.classes);
    for (std::size_t i = 0; i < std::min(cfg.sample_masks, data.size()); ++i) {
      const LabelMap pred = predict_labels(state.student, data[i].image, cfg, epoch);
      const std::string name = numbered("epoch_", epoch, "") + numbered("_sample_", i, ".pgm");
      write_pgm(out_dir / "masks" / name, labels_to_pgm(pred, cfg.classes));
    }
  };
  const TrainResult result = run_training(cfg, hooks);
  if (!csv) throw Error("failed writing metrics.csv");
  write_file(out_dir / "eval.json", result.final_eval.to_json() + "\n");
  char line[160];
  std::snprintf(line, sizeof(line), "steps %zu  epochs %zu  miou %.4f  acc %.4f\n", cfg.steps, result.state.epoch,
                result.final_eval.miou, result.final_eval.acc);
  out << line;
  return 0;
}

PseudoLabelMask one_hot(const LabelMap& labels, std::size_t classes) {
  const std::size_t plane = labels.height * labels.width;
  std::vector<double> p(classes * plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    if (labels.labels[i] >= classes) throw FormatError("mask label outside the class range");
    p[labels.labels[i] * plane + i] = 1.0;
  }
  return {Tensor({classes, labels.height, labels.width}, std::move(p))};
}

int run_refine(const fs::path& image_path, const fs::path& mask_path, const fs::path& out_path,
               const std::string& probs_out, const ParParams& params) {
  const Tensor image = ppm_to_tensor(read_ppm(image_path));
  const std::string bytes = read_file(mask_path);
  const PseudoLabelMask mask = bytes.rfind("DMSA", 0) == 0 ? mask_from_bundle(decode_bundle(bytes))
                                                           : [&] {
                                                               const PgmImage pgm = parse_pgm(bytes);
                                                               return one_hot(pgm_to_labels(pgm), pgm.maxval + 1);
                                                             }();
  if (mask.height() != image.dim(1) || mask.width() != image.dim(2)) {
    throw ShapeError("refine: mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " but the image is " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)));
  }
  const PseudoLabelMask refined = par_refine(mask, image, params);
  const auto arg = refined.argmax();
  LabelMap labels{refined.height(), refined.width(), std::vector<std::uint8_t>(arg.begin(), arg.end())};
  write_pgm(out_path, labels_to_pgm(labels, refined.classes()));
  if (!probs_out.empty()) write_file(probs_out, encode_bundle(probabilities_bundle(refined)));
  return 0;
}

std::vector<std::pair<fs::path, fs::path>> pair_inputs(const fs::path& pred, const fs::path& gt) {
  const bool pd = fs::is_directory(pred), gd = fs::is_directory(gt);
  if (pd != gd) throw UsageError("eval: --pred and --gt must both be files or both be directories");
  if (!pd) return {{pred, gt}};
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& entry : fs::directory_iterator(pred)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    const fs::path match = gt / entry.path().filename();
    if (!fs::exists(match)) throw Error("eval: no ground truth for " + entry.path().filename().string());
    pairs.emplace_back(entry.path(), match);
  }
  if (pairs.empty()) throw Error("eval: no .pgm files in " + pred.string());
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

int run_eval(const fs::path& pred, const fs::path& gt, std::size_t classes, bool match, std::ostream& out) {
  std::vector<LabelMap> preds, gts;
  for (const auto& [p, g] : pair_inputs(pred, gt)) {
    preds.push_back(pgm_to_labels(read_pgm(p)));
    gts.push_back(pgm_to_labels(read_pgm(g)));
  }
  out << evaluate(preds, gts, classes, match).to_json() << '\n';
  return 0;
}

int run_schedule(const std::string& range, std::ostream& out) {
  static const std::regex pattern(R"((\d+)\.\.(\d+))");
  std::smatch m;
  if (!std::regex_match(range, m, pattern)) throw UsageError("schedule: --epochs expects A..B, got " + range);
  const std::size_t a = std::stoul(m[1]), b = std::stoul(m[2]);
  if (a == 0 || b < a) throw UsageError("schedule: epochs must satisfy 1 <= A <= B");
  const DilationSchedule schedule;
  for (std::size_t e = a; e <= b; ++e) out << e << " _" << e % 10 << ' ' << rates_str(schedule.rates(e)) << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic-dilation ViT segmentation with pixel-adaptive refinement"};
  app.require_subcommand(1);

  std::string config, out_dir;
  auto* train = app.add_subcommand("train", "Run teacher-student training");
  train->add_option("--config", config, "JSON config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory")->required();

  std::string image, mask, refined, probs_out;
  ParParams par;
  auto* refine = app.add_subcommand("refine", "Refine a mask with PAR");
  refine->add_option("--image", image, "Binary PPM image")->required()->check(CLI::ExistingFile);
  refine->add_option("--mask", mask, "PGM label mask or probability bundle")->required()->check(CLI::ExistingFile);
  refine->add_option("--out", refined, "Output PGM")->required();
  refine->add_option("--iters", par.iterations, "Refinement iterations");
  refine->add_option("--omega3", par.omega3, "Positional mixing weight");
  refine->add_option("--w1", par.w1, "Colour bandwidth scale");
  refine->add_option("--w2", par.w2, "Positional bandwidth scale");
  refine->add_option("--dilations", par.dilations, "Neighbour dilations, e.g. 1,2,4,8")->delimiter(',');
  refine->add_option("--probs-out", probs_out, "Also write refined probabilities");

  std::string pred, gt;
  std::size_t classes = 0;
  bool match = false;
  auto* eval = app.add_subcommand("eval", "Score predicted masks");
  eval->add_option("--pred", pred, "Predicted PGM or directory")->required()->check(CLI::ExistingPath);
  eval->add_option("--gt", gt, "Ground-truth PGM or directory")->required()->check(CLI::ExistingPath);
  eval->add_option("--classes", classes, "Class count")->required()->check(CLI::Range(2, 256));
  eval->add_flag("--match", match, "Hungarian-match predicted classes first");

  std::string epochs;
  auto* schedule = app.add_subcommand("schedule", "Print ASPP dilation rates per epoch");
  schedule->add_option("--epochs", epochs, "Epoch range A..B")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) return run_train(config, out_dir, out);
    if (*refine) {
      par.validate();
      return run_refine(image, mask, refined, probs_out, par);
    }
    if (*eval) return run_eval(pred, gt, classes, match, out);
    return run_schedule(epochs, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dmsa
