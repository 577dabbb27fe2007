// Command-line front end: gen-toy, train, derain, evaluate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semiderain/config.hpp"
#include "semiderain/data.hpp"
#include "semiderain/error.hpp"
#include "semiderain/image.hpp"
#include "semiderain/inference.hpp"
#include "semiderain/metrics.hpp"
#include "semiderain/toy_rain.hpp"
#include "semiderain/trainer.hpp"

namespace fs = std::filesystem;
using namespace semiderain;

namespace {

struct GenToyArgs {
  std::string out;
  std::string config;
  int64_t count = 8;
  int64_t real_count = 4;
  int64_t size = 64;
  uint64_t seed = 0;
  bool domain_gap = false;
};

int cmd_gen_toy(const GenToyArgs& args, const CLI::App& app) {
  ToyDatasetOptions options;
  if (!args.config.empty()) options = load_run_config(args.config).toy;
  // Explicit flags win over the config file.
  if (app.count("--count") || args.config.empty()) options.count = args.count;
  if (app.count("--real-count") || args.config.empty()) options.real_count = args.real_count;
  if (app.count("--size") || args.config.empty()) options.size = args.size;
  if (app.count("--seed") || args.config.empty()) options.seed = args.seed;
  if (app.count("--domain-gap")) options.domain_gap = true;
  options.out_dir = args.out;
  write_toy_dataset(options);
  std::cout << "wrote " << options.count << " paired";
  if (options.domain_gap) std::cout << " + " << options.real_count << " pseudo-real";
  std::cout << " toy images to " << options.out_dir.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string preset = "full";
  std::string paired_root;
  std::string unpaired_root;
  std::string manifest;
  std::string out;
  std::vector<std::string> ablations;
  int64_t epochs = 0;
};

int cmd_train(const TrainArgs& args) {
  RunConfig base;
  if (args.preset == "desk") {
    base.train = desk_train_config();
  } else if (args.preset != "full") {
    throw ConfigError("unknown preset '" + args.preset + "' (full | desk)");
  }
  RunConfig cfg = args.config.empty() ? base : load_run_config(args.config, base);
  if (!args.manifest.empty()) {
    const auto m = read_manifest(args.manifest);
    cfg.paired_root = m.paired_root;
    cfg.unpaired_root = m.unpaired_root;
    cfg.train.seed = m.seed;
  }
  if (!args.paired_root.empty()) cfg.paired_root = args.paired_root;
  if (!args.unpaired_root.empty()) cfg.unpaired_root = args.unpaired_root;
  if (!args.out.empty()) cfg.out_dir = args.out;
  for (const auto& a : args.ablations) apply_ablation_flag(cfg.train, a);
  if (args.epochs > 0) {
    cfg.train.epochs = args.epochs;
    cfg.train.decay_start_epoch = std::min(cfg.train.decay_start_epoch, args.epochs);
  }
  require_trainable(cfg);

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream echo(cfg.out_dir / "effective_config.json", std::ios::trunc);
    echo << nlohmann::json(cfg).dump(2) << "\n";
  }
  const auto unpaired = cfg.train.ablations.use_unsupervised ? cfg.unpaired_root : fs::path{};
  auto result = train(cfg.train, cfg.paired_root, unpaired, cfg.out_dir);
  std::cout << "trained " << result.history.size() << " steps";
  if (!result.history.empty()) std::cout << ", final total loss " << result.history.back().total;
  std::cout << "\ncheckpoint: " << result.final_checkpoint.string() << "\n";
  return 0;
}

struct DerainArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string path = "synthetic";
};

int cmd_derain(const DerainArgs& args) {
  const auto which = args.path == "real" ? Derainer::Path::Real : Derainer::Path::Synthetic;
  if (args.path != "real" && args.path != "synthetic") throw ConfigError("--path must be synthetic or real");
  const auto derainer = Derainer::from_checkpoint(args.checkpoint, which);
  fs::create_directories(args.output);
  int failures = 0;
  int written = 0;
  for (const auto& file : list_images(args.input)) {
    try {
      const auto image = load_image(file);
      auto out = fs::path(args.output) / file.filename();
      out.replace_extension(".png");
      save_png(derainer.derain(image.data()), out);
      ++written;
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "error: " << file.string() << ": " << e.what() << "\n";
    }
  }
  std::cout << "derained " << written << " image(s)";
  if (failures) std::cout << ", " << failures << " failed";
  std::cout << "\n";
  return failures == 0 ? 0 : 1;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string test_root;
  std::string report;
  std::string csv;
  bool baseline = false;
  bool luminance = false;
};

int cmd_evaluate(const EvaluateArgs& args) {
  EvalOptions opts;
  opts.ssim.luminance_only = args.luminance;
  const auto report = evaluate_dataset(fs::path(args.checkpoint), args.test_root, opts);
  write_report_json(report, args.report);
  if (!args.csv.empty()) write_report_csv(report, args.csv);
  if (args.baseline) {
    const auto base = input_baseline(args.test_root, opts);
    std::cout << format_table_row("Input", base) << "\n";
    auto base_path = fs::path(args.report);
    base_path.replace_filename(base_path.stem().string() + "_input" + base_path.extension().string());
    write_report_json(base, base_path);
  }
  std::cout << format_table_row("Model", report) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised single-image deraining: toy data, training, inference, evaluation"};
  app.require_subcommand(1);

  GenToyArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Generate a procedural rainy/clean dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.config, "Run config whose 'toy' section sets streak statistics");
  gen_cmd->add_option("--count", gen.count, "Number of paired images");
  gen_cmd->add_option("--real-count", gen.real_count, "Number of pseudo-real images (with --domain-gap)");
  gen_cmd->add_option("--size", gen.size, "Image side in pixels");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_flag("--domain-gap", gen.domain_gap, "Also write a pseudo-real set with shifted streak angles");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the model");
  train_cmd->add_option("--config", tr.config, "Run config (JSON)");
  train_cmd->add_option("--preset", tr.preset, "Defaults before the config file: full | desk");
  train_cmd->add_option("--paired-root", tr.paired_root, "Directory with rain/ and clean/");
  train_cmd->add_option("--unpaired-root", tr.unpaired_root, "Directory of real rainy images");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest with paired_root, unpaired_root, seed");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_option("--ablation", tr.ablations, "no-paired-disc | no-perceptual | no-tv | no-unsupervised");
  train_cmd->add_option("--epochs", tr.epochs, "Override train.epochs");

  DerainArgs dr;
  auto* derain_cmd = app.add_subcommand("derain", "Derain every image of a directory");
  derain_cmd->add_option("--checkpoint", dr.checkpoint, "Checkpoint file")->required();
  derain_cmd->add_option("--input", dr.input, "Input directory")->required();
  derain_cmd->add_option("--output", dr.output, "Output directory")->required();
  derain_cmd->add_option("--path", dr.path, "Generator to use: synthetic (G_s) | real (G_r)");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "PSNR/SSIM of a checkpoint on a paired test set");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--test-root", ev.test_root, "Directory with rain/ and clean/")->required();
  eval_cmd->add_option("--report", ev.report, "Report JSON path")->required();
  eval_cmd->add_option("--csv", ev.csv, "Also write a CSV report");
  eval_cmd->add_flag("--baseline", ev.baseline, "Also score the rainy inputs themselves");
  eval_cmd->add_flag("--luminance", ev.luminance, "SSIM on luma instead of RGB average");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return cmd_gen_toy(gen, *gen_cmd);
    if (*train_cmd) return cmd_train(tr);
    if (*derain_cmd) return cmd_derain(dr);
    if (*eval_cmd) return cmd_evaluate(ev);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
