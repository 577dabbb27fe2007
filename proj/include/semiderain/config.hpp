#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "semiderain/toy_rain.hpp"
#include "semiderain/trainer.hpp"

namespace semiderain {

/// Everything a run needs, as one JSON document:
///   { "data":   {"paired_root", "unpaired_root"},
///     "output": {"out_dir"},
///     "train":  TrainConfig (with nested weights/model/ablations/perceptual),
///     "toy":    toy generator settings }
/// Unknown keys are rejected; omitted keys take their defaults.
struct RunConfig {
  TrainConfig train{};
  ToyDatasetOptions toy{};
  std::filesystem::path paired_root;
  std::filesystem::path unpaired_root;
  std::filesystem::path out_dir;

  bool operator==(const RunConfig& other) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
void from_json(const nlohmann::json& j, ToyDatasetOptions& o);

/// Parses a config document over `base`; `source` names it in diagnostics.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>",
                           const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

/// Applies `no-paired-disc`, `no-perceptual`, `no-tv` or `no-unsupervised`.
void apply_ablation_flag(TrainConfig& cfg, const std::string& flag);

/// Checks required keys before a training run (names the missing key).
void require_trainable(const RunConfig& cfg);

/// Defaults for the CPU toy pipeline: desk model, 64-pixel patches, 100 epochs.
TrainConfig desk_train_config();

}  // namespace semiderain
