#include "semiderain/config.hpp"

#include <fstream>
#include <sstream>

#include "semiderain/error.hpp"

namespace fs = std::filesystem;

namespace semiderain {

bool RunConfig::operator==(const RunConfig& other) const {
  return nlohmann::json(*this) == nlohmann::json(other);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json toy = c.toy;
  j = nlohmann::json{{"data", {{"paired_root", c.paired_root.string()}, {"unpaired_root", c.unpaired_root.string()}}},
                     {"output", {{"out_dir", c.out_dir.string()}}},
                     {"train", c.train},
                     {"toy", toy}};
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const auto* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError((section.empty() ? "" : section + ": ") + "unknown key '" + key + "'");
  }
}

}  // namespace

void from_json(const nlohmann::json& j, ToyDatasetOptions& o) {
  reject_unknown(j, {"count", "real_count", "size", "seed", "domain_gap", "synthetic", "real"}, "toy");
  o.count = j.value("count", o.count);
  o.real_count = j.value("real_count", o.real_count);
  o.size = j.value("size", o.size);
  o.seed = j.value("seed", o.seed);
  o.domain_gap = j.value("domain_gap", o.domain_gap);
  if (j.contains("synthetic")) from_json(j.at("synthetic"), o.synthetic);
  if (j.contains("real")) from_json(j.at("real"), o.real);
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  reject_unknown(j, {"data", "output", "train", "toy"}, "");
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, {"paired_root", "unpaired_root"}, "data");
      c.paired_root = d.value("paired_root", c.paired_root.string());
      c.unpaired_root = d.value("unpaired_root", c.unpaired_root.string());
    }
    if (j.contains("output")) {
      const auto& o = j.at("output");
      reject_unknown(o, {"out_dir"}, "output");
      c.out_dir = o.value("out_dir", c.out_dir.string());
    }
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("toy")) from_json(j.at("toy"), c.toy);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source, const RunConfig& base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  RunConfig cfg = base;
  try {
    from_json(j, cfg);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string(), base);
}

void apply_ablation_flag(TrainConfig& cfg, const std::string& flag) {
  if (flag == "no-paired-disc") {
    cfg.ablations.use_paired_disc = false;
  } else if (flag == "no-perceptual") {
    cfg.ablations.use_perceptual = false;
  } else if (flag == "no-tv") {
    cfg.ablations.use_tv = false;
  } else if (flag == "no-unsupervised") {
    cfg.ablations.use_unsupervised = false;
  } else {
    throw ConfigError("unknown ablation '" + flag + "' (no-paired-disc | no-perceptual | no-tv | no-unsupervised)");
  }
}

void require_trainable(const RunConfig& cfg) {
  if (cfg.paired_root.empty()) throw ConfigError("missing required key 'data.paired_root'");
  if (cfg.train.ablations.use_unsupervised && cfg.unpaired_root.empty()) {
    throw ConfigError("missing required key 'data.unpaired_root' (or disable ablations.use_unsupervised)");
  }
  if (cfg.out_dir.empty()) throw ConfigError("missing required key 'output.out_dir'");
  cfg.train.validate();
}

TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.model = ModelConfig::desk();
  cfg.epochs = 100;
  cfg.decay_start_epoch = 50;
  cfg.patch = 64;
  cfg.stride = 64;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 50;
  // A 200-step run needs a faster supervised rate than a full 200-epoch schedule.
  cfg.lr_super = 2e-3;
  return cfg;
}

}  // namespace semiderain
