#include "semiderain/checkpoint.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "semiderain/error.hpp"

namespace fs = std::filesystem;

namespace semiderain {

namespace {

constexpr const char* kMetaKey = "meta";
constexpr const char* kRngKey = "rng_torch";

// Archive keys may not contain '.', so module paths use "__".
std::string param_key(const std::string& module, const std::string& name) {
  std::string key = "param__" + module + "__" + name;
  std::string out;
  for (char c : key) {
    if (c == '.') {
      out += "__";
    } else {
      out += c;
    }
  }
  return out;
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("corrupt checkpoint archive '" + path.string() + "': " + e.what_without_backtrace());
  } catch (const std::exception& e) {
    throw CheckpointError("corrupt checkpoint archive '" + path.string() + "': " + e.what());
  }
  return archive;
}

nlohmann::json read_meta(torch::serialize::InputArchive& archive, const fs::path& path) {
  c10::IValue value;
  if (!archive.try_read(kMetaKey, value) || !value.isString()) {
    throw CheckpointError("corrupt checkpoint archive '" + path.string() + "': no meta record");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(value.toStringRef());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint meta in '" + path.string() + "': " + e.what());
  }
  const int version = meta.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint '" + path.string() + "' has format version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointFormatVersion));
  }
  return meta;
}

void write_meta(torch::serialize::OutputArchive& archive, const nlohmann::json& meta) {
  archive.write(kMetaKey, c10::IValue(meta.dump()));
}

}  // namespace

void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const fs::path& path) {
  torch::serialize::OutputArchive archive;
  write_meta(archive, {{"format_version", kCheckpointFormatVersion},
                       {"kind", "train_state"},
                       {"config", cfg},
                       {"epoch", state.epoch},
                       {"global_step", state.global_step},
                       {"loader_state", state.loader_state}});
  for (const auto& [module_name, module] : state.nets.modules()) {
    for (const auto& p : module->named_parameters()) {
      archive.write(param_key(module_name, p.key()), p.value().detach(), /*is_buffer=*/true);
    }
  }
  for (const auto& [name, opt] : state.optimizers()) {
    torch::serialize::OutputArchive sub;
    opt->save(sub);
    archive.write(name, sub);
  }
  archive.write(kRngKey, at::detail::getDefaultCPUGenerator().get_state(), /*is_buffer=*/true);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot write checkpoint '" + path.string() + "': " + e.what_without_backtrace());
  }
}

void load_checkpoint_into(TrainState& state, const fs::path& path) {
  auto archive = open_archive(path);
  const auto meta = read_meta(archive, path);
  if (meta.value("kind", "") != "train_state") {
    throw CheckpointError("checkpoint '" + path.string() + "' is not a training checkpoint");
  }

  // Validate everything before mutating anything.
  std::vector<std::pair<torch::Tensor, torch::Tensor>> copies;
  for (const auto& [module_name, module] : state.nets.modules()) {
    for (const auto& p : module->named_parameters()) {
      torch::Tensor stored;
      const auto qualified = module_name + "." + p.key();
      if (!archive.try_read(param_key(module_name, p.key()), stored, /*is_buffer=*/true)) {
        throw CheckpointError("checkpoint '" + path.string() + "' lacks parameter " + qualified);
      }
      if (stored.sizes() != p.value().sizes()) {
        throw CheckpointError("shape mismatch for parameter " + qualified + ": checkpoint " +
                              c10::str(stored.sizes()) + " vs model " + c10::str(p.value().sizes()));
      }
      copies.emplace_back(p.value(), stored);
    }
  }
  {
    torch::NoGradGuard no_grad;
    for (auto& [dst, src] : copies) dst.copy_(src);
  }
  try {
    for (const auto& [name, opt] : state.optimizers()) {
      torch::serialize::InputArchive sub;
      if (!archive.try_read(name, sub)) throw CheckpointError("checkpoint '" + path.string() + "' lacks " + name);
      opt->load(sub);
    }
    torch::Tensor rng;
    if (archive.try_read(kRngKey, rng, /*is_buffer=*/true)) {
      auto gen = at::detail::getDefaultCPUGenerator();
      gen.set_state(rng);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError("corrupt optimizer state in '" + path.string() + "': " + e.what_without_backtrace());
  }
  state.epoch = meta.value("epoch", int64_t{0});
  state.global_step = meta.value("global_step", int64_t{0});
  state.loader_state = meta.value("loader_state", std::string{});
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  auto archive = open_archive(path);
  const auto meta = read_meta(archive, path);
  if (meta.value("kind", "") != "train_state") {
    throw CheckpointError("checkpoint '" + path.string() + "' is not a training checkpoint");
  }
  LoadedCheckpoint out;
  try {
    out.config = meta.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path.string() + "' has an invalid config: " + e.what());
  }
  out.state = std::make_unique<TrainState>(out.config);
  load_checkpoint_into(*out.state, path);
  return out;
}

nlohmann::json read_checkpoint_meta(const fs::path& path) {
  auto archive = open_archive(path);
  return read_meta(archive, path);
}

void save_identity_checkpoint(const fs::path& path) {
  torch::serialize::OutputArchive archive;
  write_meta(archive, {{"format_version", kCheckpointFormatVersion}, {"kind", "identity"}});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  archive.save_to(path.string());
}

}  // namespace semiderain
