#pragma once

#include <filesystem>
#include <memory>
#include <utility>

#include "semiderain/trainer.hpp"

namespace semiderain {

inline constexpr int kCheckpointFormatVersion = 1;

/// Single torch archive holding every parameter, optimizer moment, the torch
/// RNG state and a `meta` JSON record {format_version, kind, config, epoch,
/// global_step, loader_state}.
void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::filesystem::path& path);

struct LoadedCheckpoint {
  std::unique_ptr<TrainState> state;
  TrainConfig config;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Restores a checkpoint into an existing state. Every parameter shape is
/// validated first; a mismatch names the first offending parameter.
void load_checkpoint_into(TrainState& state, const std::filesystem::path& path);

/// Parsed `meta` record of any checkpoint.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

/// A checkpoint whose inference path returns its input unchanged.
void save_identity_checkpoint(const std::filesystem::path& path);

}  // namespace semiderain
