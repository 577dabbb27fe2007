#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "semiderain/image.hpp"

namespace semiderain {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Streak statistics for the procedural rain renderer. Angles are measured from
/// vertical in degrees; lengths in pixels; intensities are added to the background.
struct ToyRainConfig {
  int64_t image_size = 64;
  int64_t streak_count = 20;
  Range angle_deg{-10.0, 10.0};
  Range length{10.0, 20.0};
  Range intensity{0.3, 0.8};
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const ToyRainConfig&) const = default;
};

void to_json(nlohmann::json& j, const ToyRainConfig& c);
void from_json(const nlohmann::json& j, ToyRainConfig& c);

struct ToyRain {
  ImageTensor rainy;
  RainMask streaks;
};

/// Renders `streak_count` anti-aliased segments (pixels within distance 1 of the
/// segment receive intensity * (1 - distance)) and composites rainy = clip(clean + R).
ToyRain generate_toy_rain(const ToyRainConfig& cfg, const ImageTensor& clean);

/// Procedural RGB background (gradient, soft blobs, soft-edged boxes, local
/// gratings) in [0.05, 0.85].
ImageTensor generate_toy_clean(int64_t size, uint64_t seed);

/// Seed-derivation used to give every generated image its own stream.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

struct ToyDatasetOptions {
  std::filesystem::path out_dir;
  int64_t count = 8;
  int64_t real_count = 4;  // only used with domain_gap
  int64_t size = 64;
  uint64_t seed = 0;
  bool domain_gap = false;
  ToyRainConfig synthetic{};
  ToyRainConfig real{64, 25, {20.0, 40.0}, {14.0, 26.0}, {0.3, 0.8}, 0};
};

void to_json(nlohmann::json& j, const ToyDatasetOptions& o);

/// Writes `out/paired/{rain,clean}/NNNN.png`, optionally `out/real/NNNN.png`
/// (pseudo-real rain with shifted angles over unrelated backgrounds), plus
/// `toy_config.json` and `manifest.json`. Existing files are overwritten.
void write_toy_dataset(const ToyDatasetOptions& options);

}  // namespace semiderain
