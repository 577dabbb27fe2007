#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "semiderain/image.hpp"

namespace semiderain {

/// A synthetic rainy image and its rain-free label. Shapes always match.
class PairedSample {
 public:
  PairedSample(ImageTensor rainy, ImageTensor clean);
  const ImageTensor& rainy() const noexcept { return rainy_; }
  const ImageTensor& clean() const noexcept { return clean_; }

 private:
  ImageTensor rainy_;
  ImageTensor clean_;
};

/// A real rainy image with a clean image borrowed from the synthetic set as its fake label.
class UnpairedSample {
 public:
  UnpairedSample(ImageTensor rainy, ImageTensor fake_label);
  const ImageTensor& rainy() const noexcept { return rainy_; }
  const ImageTensor& fake_label() const noexcept { return fake_label_; }

 private:
  ImageTensor rainy_;
  ImageTensor fake_label_;
};

/// Sorted image files directly inside `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Reads `root/rain/*` and `root/clean/*`, pairing by filename, in lexicographic order.
std::vector<PairedSample> load_paired_dataset(const std::filesystem::path& root);

/// Loads `root/rain/*` only, for callers that have no references.
std::vector<std::pair<std::string, ImageTensor>> load_rain_directory(const std::filesystem::path& root);

/// Index into a clean pool for each of `count` real images, uniform and seeded.
std::vector<std::size_t> assign_fake_labels(std::size_t count, std::size_t pool_size, uint64_t seed);

/// Center-crops `image` to the target aspect ratio, then resizes bilinearly to height x width.
ImageTensor match_shape(const ImageTensor& image, int64_t height, int64_t width);

std::vector<UnpairedSample> load_unpaired_dataset(const std::filesystem::path& rain_root,
                                                  std::span<const ImageTensor> clean_pool, uint64_t seed);

/// Row-major patches at offsets 0, stride, 2*stride, ... that fit inside the image.
std::vector<ImageTensor> extract_patches(const ImageTensor& image, int64_t patch, int64_t stride);

/// Number of patch positions along one axis; 0 when dim < patch.
int64_t patch_count(int64_t dim, int64_t patch, int64_t stride);

// Samples smaller than the patch are skipped with a warning on stderr.
std::vector<PairedSample> extract_paired_patches(std::span<const PairedSample> samples, int64_t patch,
                                                 int64_t stride);
std::vector<UnpairedSample> extract_unpaired_patches(std::span<const UnpairedSample> samples, int64_t patch,
                                                     int64_t stride);

struct UnpairedBatch {
  torch::Tensor rainy;       // [B,3,H,W]
  torch::Tensor fake_label;  // [B,3,H,W]
};

struct MixedBatch {
  torch::Tensor rainy;  // x_s [B,3,H,W]
  torch::Tensor clean;  // y_s [B,3,H,W]
  std::optional<UnpairedBatch> unpaired;
};

/// Yields one paired and one unpaired batch per step. An epoch is one pass over the
/// paired stream (last batch may be short); the unpaired stream cycles and is
/// reshuffled each time it wraps. With no unpaired samples every step carries none.
class MixedLoader {
 public:
  MixedLoader(std::vector<PairedSample> paired, std::vector<UnpairedSample> unpaired, int64_t batch_size,
              uint64_t seed);

  std::size_t steps_per_epoch() const;
  std::size_t paired_size() const { return paired_.size(); }
  std::size_t unpaired_size() const { return unpaired_.size(); }

  /// Index composition of the next epoch, advancing the loader state.
  struct StepIndices {
    std::vector<std::size_t> paired;
    std::vector<std::size_t> unpaired;
  };
  std::vector<StepIndices> next_epoch_indices();

  /// Materialized batches for the next epoch.
  std::vector<MixedBatch> next_epoch();

  MixedBatch make_batch(const StepIndices& step) const;

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::size_t next_unpaired();

  std::vector<PairedSample> paired_;
  std::vector<UnpairedSample> unpaired_;
  int64_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> unpaired_order_;
  std::size_t unpaired_cursor_ = 0;
};

/// Plain description of a "&" mixture: paired synthetic root plus unpaired real root.
struct DatasetManifest {
  std::filesystem::path paired_root;
  std::filesystem::path unpaired_root;  // empty when no real set
  uint64_t seed = 0;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace semiderain
