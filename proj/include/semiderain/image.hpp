#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace semiderain {

/// Float32 image laid out [channels, height, width] with every value in [0, 1].
/// Channels is 1 or 3. The wrapped tensor is never mutated after construction.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(torch::Tensor data);

  const torch::Tensor& data() const noexcept { return data_; }
  int64_t channels() const { return data_.size(0); }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  bool same_shape(const ImageTensor& other) const { return data_.sizes() == other.data_.sizes(); }

 private:
  torch::Tensor data_;
};

/// Single-channel attention map [1, height, width] in [0, 1].
class RainMask {
 public:
  RainMask() = default;
  explicit RainMask(torch::Tensor data);

  const torch::Tensor& data() const noexcept { return data_; }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

 private:
  torch::Tensor data_;
};

/// Decodes an 8-bit PNG/JPEG into a 3-channel RGB ImageTensor (v / 255).
ImageTensor load_image(const std::filesystem::path& path);

/// Rounds [0,1] values to the nearest 8-bit level and back.
torch::Tensor quantize_8bit(const torch::Tensor& chw);

/// Writes a [C,H,W] tensor (C = 1 or 3, values clamped to [0,1]) as an 8-bit PNG.
void save_png(const torch::Tensor& chw, const std::filesystem::path& path);

/// True for the file extensions the loaders accept.
bool is_image_file(const std::filesystem::path& path);

}  // namespace semiderain
