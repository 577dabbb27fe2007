#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace semiderain {

/// Architecture hyperparameters shared by every learnable component.
struct ModelConfig {
  int64_t ssrml_channels = 32;
  int64_t ssrml_iterations = 4;
  int64_t ssrml_blocks = 5;
  int64_t unet_depth = 4;
  int64_t unet_base_channels = 64;
  int64_t disc_scales = 3;
  int64_t disc_layers_per_scale = 5;
  int64_t disc_base_channels = 64;

  /// Small configuration for CPU experiments and the test suites.
  static ModelConfig desk();
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Sigmoid score maps, one per pyramid level (finest first), each [B,1,h,w].
struct DiscScores {
  std::vector<torch::Tensor> per_scale;
};

/// Convolutional LSTM cell: one 3x3 conv produces the four gates from [input, h].
class ConvLstmCellImpl : public torch::nn::Module {
 public:
  ConvLstmCellImpl(int64_t in_channels, int64_t hidden_channels);
  /// Returns (h', c').
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& h,
                                                  const torch::Tensor& c);
  int64_t hidden_channels() const { return hidden_; }

 private:
  int64_t hidden_;
  torch::nn::Conv2d gates_{nullptr};
};
TORCH_MODULE(ConvLstmCell);

/// Conv-ReLU-Conv-ReLU with an identity shortcut.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Recurrent rain-mask learner. Every iteration sees [image, previous mask]
/// (the first iteration starts from a constant 0.5 mask), runs the stem and the
/// residual blocks, updates the LSTM state and emits a refined sigmoid mask.
class SsrmlImpl : public torch::nn::Module {
 public:
  explicit SsrmlImpl(const ModelConfig& cfg);
  /// x: [B,3,H,W] -> mask [B,1,H,W] in (0,1).
  torch::Tensor forward(const torch::Tensor& x);
  /// All intermediate masks, one per iteration.
  std::vector<torch::Tensor> forward_all(const torch::Tensor& x);

  int64_t iterations() const { return iterations_; }
  void set_iterations(int64_t n);

 private:
  int64_t iterations_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::Sequential blocks_{nullptr};
  ConvLstmCell lstm_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Ssrml);

/// Encoder-decoder with skip connections and a sigmoid output. The output
/// projection is zero-initialized so a fresh network emits 0.5 everywhere.
class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl(int64_t in_channels, int64_t out_channels, int64_t depth, int64_t base_channels);
  torch::Tensor forward(const torch::Tensor& x);
  int64_t depth() const { return depth_; }

 private:
  int64_t depth_;
  torch::nn::ModuleList encoders_;
  torch::nn::Sequential bottleneck_{nullptr};
  torch::nn::ModuleList upsamplers_;
  torch::nn::ModuleList decoders_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(UNet);

/// Derain generator: U-net over the channel concatenation [mask, image].
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& mask, const torch::Tensor& x);

 private:
  UNet unet_{nullptr};
};
TORCH_MODULE(Generator);

/// Re-rain generator for the cycle: its own mask learner followed by a U-net.
class ReconstructorImpl : public torch::nn::Module {
 public:
  explicit ReconstructorImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& y);

 private:
  Ssrml mask_head_{nullptr};
  Generator unet_{nullptr};
};
TORCH_MODULE(Reconstructor);

/// Stack of stride-2 4x4 convolutions with leaky ReLU (0.2) between them and a
/// sigmoid after the last one, which projects to one channel. Every layer pads
/// (1 before, 2 after) so a side of n pixels becomes ceil(n / 2).
class ConvScoreStackImpl : public torch::nn::Module {
 public:
  ConvScoreStackImpl(int64_t in_channels, int64_t base_channels, int64_t layers);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(ConvScoreStack);

/// Smallest square input side a discriminator with this many scales and layers accepts.
int64_t min_discriminator_input(int64_t scales, int64_t layers);

/// Spatial side of the score map produced for an input side n at pyramid level `scale`.
int64_t score_map_side(int64_t n, int64_t scale, int64_t layers);

class MultiScaleDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit MultiScaleDiscriminatorImpl(const ModelConfig& cfg);
  DiscScores forward(const torch::Tensor& x);

 private:
  int64_t layers_;
  std::vector<ConvScoreStack> stacks_;
};
TORCH_MODULE(MultiScaleDiscriminator);

/// Single-scale discriminator over the 6-channel pair [rainy, derained].
class PairedDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PairedDiscriminatorImpl(const ModelConfig& cfg);
  DiscScores forward(const torch::Tensor& rainy, const torch::Tensor& derained);

 private:
  int64_t layers_;
  ConvScoreStack stack_{nullptr};
};
TORCH_MODULE(PairedDiscriminator);

/// Settings for the frozen perceptual network.
struct PerceptualConfig {
  std::string backbone = "surrogate";  // surrogate | vgg16 | identity
  std::string layer = "relu2_2";       // vgg16 only
  std::filesystem::path weights;       // vgg16 only
  uint64_t seed = 1234;                // surrogate only
  bool operator==(const PerceptualConfig&) const = default;
};

void to_json(nlohmann::json& j, const PerceptualConfig& c);
void from_json(const nlohmann::json& j, PerceptualConfig& c);

/// Frozen feature extractor. Weights never require gradients, but gradients
/// flow to the input. Works in the dtype of its input.
class FeatureExtractor {
 public:
  enum class Kind { Identity, Surrogate, Vgg16 };

  static FeatureExtractor identity();
  /// Fixed random conv 3-16-16 with ReLU over ImageNet-normalized input.
  static FeatureExtractor surrogate(uint64_t seed = 1234);
  /// VGG-16 `features` up to `layer` (e.g. relu1_2, relu2_2, relu3_3). The file
  /// is a torch archive with tensors `features_<i>_weight` / `features_<i>_bias`
  /// using torchvision indices. Inputs are ImageNet-normalized first.
  static FeatureExtractor vgg16(const std::filesystem::path& weights, const std::string& layer = "relu2_2");
  static FeatureExtractor from_config(const PerceptualConfig& cfg);

  torch::Tensor operator()(const torch::Tensor& x) const;
  Kind kind() const { return kind_; }
  /// (weight, bias) of every conv layer in order; empty for the identity map.
  std::vector<std::pair<torch::Tensor, torch::Tensor>> conv_parameters() const;

 private:
  struct Layer {
    bool pool = false;
    torch::Tensor weight;
    torch::Tensor bias;
  };

  Kind kind_ = Kind::Identity;
  std::vector<Layer> layers_;
};

/// Writes VGG-16 conv weights in the format `FeatureExtractor::vgg16` reads.
void save_vgg16_weights(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& convs,
                        const std::filesystem::path& path);

/// Number of conv layers, and their channel widths, up to the named VGG-16 layer.
std::vector<int64_t> vgg16_conv_widths(const std::string& layer);

/// Reflect-pads [B,C,H,W] on the bottom/right so H and W become multiples of `multiple`.
torch::Tensor reflect_pad_to_multiple(const torch::Tensor& x, int64_t multiple);

/// Sum of numel over every parameter of a module.
int64_t parameter_count(const torch::nn::Module& module);

}  // namespace semiderain
