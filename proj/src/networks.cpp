#include "semiderain/networks.hpp"

#include <cmath>
#include <regex>

#include <ATen/CPUGeneratorImpl.h>

#include "semiderain/error.hpp"

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace semiderain {

namespace {

nn::Conv2d conv3x3(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)); }

void require_channels(const torch::Tensor& x, int64_t channels, const char* who) {
  if (x.dim() != 4 || x.size(1) != channels) {
    throw ShapeError(std::string(who) + ": expected [B," + std::to_string(channels) + ",H,W], got " +
                     c10::str(x.sizes()));
  }
}

nn::Sequential double_conv(int64_t in, int64_t out) {
  return nn::Sequential(conv3x3(in, out), nn::ReLU(), conv3x3(out, out), nn::ReLU());
}

}  // namespace

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.ssrml_channels = 8;
  c.ssrml_iterations = 2;
  c.ssrml_blocks = 5;
  c.unet_depth = 2;
  c.unet_base_channels = 16;
  c.disc_scales = 3;
  c.disc_layers_per_scale = 5;
  c.disc_base_channels = 8;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
  };
  positive(ssrml_channels, "ssrml_channels");
  positive(ssrml_iterations, "ssrml_iterations");
  positive(ssrml_blocks, "ssrml_blocks");
  positive(unet_depth, "unet_depth");
  positive(unet_base_channels, "unet_base_channels");
  positive(disc_scales, "disc_scales");
  positive(disc_layers_per_scale, "disc_layers_per_scale");
  positive(disc_base_channels, "disc_base_channels");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"ssrml_channels", c.ssrml_channels},
                     {"ssrml_iterations", c.ssrml_iterations},
                     {"ssrml_blocks", c.ssrml_blocks},
                     {"unet_depth", c.unet_depth},
                     {"unet_base_channels", c.unet_base_channels},
                     {"disc_scales", c.disc_scales},
                     {"disc_layers_per_scale", c.disc_layers_per_scale},
                     {"disc_base_channels", c.disc_base_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const nlohmann::json defaults = c;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("model: unknown key '" + key + "'");
  }
  c.ssrml_channels = j.value("ssrml_channels", c.ssrml_channels);
  c.ssrml_iterations = j.value("ssrml_iterations", c.ssrml_iterations);
  c.ssrml_blocks = j.value("ssrml_blocks", c.ssrml_blocks);
  c.unet_depth = j.value("unet_depth", c.unet_depth);
  c.unet_base_channels = j.value("unet_base_channels", c.unet_base_channels);
  c.disc_scales = j.value("disc_scales", c.disc_scales);
  c.disc_layers_per_scale = j.value("disc_layers_per_scale", c.disc_layers_per_scale);
  c.disc_base_channels = j.value("disc_base_channels", c.disc_base_channels);
}

// ---------------------------------------------------------------------------

ConvLstmCellImpl::ConvLstmCellImpl(int64_t in_channels, int64_t hidden_channels) : hidden_(hidden_channels) {
  gates_ = register_module("gates", conv3x3(in_channels + hidden_channels, 4 * hidden_channels));
}

std::pair<torch::Tensor, torch::Tensor> ConvLstmCellImpl::forward(const torch::Tensor& x, const torch::Tensor& h,
                                                                  const torch::Tensor& c) {
  auto g = gates_->forward(torch::cat({x, h}, 1)).chunk(4, 1);
  auto input = torch::sigmoid(g[0]);
  auto forget = torch::sigmoid(g[1]);
  auto output = torch::sigmoid(g[2]);
  auto cell = torch::tanh(g[3]);
  auto c_next = forget * c + input * cell;
  auto h_next = output * torch::tanh(c_next);
  return {h_next, c_next};
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", conv3x3(channels, channels));
  conv2_ = register_module("conv2", conv3x3(channels, channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(conv1_->forward(x));
  y = torch::relu(conv2_->forward(y));
  return x + y;
}

SsrmlImpl::SsrmlImpl(const ModelConfig& cfg) : iterations_(cfg.ssrml_iterations) {
  cfg.validate();
  const auto ch = cfg.ssrml_channels;
  stem_ = register_module("stem", conv3x3(4, ch));
  blocks_ = nn::Sequential();
  for (int64_t i = 0; i < cfg.ssrml_blocks; ++i) blocks_->push_back(ResidualBlock(ch));
  register_module("blocks", blocks_);
  lstm_ = register_module("lstm", ConvLstmCell(ch, ch));
  head_ = register_module("head", conv3x3(ch, 1));
}

void SsrmlImpl::set_iterations(int64_t n) {
  if (n < 1) throw ConfigError("ssrml iterations must be >= 1");
  iterations_ = n;
}

std::vector<torch::Tensor> SsrmlImpl::forward_all(const torch::Tensor& x) {
  require_channels(x, 3, "ssrml");
  const auto b = x.size(0);
  const auto hgt = x.size(2);
  const auto wid = x.size(3);
  auto opts = x.options();
  auto mask = torch::full({b, 1, hgt, wid}, 0.5, opts);
  auto h = torch::zeros({b, lstm_->hidden_channels(), hgt, wid}, opts);
  auto c = torch::zeros_like(h);
  std::vector<torch::Tensor> masks;
  for (int64_t it = 0; it < iterations_; ++it) {
    auto feat = torch::relu(stem_->forward(torch::cat({x, mask}, 1)));
    feat = blocks_->forward(feat);
    std::tie(h, c) = lstm_->forward(feat, h, c);
    mask = torch::sigmoid(head_->forward(h));
    masks.push_back(mask);
  }
  return masks;
}

torch::Tensor SsrmlImpl::forward(const torch::Tensor& x) { return forward_all(x).back(); }

// ---------------------------------------------------------------------------

UNetImpl::UNetImpl(int64_t in_channels, int64_t out_channels, int64_t depth, int64_t base_channels)
    : depth_(depth) {
  if (depth < 1) throw ConfigError("unet depth must be >= 1");
  int64_t in = in_channels;
  for (int64_t level = 0; level < depth; ++level) {
    const int64_t out = base_channels << level;
    encoders_->push_back(double_conv(in, out));
    in = out;
  }
  register_module("encoders", encoders_);
  bottleneck_ = register_module("bottleneck", double_conv(in, base_channels << depth));
  for (int64_t level = depth - 1; level >= 0; --level) {
    const int64_t width = base_channels << level;
    upsamplers_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * width, width, 2).stride(2)));
    decoders_->push_back(double_conv(2 * width, width));
  }
  register_module("upsamplers", upsamplers_);
  register_module("decoders", decoders_);
  out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(base_channels, out_channels, 1)));
  torch::NoGradGuard no_grad;
  // He init for the ReLU body; the default fan-in uniform shrinks activations layer by layer.
  for (auto& m : modules(/*include_self=*/false)) {
    if (auto* conv = m->as<nn::Conv2dImpl>()) {
      nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
      conv->bias.zero_();
    } else if (auto* up = m->as<nn::ConvTranspose2dImpl>()) {
      nn::init::kaiming_normal_(up->weight, 0.0, torch::kFanIn, torch::kReLU);
      up->bias.zero_();
    }
  }
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  const int64_t multiple = int64_t{1} << depth_;
  if (x.dim() != 4 || x.size(2) % multiple != 0 || x.size(3) % multiple != 0) {
    throw ShapeError("unet: spatial dims " + c10::str(x.sizes()) + " must be divisible by " +
                     std::to_string(multiple));
  }
  std::vector<torch::Tensor> skips;
  auto y = x;
  for (const auto& enc : *encoders_) {
    y = enc->as<nn::Sequential>()->forward(y);
    skips.push_back(y);
    y = F::max_pool2d(y, F::MaxPool2dFuncOptions(2).stride(2));
  }
  y = bottleneck_->forward(y);
  for (std::size_t i = 0; i < upsamplers_->size(); ++i) {
    y = upsamplers_[i]->as<nn::ConvTranspose2d>()->forward(y);
    y = torch::cat({skips[skips.size() - 1 - i], y}, 1);
    y = decoders_[i]->as<nn::Sequential>()->forward(y);
  }
  return torch::sigmoid(out_->forward(y));
}

GeneratorImpl::GeneratorImpl(const ModelConfig& cfg) {
  unet_ = register_module("unet", UNet(4, 3, cfg.unet_depth, cfg.unet_base_channels));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& mask, const torch::Tensor& x) {
  require_channels(x, 3, "generator image");
  require_channels(mask, 1, "generator mask");
  if (mask.size(0) != x.size(0) || mask.size(2) != x.size(2) || mask.size(3) != x.size(3)) {
    throw ShapeError("generator: mask " + c10::str(mask.sizes()) + " not aligned with image " +
                     c10::str(x.sizes()));
  }
  return unet_->forward(torch::cat({mask, x}, 1));
}

ReconstructorImpl::ReconstructorImpl(const ModelConfig& cfg) {
  mask_head_ = register_module("mask_head", Ssrml(cfg));
  unet_ = register_module("unet", Generator(cfg));
}

torch::Tensor ReconstructorImpl::forward(const torch::Tensor& y) {
  require_channels(y, 3, "reconstructor");
  return unet_->forward(mask_head_->forward(y), y);
}

// ---------------------------------------------------------------------------

ConvScoreStackImpl::ConvScoreStackImpl(int64_t in_channels, int64_t base_channels, int64_t layers) {
  int64_t in = in_channels;
  for (int64_t i = 0; i < layers; ++i) {
    const bool last = i + 1 == layers;
    const int64_t out = last ? 1 : base_channels << i;
    convs_.push_back(register_module("conv" + std::to_string(i), nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2))));
    in = out;
  }
}

torch::Tensor ConvScoreStackImpl::forward(const torch::Tensor& x) {
  auto y = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    y = convs_[i]->forward(F::pad(y, F::PadFuncOptions({1, 2, 1, 2})));
    if (i + 1 < convs_.size()) y = F::leaky_relu(y, F::LeakyReLUFuncOptions().negative_slope(0.2));
  }
  return torch::sigmoid(y);
}

// A level of side n is admissible when the first layers-1 convolutions each halve
// a side of at least two pixels, i.e. n >= 2^(layers-1).
int64_t min_discriminator_input(int64_t scales, int64_t layers) {
  return (int64_t{1} << (layers - 1)) << (scales - 1);
}

int64_t score_map_side(int64_t n, int64_t scale, int64_t layers) {
  for (int64_t s = 0; s < scale; ++s) n /= 2;
  for (int64_t l = 0; l < layers; ++l) n = (n + 1) / 2;
  return n;
}

namespace {

void require_disc_size(const torch::Tensor& x, int64_t scales, int64_t layers, const char* who) {
  const auto min_side = min_discriminator_input(scales, layers);
  if (x.size(2) < min_side || x.size(3) < min_side) {
    throw ShapeError(std::string(who) + ": input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " too small for " + std::to_string(scales) + " scale(s) of " + std::to_string(layers) +
                     " stride-2 layers; minimum admissible size is " + std::to_string(min_side) + "x" +
                     std::to_string(min_side));
  }
}

}  // namespace

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(const ModelConfig& cfg) : layers_(cfg.disc_layers_per_scale) {
  cfg.validate();
  for (int64_t s = 0; s < cfg.disc_scales; ++s) {
    stacks_.push_back(register_module("scale" + std::to_string(s),
                                      ConvScoreStack(3, cfg.disc_base_channels, cfg.disc_layers_per_scale)));
  }
}

DiscScores MultiScaleDiscriminatorImpl::forward(const torch::Tensor& x) {
  require_channels(x, 3, "multi-scale discriminator");
  require_disc_size(x, static_cast<int64_t>(stacks_.size()), layers_, "multi-scale discriminator");
  DiscScores scores;
  auto level = x;
  for (std::size_t s = 0; s < stacks_.size(); ++s) {
    if (s > 0) level = F::avg_pool2d(level, F::AvgPool2dFuncOptions(2).stride(2));
    scores.per_scale.push_back(stacks_[s]->forward(level));
  }
  return scores;
}

PairedDiscriminatorImpl::PairedDiscriminatorImpl(const ModelConfig& cfg) : layers_(cfg.disc_layers_per_scale) {
  cfg.validate();
  stack_ = register_module("stack", ConvScoreStack(6, cfg.disc_base_channels, cfg.disc_layers_per_scale));
}

DiscScores PairedDiscriminatorImpl::forward(const torch::Tensor& rainy, const torch::Tensor& derained) {
  require_channels(rainy, 3, "paired discriminator (rainy)");
  require_channels(derained, 3, "paired discriminator (derained)");
  if (rainy.sizes() != derained.sizes()) {
    throw ShapeError("paired discriminator: " + c10::str(rainy.sizes()) + " vs " + c10::str(derained.sizes()));
  }
  require_disc_size(rainy, 1, layers_, "paired discriminator");
  return DiscScores{{stack_->forward(torch::cat({rainy, derained}, 1))}};
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const PerceptualConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone}, {"layer", c.layer}, {"weights", c.weights.string()}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PerceptualConfig& c) {
  for (const auto& [key, _] : j.items()) {
    if (key != "backbone" && key != "layer" && key != "weights" && key != "seed") {
      throw ConfigError("perceptual: unknown key '" + key + "'");
    }
  }
  c.backbone = j.value("backbone", c.backbone);
  c.layer = j.value("layer", c.layer);
  c.weights = j.value("weights", c.weights.string());
  c.seed = j.value("seed", c.seed);
}

namespace {

// torchvision VGG-16 `features`: 0 = pool marker.
constexpr int64_t kVggPlan[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};

// Number of entries of kVggPlan consumed up to and including reluB_K.
std::size_t vgg_plan_length(const std::string& layer) {
  static const std::regex pattern(R"(relu([1-5])_([1-3]))");
  std::smatch m;
  if (!std::regex_match(layer, m, pattern)) {
    throw ConfigError("perceptual: unsupported VGG-16 layer '" + layer + "' (expected reluB_K, e.g. relu2_2)");
  }
  const int block = std::stoi(m[1]);
  const int index = std::stoi(m[2]);
  const int convs_in_block = block <= 2 ? 2 : 3;
  if (index > convs_in_block) throw ConfigError("perceptual: VGG-16 block " + m[1].str() + " has no conv " + m[2].str());
  int seen_block = 1;
  int seen_conv = 0;
  for (std::size_t i = 0; i < std::size(kVggPlan); ++i) {
    if (kVggPlan[i] == 0) {
      ++seen_block;
      seen_conv = 0;
      continue;
    }
    ++seen_conv;
    if (seen_block == block && seen_conv == index) return i + 1;
  }
  throw ConfigError("perceptual: bad VGG-16 layer '" + layer + "'");
}

// torchvision index of each conv in `features` (conv, relu, [pool]).
std::vector<int64_t> vgg_feature_indices() {
  std::vector<int64_t> idx;
  int64_t pos = 0;
  for (auto w : kVggPlan) {
    if (w == 0) {
      pos += 1;
    } else {
      idx.push_back(pos);
      pos += 2;
    }
  }
  return idx;
}

}  // namespace

std::vector<int64_t> vgg16_conv_widths(const std::string& layer) {
  std::vector<int64_t> widths;
  const auto n = vgg_plan_length(layer);
  for (std::size_t i = 0; i < n; ++i) {
    if (kVggPlan[i] != 0) widths.push_back(kVggPlan[i]);
  }
  return widths;
}

FeatureExtractor FeatureExtractor::identity() { return FeatureExtractor{}; }

FeatureExtractor FeatureExtractor::surrogate(uint64_t seed) {
  FeatureExtractor fe;
  fe.kind_ = Kind::Surrogate;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const std::pair<int64_t, int64_t> shapes[] = {{3, 16}, {16, 16}};
  for (auto [in, out] : shapes) {
    const double scale = std::sqrt(2.0 / static_cast<double>(in * 9));
    Layer l;
    l.weight = at::normal(0.0, scale, {out, in, 3, 3}, gen);
    l.bias = at::normal(0.0, 0.01, {out}, gen);
    fe.layers_.push_back(std::move(l));
  }
  return fe;
}

FeatureExtractor FeatureExtractor::vgg16(const std::filesystem::path& weights, const std::string& layer) {
  const auto plan_len = vgg_plan_length(layer);
  if (weights.empty() || !std::filesystem::exists(weights)) {
    throw ConfigError("perceptual: VGG-16 weights not found at '" + weights.string() +
                      "'; export them with tools/export_vgg16.py or set perceptual.backbone = \"surrogate\"");
  }
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(weights.string());
  } catch (const c10::Error& e) {
    throw ConfigError("perceptual: cannot read VGG-16 weights '" + weights.string() + "': " + e.what_without_backtrace());
  }
  FeatureExtractor fe;
  fe.kind_ = Kind::Vgg16;
  const auto indices = vgg_feature_indices();
  std::size_t conv = 0;
  int64_t in = 3;
  for (std::size_t i = 0; i < plan_len; ++i) {
    Layer l;
    if (kVggPlan[i] == 0) {
      l.pool = true;
      fe.layers_.push_back(std::move(l));
      continue;
    }
    const auto prefix = "features_" + std::to_string(indices[conv]);
    auto read = [&](const std::string& key) {
      torch::Tensor t;
      if (!archive.try_read(key, t, /*is_buffer=*/true) && !archive.try_read(key, t)) {
        throw ConfigError("perceptual: VGG-16 weights missing '" + key + "'");
      }
      return t.to(torch::kFloat32).detach();
    };
    l.weight = read(prefix + "_weight");
    l.bias = read(prefix + "_bias");
    if (l.weight.sizes() != torch::IntArrayRef({kVggPlan[i], in, 3, 3})) {
      throw ConfigError("perceptual: " + prefix + "_weight has shape " + c10::str(l.weight.sizes()));
    }
    in = kVggPlan[i];
    ++conv;
    fe.layers_.push_back(std::move(l));
  }
  return fe;
}

FeatureExtractor FeatureExtractor::from_config(const PerceptualConfig& cfg) {
  if (cfg.backbone == "identity") return identity();
  if (cfg.backbone == "surrogate") return surrogate(cfg.seed);
  if (cfg.backbone == "vgg16") return vgg16(cfg.weights, cfg.layer);
  throw ConfigError("perceptual: unknown backbone '" + cfg.backbone + "' (identity | surrogate | vgg16)");
}

std::vector<std::pair<torch::Tensor, torch::Tensor>> FeatureExtractor::conv_parameters() const {
  std::vector<std::pair<torch::Tensor, torch::Tensor>> out;
  for (const auto& l : layers_) {
    if (!l.pool) out.emplace_back(l.weight, l.bias);
  }
  return out;
}

torch::Tensor FeatureExtractor::operator()(const torch::Tensor& x) const {
  require_channels(x, 3, "feature extractor");
  if (kind_ == Kind::Identity) return x;
  auto y = x;
  {
    // The surrogate sees the same normalized input as VGG so its feature scale is comparable.
    auto mean = torch::tensor({0.485, 0.456, 0.406}, x.options()).view({1, 3, 1, 1});
    auto std = torch::tensor({0.229, 0.224, 0.225}, x.options()).view({1, 3, 1, 1});
    y = (y - mean) / std;
  }
  for (const auto& l : layers_) {
    if (l.pool) {
      y = F::max_pool2d(y, F::MaxPool2dFuncOptions(2).stride(2));
      continue;
    }
    y = torch::relu(F::conv2d(y, l.weight.to(x.scalar_type()),
                              F::Conv2dFuncOptions().bias(l.bias.to(x.scalar_type())).padding(1)));
  }
  return y;
}

void save_vgg16_weights(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& convs,
                        const std::filesystem::path& path) {
  const auto indices = vgg_feature_indices();
  if (convs.size() > indices.size()) throw ConfigError("save_vgg16_weights: too many conv layers");
  torch::serialize::OutputArchive archive;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto prefix = "features_" + std::to_string(indices[i]);
    archive.write(prefix + "_weight", convs[i].first, /*is_buffer=*/true);
    archive.write(prefix + "_bias", convs[i].second, /*is_buffer=*/true);
  }
  archive.save_to(path.string());
}

torch::Tensor reflect_pad_to_multiple(const torch::Tensor& x, int64_t multiple) {
  const auto pad_h = (multiple - x.size(2) % multiple) % multiple;
  const auto pad_w = (multiple - x.size(3) % multiple) % multiple;
  if (pad_h == 0 && pad_w == 0) return x;
  const bool can_reflect = pad_h < x.size(2) && pad_w < x.size(3);
  auto opts = F::PadFuncOptions({0, pad_w, 0, pad_h});
  if (can_reflect) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return F::pad(x, opts);
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace semiderain
