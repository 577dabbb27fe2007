#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "semiderain/data.hpp"
#include "semiderain/losses.hpp"
#include "semiderain/networks.hpp"

namespace semiderain {

/// Switches for the ablation variants of the method.
struct Ablations {
  bool use_perceptual = true;
  bool use_tv = true;
  bool use_paired_disc = true;
  bool use_unsupervised = true;
  bool operator==(const Ablations&) const = default;
};

void to_json(nlohmann::json& j, const Ablations& a);
void from_json(const nlohmann::json& j, Ablations& a);

struct TrainConfig {
  int64_t epochs = 200;
  int64_t batch_size = 4;
  double lr_super = 1e-4;
  double lr_unsup = 1e-3;
  std::optional<double> lr_shared;  // rate of the shared mask learner; defaults to lr_super
  int64_t decay_start_epoch = 100;
  int64_t patch = 100;
  int64_t stride = 80;
  uint64_t seed = 0;
  int64_t checkpoint_every = 10;
  int64_t disc_updates_per_step = 1;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LossWeights weights{};
  ModelConfig model{};
  Ablations ablations{};
  PerceptualConfig perceptual{};

  double shared_lr() const { return lr_shared.value_or(lr_super); }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Learning rate at `epoch`: flat until decay_start_epoch, then linear to 0 at `epochs`.
double lr_schedule(int64_t epoch, double base_lr, const TrainConfig& cfg);

/// Every learnable component. `ssrml` is the single mask learner used by both
/// the supervised (G_s) and unsupervised (G_r) paths.
struct Networks {
  explicit Networks(const ModelConfig& cfg);

  Ssrml ssrml;
  Generator g_s;
  Generator g_r;
  Reconstructor g_r_prime;
  MultiScaleDiscriminator d_s;
  MultiScaleDiscriminator d_r;
  PairedDiscriminator d_p;

  /// (name, module) in a fixed order: ssrml, g_s, g_r, g_r_prime, d_s, d_r, d_p.
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> modules() const;

  /// Mask learner and generator on [B,3,H,W] of any size: the input is
  /// reflect-padded to the U-net multiple and the output cropped back.
  torch::Tensor derain_synthetic(const torch::Tensor& x);
  torch::Tensor derain_real(const torch::Tensor& x);
  /// G_r' with the same padding treatment.
  torch::Tensor reconstruct(const torch::Tensor& y);

  int64_t multiple = 1;  // 2^unet_depth
};

/// Parameters, optimizer moments, counters and RNG state of a run. Owned
/// exclusively by the trainer; not copyable.
class TrainState {
 public:
  explicit TrainState(const TrainConfig& cfg);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  Networks nets;
  FeatureExtractor backbone;

  std::unique_ptr<torch::optim::Adam> opt_shared;  // ssrml
  std::unique_ptr<torch::optim::Adam> opt_g_s;
  std::unique_ptr<torch::optim::Adam> opt_g_r;  // g_r and g_r_prime
  std::unique_ptr<torch::optim::Adam> opt_d_s;
  std::unique_ptr<torch::optim::Adam> opt_d_r;
  std::unique_ptr<torch::optim::Adam> opt_d_p;

  int64_t epoch = 0;
  int64_t global_step = 0;
  std::string loader_state;  // MixedLoader::state() at the last epoch boundary

  /// (name, optimizer) in a fixed order.
  std::vector<std::pair<std::string, torch::optim::Adam*>> optimizers() const;

  /// Sets every group's learning rate for `epoch` per lr_schedule.
  void apply_learning_rates(int64_t epoch, const TrainConfig& cfg);
};

/// Tensors of one generator-side forward pass.
struct GeneratorLosses {
  torch::Tensor adv_super;  // includes adv_pair
  torch::Tensor adv_pair;
  torch::Tensor per_super;
  torch::Tensor ssim;
  torch::Tensor super_total;
  std::optional<torch::Tensor> adv_unsup;
  std::optional<torch::Tensor> cc;
  std::optional<torch::Tensor> per_unsup;
  std::optional<torch::Tensor> tv;
  std::optional<torch::Tensor> unsup_total;
  torch::Tensor total;
};

/// Builds the generator objective graph without touching any parameter.
GeneratorLosses generator_losses(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg);

/// One discriminator update (D_s, D_p when enabled, D_r when unsupervised).
/// Fills d_s / d_p / d_r of `out`.
void discriminator_phase(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg, LossBreakdown& out);

/// One combined generator update: a single backward of the total objective,
/// then steps SSRML and G_s (and G_r, G_r' when unsupervised).
void generator_phase(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg, LossBreakdown& out);

/// Phase D (repeated disc_updates_per_step times) followed by Phase G.
/// Throws NonFiniteError naming the first non-finite loss term; the phase that
/// raised leaves its parameters untouched.
LossBreakdown train_step(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg);

/// Gradients of the shared mask learner from each branch of the objective.
struct SharedGradients {
  std::vector<torch::Tensor> supervised;    // d L_super
  std::vector<torch::Tensor> unsupervised;  // d (w_unsup * L_unsup)
  std::vector<torch::Tensor> combined;      // d L_total
};
SharedGradients shared_learner_gradients(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg);

/// Throws NonFiniteError naming the first non-finite parameter.
void require_finite_parameters(const TrainState& state);

/// Per-step observer for `train`.
using StepObserver = std::function<void(const TrainState&, const LossBreakdown&)>;

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<LossBreakdown> history;
  int64_t aborted_steps = 0;
};

/// Loads both streams, trains for cfg.epochs, and writes under out_dir:
///   train_log.jsonl, checkpoints/epoch_N.ckpt, checkpoints/final.ckpt,
///   samples/epoch_N/*.png (input | derained | reference).
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& paired_root,
                  const std::filesystem::path& unpaired_root, const std::filesystem::path& out_dir,
                  const StepObserver& observer = {});

/// One JSON line of the training log.
nlohmann::json log_record(int64_t step, int64_t epoch, const LossBreakdown& b, const LossWeights& w);

}  // namespace semiderain
