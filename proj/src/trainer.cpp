#include "semiderain/trainer.hpp"

#include <fstream>
#include <iostream>

#include "semiderain/checkpoint.hpp"
#include "semiderain/error.hpp"

namespace fs = std::filesystem;

namespace semiderain {

void to_json(nlohmann::json& j, const Ablations& a) {
  j = nlohmann::json{{"use_perceptual", a.use_perceptual},
                     {"use_tv", a.use_tv},
                     {"use_paired_disc", a.use_paired_disc},
                     {"use_unsupervised", a.use_unsupervised}};
}

void from_json(const nlohmann::json& j, Ablations& a) {
  const nlohmann::json defaults = a;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("ablations: unknown key '" + key + "'");
  }
  a.use_perceptual = j.value("use_perceptual", a.use_perceptual);
  a.use_tv = j.value("use_tv", a.use_tv);
  a.use_paired_disc = j.value("use_paired_disc", a.use_paired_disc);
  a.use_unsupervised = j.value("use_unsupervised", a.use_unsupervised);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (decay_start_epoch <= 0 || decay_start_epoch > epochs) {
    throw ConfigError("train.decay_start_epoch must satisfy 0 < decay_start_epoch <= epochs");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_super > 0.0) || !(lr_unsup > 0.0)) throw ConfigError("train learning rates must be > 0");
  if (lr_shared && !(*lr_shared > 0.0)) throw ConfigError("train.lr_shared must be > 0");
  if (patch < 1 || stride < 1) throw ConfigError("train.patch and train.stride must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (disc_updates_per_step < 1) throw ConfigError("train.disc_updates_per_step must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0,1)");
  }
  weights.validate();
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr_super", c.lr_super},
                     {"lr_unsup", c.lr_unsup},
                     {"lr_shared", c.lr_shared ? nlohmann::json(*c.lr_shared) : nlohmann::json(nullptr)},
                     {"decay_start_epoch", c.decay_start_epoch},
                     {"patch", c.patch},
                     {"stride", c.stride},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"disc_updates_per_step", c.disc_updates_per_step},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"weights", c.weights},
                     {"model", c.model},
                     {"ablations", c.ablations},
                     {"perceptual", c.perceptual}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const nlohmann::json defaults = c;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("train: unknown key '" + key + "'");
  }
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_super = j.value("lr_super", c.lr_super);
    c.lr_unsup = j.value("lr_unsup", c.lr_unsup);
    if (j.contains("lr_shared")) {
      c.lr_shared = j.at("lr_shared").is_null() ? std::nullopt : std::optional<double>(j.at("lr_shared").get<double>());
    }
    c.decay_start_epoch = j.value("decay_start_epoch", c.decay_start_epoch);
    c.patch = j.value("patch", c.patch);
    c.stride = j.value("stride", c.stride);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.disc_updates_per_step = j.value("disc_updates_per_step", c.disc_updates_per_step);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (j.contains("weights")) from_json(j.at("weights"), c.weights);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("ablations")) from_json(j.at("ablations"), c.ablations);
  if (j.contains("perceptual")) from_json(j.at("perceptual"), c.perceptual);
}

double lr_schedule(int64_t epoch, double base_lr, const TrainConfig& cfg) {
  if (epoch < cfg.decay_start_epoch) return base_lr;
  if (epoch >= cfg.epochs) return 0.0;
  return base_lr * static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
}

// ---------------------------------------------------------------------------

Networks::Networks(const ModelConfig& cfg)
    : ssrml(cfg),
      g_s(cfg),
      g_r(cfg),
      g_r_prime(cfg),
      d_s(cfg),
      d_r(cfg),
      d_p(cfg),
      multiple(int64_t{1} << cfg.unet_depth) {}

namespace {

torch::Tensor crop_like(const torch::Tensor& y, const torch::Tensor& x) {
  return y.slice(2, 0, x.size(2)).slice(3, 0, x.size(3));
}

}  // namespace

torch::Tensor Networks::derain_synthetic(const torch::Tensor& x) {
  auto xp = reflect_pad_to_multiple(x, multiple);
  return crop_like(g_s->forward(ssrml->forward(xp), xp), x);
}

torch::Tensor Networks::derain_real(const torch::Tensor& x) {
  auto xp = reflect_pad_to_multiple(x, multiple);
  return crop_like(g_r->forward(ssrml->forward(xp), xp), x);
}

torch::Tensor Networks::reconstruct(const torch::Tensor& y) {
  return crop_like(g_r_prime->forward(reflect_pad_to_multiple(y, multiple)), y);
}

std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> Networks::modules() const {
  return {{"ssrml", ssrml.ptr()}, {"g_s", g_s.ptr()}, {"g_r", g_r.ptr()},      {"g_r_prime", g_r_prime.ptr()},
          {"d_s", d_s.ptr()},     {"d_r", d_r.ptr()}, {"d_p", d_p.ptr()}};
}

namespace {

Networks seeded_networks(const TrainConfig& cfg) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  return Networks(cfg.model);
}

std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, double lr, const TrainConfig& cfg) {
  return std::make_unique<torch::optim::Adam>(std::move(params),
                                              torch::optim::AdamOptions(lr).betas({cfg.beta1, cfg.beta2}));
}

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).item<double>(); }

}  // namespace

TrainState::TrainState(const TrainConfig& cfg)
    : nets(seeded_networks(cfg)), backbone(FeatureExtractor::from_config(cfg.perceptual)) {
  opt_shared = make_adam(nets.ssrml->parameters(), cfg.shared_lr(), cfg);
  opt_g_s = make_adam(nets.g_s->parameters(), cfg.lr_super, cfg);
  opt_g_r = make_adam(concat(nets.g_r->parameters(), nets.g_r_prime->parameters()), cfg.lr_unsup, cfg);
  opt_d_s = make_adam(nets.d_s->parameters(), cfg.lr_super, cfg);
  opt_d_r = make_adam(nets.d_r->parameters(), cfg.lr_unsup, cfg);
  opt_d_p = make_adam(nets.d_p->parameters(), cfg.lr_super, cfg);
}

std::vector<std::pair<std::string, torch::optim::Adam*>> TrainState::optimizers() const {
  return {{"opt_shared", opt_shared.get()}, {"opt_g_s", opt_g_s.get()}, {"opt_g_r", opt_g_r.get()},
          {"opt_d_s", opt_d_s.get()},       {"opt_d_r", opt_d_r.get()}, {"opt_d_p", opt_d_p.get()}};
}

void TrainState::apply_learning_rates(int64_t e, const TrainConfig& cfg) {
  set_lr(*opt_shared, lr_schedule(e, cfg.shared_lr(), cfg));
  set_lr(*opt_g_s, lr_schedule(e, cfg.lr_super, cfg));
  set_lr(*opt_d_s, lr_schedule(e, cfg.lr_super, cfg));
  set_lr(*opt_d_p, lr_schedule(e, cfg.lr_super, cfg));
  set_lr(*opt_g_r, lr_schedule(e, cfg.lr_unsup, cfg));
  set_lr(*opt_d_r, lr_schedule(e, cfg.lr_unsup, cfg));
}

// ---------------------------------------------------------------------------

namespace {

const UnpairedBatch& require_unpaired(const MixedBatch& batch) {
  if (!batch.unpaired) throw DatasetError("unpaired batch missing while ablations.use_unsupervised is true");
  return *batch.unpaired;
}

}  // namespace

GeneratorLosses generator_losses(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg) {
  auto& n = state.nets;
  const auto& w = cfg.weights;
  const auto& x_s = batch.rainy;
  const auto& y_s = batch.clean;
  auto zero = torch::zeros({}, x_s.options());

  GeneratorLosses L;
  auto y_s_fake = n.derain_synthetic(x_s);
  auto adv_single = gen_adv_loss(n.d_s->forward(y_s_fake));
  L.adv_pair = cfg.ablations.use_paired_disc ? gen_adv_loss(n.d_p->forward(x_s, y_s_fake)) : zero;
  L.adv_super = adv_single + L.adv_pair;
  L.per_super = cfg.ablations.use_perceptual ? perceptual_loss(state.backbone, y_s, y_s_fake) : zero;
  L.ssim = ssim_loss(y_s, y_s_fake);
  L.super_total = supervised_loss<torch::Tensor>({L.adv_super, L.per_super, L.ssim}, w);

  if (!cfg.ablations.use_unsupervised) {
    L.total = L.super_total;
    return L;
  }
  const auto& real = require_unpaired(batch);
  const auto& x_r = real.rainy;
  auto y_r_fake = n.derain_real(x_r);
  auto x_r_cycle = n.reconstruct(y_r_fake);
  L.adv_unsup = gen_adv_loss(n.d_r->forward(y_r_fake));
  L.cc = cycle_loss(x_r, x_r_cycle);
  L.per_unsup = cfg.ablations.use_perceptual ? perceptual_loss(state.backbone, x_r, y_r_fake) : zero;
  L.tv = cfg.ablations.use_tv ? tv_loss(y_r_fake) : zero;
  L.unsup_total = unsupervised_loss<torch::Tensor>({*L.adv_unsup, *L.cc, *L.per_unsup, *L.tv}, w);
  L.total = total_loss(L.super_total, *L.unsup_total, w);
  return L;
}

void discriminator_phase(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg, LossBreakdown& out) {
  auto& n = state.nets;
  const bool unsup = cfg.ablations.use_unsupervised;
  const bool paired = cfg.ablations.use_paired_disc;
  torch::Tensor fake_s;
  torch::Tensor fake_r;
  {
    torch::NoGradGuard no_grad;
    fake_s = n.derain_synthetic(batch.rainy);
    if (unsup) fake_r = n.derain_real(require_unpaired(batch).rainy);
  }

  auto loss_s = disc_loss(n.d_s->forward(batch.clean), n.d_s->forward(fake_s));
  detail::require_finite(loss_s, "d_s");
  auto total = loss_s;
  torch::Tensor loss_p;
  torch::Tensor loss_r;
  if (paired) {
    loss_p = disc_loss(n.d_p->forward(batch.rainy, batch.clean), n.d_p->forward(batch.rainy, fake_s));
    detail::require_finite(loss_p, "d_p");
    total = total + loss_p;
  }
  if (unsup) {
    const auto& real = require_unpaired(batch);
    loss_r = disc_loss(n.d_r->forward(real.fake_label), n.d_r->forward(fake_r));
    detail::require_finite(loss_r, "d_r");
    total = total + loss_r;
  }

  state.opt_d_s->zero_grad();
  state.opt_d_p->zero_grad();
  state.opt_d_r->zero_grad();
  total.backward();
  state.opt_d_s->step();
  if (paired) state.opt_d_p->step();
  if (unsup) state.opt_d_r->step();

  out.d_s = scalar(loss_s);
  out.d_p = paired ? scalar(loss_p) : 0.0;
  out.d_r = unsup ? scalar(loss_r) : 0.0;
}

void generator_phase(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg, LossBreakdown& out) {
  auto L = generator_losses(state, batch, cfg);
  detail::require_finite(L.total, "total");

  state.opt_shared->zero_grad();
  state.opt_g_s->zero_grad();
  state.opt_g_r->zero_grad();
  L.total.backward();
  state.opt_shared->step();
  state.opt_g_s->step();
  if (cfg.ablations.use_unsupervised) state.opt_g_r->step();

  out.adv_super = scalar(L.adv_super);
  out.adv_pair = scalar(L.adv_pair);
  out.per_super = scalar(L.per_super);
  out.ssim = scalar(L.ssim);
  out.super_total = scalar(L.super_total);
  if (cfg.ablations.use_unsupervised) {
    out.adv_unsup = scalar(*L.adv_unsup);
    out.cc = scalar(*L.cc);
    out.per_unsup = scalar(*L.per_unsup);
    out.tv = scalar(*L.tv);
    out.unsup_total = scalar(*L.unsup_total);
  } else {
    out.adv_unsup = out.cc = out.per_unsup = out.tv = out.unsup_total = 0.0;
  }
  out.total = scalar(L.total);
}

void require_finite_parameters(const TrainState& state) {
  for (const auto& [module_name, module] : state.nets.modules()) {
    for (const auto& p : module->named_parameters()) {
      if (!torch::isfinite(p.value()).all().item<bool>()) {
        throw NonFiniteError(module_name + "." + p.key(), "parameter after update");
      }
    }
  }
}

LossBreakdown train_step(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg) {
  LossBreakdown out;
  for (int64_t k = 0; k < cfg.disc_updates_per_step; ++k) discriminator_phase(state, batch, cfg, out);
  generator_phase(state, batch, cfg, out);
  ++state.global_step;
  require_finite_parameters(state);
  return out;
}

SharedGradients shared_learner_gradients(TrainState& state, const MixedBatch& batch, const TrainConfig& cfg) {
  auto params = state.nets.ssrml->parameters();
  auto L = generator_losses(state, batch, cfg);
  auto grads = [&](const torch::Tensor& objective, bool retain) {
    auto g = torch::autograd::grad({objective}, params, {}, retain, false, /*allow_unused=*/true);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g[i].defined()) g[i] = torch::zeros_like(params[i]);
    }
    return g;
  };
  SharedGradients out;
  out.supervised = grads(L.super_total, true);
  if (L.unsup_total) {
    out.unsupervised = grads(cfg.weights.unsup * *L.unsup_total, true);
  } else {
    for (const auto& p : params) out.unsupervised.push_back(torch::zeros_like(p));
  }
  out.combined = grads(L.total, false);
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json log_record(int64_t step, int64_t epoch, const LossBreakdown& b, const LossWeights& w) {
  nlohmann::json j = b;
  j["step"] = step;
  j["epoch"] = epoch;
  j["weights"] = w;
  return j;
}

namespace {

void dump_samples(Networks& nets, const std::vector<PairedSample>& samples, const fs::path& dir) {
  torch::NoGradGuard no_grad;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& x = samples[i].rainy().data();
    auto derained = nets.derain_synthetic(x.unsqueeze(0)).squeeze(0);
    auto panel = torch::cat({x, derained, samples[i].clean().data()}, 2);
    save_png(panel, dir / (std::to_string(i) + ".png"));
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const fs::path& paired_root, const fs::path& unpaired_root,
                  const fs::path& out_dir, const StepObserver& observer) {
  cfg.validate();
  const auto min_side = min_discriminator_input(cfg.model.disc_scales, cfg.model.disc_layers_per_scale);
  if (cfg.patch < min_side) {
    throw ConfigError("train.patch " + std::to_string(cfg.patch) + " is below the discriminator minimum " +
                      std::to_string(min_side));
  }

  // All data errors surface before any training starts.
  auto paired_full = load_paired_dataset(paired_root);
  if (paired_full.empty()) throw DatasetError("no paired samples in " + paired_root.string());
  std::vector<UnpairedSample> unpaired_patches;
  if (cfg.ablations.use_unsupervised) {
    if (unpaired_root.empty()) throw DatasetError("unpaired_root is required when ablations.use_unsupervised is true");
    std::vector<ImageTensor> pool;
    for (const auto& s : paired_full) pool.push_back(s.clean());
    auto unpaired_full = load_unpaired_dataset(unpaired_root, pool, cfg.seed);
    unpaired_patches = extract_unpaired_patches(unpaired_full, cfg.patch, cfg.stride);
    if (unpaired_patches.empty()) throw DatasetError("no unpaired patches of size " + std::to_string(cfg.patch));
  }
  auto paired_patches = extract_paired_patches(paired_full, cfg.patch, cfg.stride);
  if (paired_patches.empty()) throw DatasetError("no paired patches of size " + std::to_string(cfg.patch));
  std::vector<PairedSample> preview(paired_patches.begin(),
                                    paired_patches.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, paired_patches.size())));
  MixedLoader loader(std::move(paired_patches), std::move(unpaired_patches), cfg.batch_size, cfg.seed);

  fs::create_directories(out_dir / "checkpoints");
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw DatasetError("cannot write " + (out_dir / "train_log.jsonl").string());

  TrainState state(cfg);
  TrainResult result;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    state.apply_learning_rates(epoch, cfg);
    for (const auto& batch : loader.next_epoch()) {
      try {
        auto b = train_step(state, batch, cfg);
        log << log_record(state.global_step, epoch, b, cfg.weights).dump() << "\n";
        result.history.push_back(b);
        if (observer) observer(state, b);
      } catch (const NonFiniteError& e) {
        ++state.global_step;
        ++result.aborted_steps;
        std::cerr << "warning: step " << state.global_step << " aborted: " << e.what() << "\n";
        log << nlohmann::json{{"step", state.global_step}, {"epoch", epoch}, {"aborted", e.term()}}.dump() << "\n";
      }
    }
    log.flush();
    state.epoch = epoch + 1;
    state.loader_state = loader.state();
    if ((epoch + 1) % cfg.checkpoint_every == 0) {
      const auto tag = "epoch_" + std::to_string(epoch + 1);
      save_checkpoint(state, cfg, out_dir / "checkpoints" / (tag + ".ckpt"));
      dump_samples(state.nets, preview, out_dir / "samples" / tag);
    }
  }
  result.final_checkpoint = out_dir / "checkpoints" / "final.ckpt";
  save_checkpoint(state, cfg, result.final_checkpoint);
  return result;
}

}  // namespace semiderain
