#pragma once

#include <cmath>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "semiderain/error.hpp"
#include "semiderain/image.hpp"
#include "semiderain/networks.hpp"

namespace semiderain {

/// Trade-off weights of the supervised, unsupervised and total objectives.
struct LossWeights {
  double adv_super = 1.0;
  double per_super = 1.0;
  double ssim = 1.0;
  double adv_unsup = 1.5e-5;
  double cc = 10.0;
  double per_unsup = 1.0;
  double tv = 100.0;
  double unsup = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Scalars of one training step. `adv_super` already contains `adv_pair`.
struct LossBreakdown {
  double adv_super = 0.0;
  double adv_pair = 0.0;
  double per_super = 0.0;
  double ssim = 0.0;  // the SSIM loss term, i.e. -SSIM
  double super_total = 0.0;
  double adv_unsup = 0.0;
  double cc = 0.0;
  double per_unsup = 0.0;
  double tv = 0.0;
  double unsup_total = 0.0;
  double total = 0.0;
  double d_s = 0.0;
  double d_r = 0.0;
  double d_p = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

void to_json(nlohmann::json& j, const LossBreakdown& b);
void from_json(const nlohmann::json& j, LossBreakdown& b);

struct SsimOptions {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  bool luminance_only = false;  // compare BT.601 luma instead of averaging RGB channels
};

/// Normalized 1-D Gaussian of `size` taps centered at (size - 1) / 2.
torch::Tensor gaussian_window(int64_t size, double sigma, torch::ScalarType dtype = torch::kFloat64);

/// Mean local SSIM per batch item, [B,C,H,W] x2 -> [B]. Filtering is "valid";
/// images smaller than the window use a window of min(H, W) taps.
torch::Tensor ssim_per_image(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opts = {});

/// SSIM of two images, evaluated in double precision.
double ssim(const ImageTensor& x, const ImageTensor& y, const SsimOptions& opts = {});

/// -mean_b SSIM(y_s, y_tilde)
torch::Tensor ssim_loss(const torch::Tensor& y_s, const torch::Tensor& y_tilde);

/// Mean squared difference of frozen features.
torch::Tensor perceptual_loss(const FeatureExtractor& backbone, const torch::Tensor& a, const torch::Tensor& b);

/// Mean absolute difference.
torch::Tensor cycle_loss(const torch::Tensor& x_r, const torch::Tensor& x_tilde);

/// Anisotropic TV: sum over channels of vertical and horizontal absolute
/// differences, divided by C*H*W, averaged over the batch.
torch::Tensor tv_loss(const torch::Tensor& y);

inline constexpr double kScoreEpsilon = 1e-7;

/// Mean over scales of mean(-log D(real) - log(1 - D(fake))), scores clamped to [eps, 1 - eps].
torch::Tensor disc_loss(const DiscScores& real, const DiscScores& fake);

/// Non-saturating generator term: mean over scales of mean(-log D(fake)).
torch::Tensor gen_adv_loss(const DiscScores& fake);

template <class T>
struct SupervisedTerms {
  T adv;   // includes the paired-discriminator term
  T per;
  T ssim;  // SSIM loss (negative similarity)
};

template <class T>
struct UnsupervisedTerms {
  T adv;
  T cc;
  T per;
  T tv;
};

namespace detail {

inline void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NonFiniteError(term, "loss term");
}

inline void require_finite(const torch::Tensor& v, const char* term) {
  if (!torch::isfinite(v.detach()).all().item<bool>()) throw NonFiniteError(term, "loss term");
}

}  // namespace detail

template <class T>
T supervised_loss(const SupervisedTerms<T>& t, const LossWeights& w) {
  detail::require_finite(t.adv, "adv_super");
  detail::require_finite(t.per, "per_super");
  detail::require_finite(t.ssim, "ssim");
  return w.adv_super * t.adv + w.per_super * t.per + w.ssim * t.ssim;
}

template <class T>
T unsupervised_loss(const UnsupervisedTerms<T>& t, const LossWeights& w) {
  detail::require_finite(t.adv, "adv_unsup");
  detail::require_finite(t.cc, "cc");
  detail::require_finite(t.per, "per_unsup");
  detail::require_finite(t.tv, "tv");
  return w.adv_unsup * t.adv + w.cc * t.cc + w.per_unsup * t.per + w.tv * t.tv;
}

template <class T>
T total_loss(const T& super, const T& unsup, const LossWeights& w) {
  detail::require_finite(super, "super_total");
  detail::require_finite(unsup, "unsup_total");
  return super + w.unsup * unsup;
}

}  // namespace semiderain
