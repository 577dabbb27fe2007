#include "semiderain/losses.hpp"

#include <algorithm>

namespace F = torch::nn::functional;

namespace semiderain {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {{"adv_super", adv_super}, {"per_super", per_super},
                                                {"ssim", ssim},           {"adv_unsup", adv_unsup},
                                                {"cc", cc},               {"per_unsup", per_unsup},
                                                {"tv", tv},               {"unsup", unsup}};
  for (auto [name, v] : all) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("weights.") + name + " must be finite and >= 0");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"adv_super", w.adv_super}, {"per_super", w.per_super}, {"ssim", w.ssim},
                     {"adv_unsup", w.adv_unsup}, {"cc", w.cc},               {"per_unsup", w.per_unsup},
                     {"tv", w.tv},               {"unsup", w.unsup}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  const nlohmann::json defaults = w;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("weights: unknown key '" + key + "'");
  }
  w.adv_super = j.value("adv_super", w.adv_super);
  w.per_super = j.value("per_super", w.per_super);
  w.ssim = j.value("ssim", w.ssim);
  w.adv_unsup = j.value("adv_unsup", w.adv_unsup);
  w.cc = j.value("cc", w.cc);
  w.per_unsup = j.value("per_unsup", w.per_unsup);
  w.tv = j.value("tv", w.tv);
  w.unsup = j.value("unsup", w.unsup);
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json{{"total", b.total},         {"super_total", b.super_total}, {"unsup_total", b.unsup_total},
                     {"adv_super", b.adv_super}, {"adv_pair", b.adv_pair},       {"per_super", b.per_super},
                     {"ssim", b.ssim},           {"adv_unsup", b.adv_unsup},     {"cc", b.cc},
                     {"per_unsup", b.per_unsup}, {"tv", b.tv},                   {"d_s", b.d_s},
                     {"d_r", b.d_r},             {"d_p", b.d_p}};
}

void from_json(const nlohmann::json& j, LossBreakdown& b) {
  b.total = j.at("total").get<double>();
  b.super_total = j.at("super_total").get<double>();
  b.unsup_total = j.at("unsup_total").get<double>();
  b.adv_super = j.at("adv_super").get<double>();
  b.adv_pair = j.at("adv_pair").get<double>();
  b.per_super = j.at("per_super").get<double>();
  b.ssim = j.at("ssim").get<double>();
  b.adv_unsup = j.at("adv_unsup").get<double>();
  b.cc = j.at("cc").get<double>();
  b.per_unsup = j.at("per_unsup").get<double>();
  b.tv = j.at("tv").get<double>();
  b.d_s = j.at("d_s").get<double>();
  b.d_r = j.at("d_r").get<double>();
  b.d_p = j.at("d_p").get<double>();
}

namespace {

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(who) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

torch::Tensor to_luma(const torch::Tensor& x) {
  auto coeffs = torch::tensor({0.299, 0.587, 0.114}, x.options()).view({1, 3, 1, 1});
  return (x * coeffs).sum(1, /*keepdim=*/true);
}

}  // namespace

torch::Tensor gaussian_window(int64_t size, double sigma, torch::ScalarType dtype) {
  auto coords = torch::arange(size, torch::TensorOptions().dtype(dtype)) - static_cast<double>(size - 1) / 2.0;
  auto g = torch::exp(-coords.square() / (2.0 * sigma * sigma));
  return g / g.sum();
}

torch::Tensor ssim_per_image(const torch::Tensor& x_in, const torch::Tensor& y_in, const SsimOptions& opts) {
  require_same(x_in, y_in, "ssim");
  if (x_in.dim() != 4) throw ShapeError("ssim expects [B,C,H,W]");
  auto x = x_in;
  auto y = y_in;
  if (opts.luminance_only && x.size(1) == 3) {
    x = to_luma(x);
    y = to_luma(y);
  }
  const auto channels = x.size(1);
  const auto win = std::min({opts.window, x.size(2), x.size(3)});
  auto g = gaussian_window(win, opts.sigma, x.scalar_type());
  auto kernel = torch::outer(g, g).expand({channels, 1, win, win}).contiguous();
  auto filter = [&](const torch::Tensor& t) {
    return F::conv2d(t, kernel, F::Conv2dFuncOptions().groups(channels));
  };

  const double c1 = opts.k1 * opts.k1;
  const double c2 = opts.k2 * opts.k2;
  auto mu_x = filter(x);
  auto mu_y = filter(y);
  auto mu_xx = mu_x * mu_x;
  auto mu_yy = mu_y * mu_y;
  auto mu_xy = mu_x * mu_y;
  auto var_x = filter(x * x) - mu_xx;
  auto var_y = filter(y * y) - mu_yy;
  auto cov = filter(x * y) - mu_xy;
  auto map = ((2.0 * mu_xy + c1) * (2.0 * cov + c2)) / ((mu_xx + mu_yy + c1) * (var_x + var_y + c2));
  return map.flatten(1).mean(1);
}

double ssim(const ImageTensor& x, const ImageTensor& y, const SsimOptions& opts) {
  if (!x.same_shape(y)) throw ShapeError("ssim: image shapes differ");
  auto xd = x.data().to(torch::kFloat64).unsqueeze(0);
  auto yd = y.data().to(torch::kFloat64).unsqueeze(0);
  return ssim_per_image(xd, yd, opts).item<double>();
}

torch::Tensor ssim_loss(const torch::Tensor& y_s, const torch::Tensor& y_tilde) {
  return -ssim_per_image(y_s, y_tilde).mean();
}

torch::Tensor perceptual_loss(const FeatureExtractor& backbone, const torch::Tensor& a, const torch::Tensor& b) {
  require_same(a, b, "perceptual_loss");
  return (backbone(a) - backbone(b)).square().mean();
}

torch::Tensor cycle_loss(const torch::Tensor& x_r, const torch::Tensor& x_tilde) {
  require_same(x_r, x_tilde, "cycle_loss");
  return (x_r - x_tilde).abs().mean();
}

torch::Tensor tv_loss(const torch::Tensor& y) {
  if (y.dim() != 4) throw ShapeError("tv_loss expects [B,C,H,W]");
  auto dv = (y.slice(2, 1) - y.slice(2, 0, -1)).abs().sum({1, 2, 3});
  auto dh = (y.slice(3, 1) - y.slice(3, 0, -1)).abs().sum({1, 2, 3});
  const double per_image = static_cast<double>(y.size(1) * y.size(2) * y.size(3));
  return ((dv + dh) / per_image).mean();
}

torch::Tensor disc_loss(const DiscScores& real, const DiscScores& fake) {
  if (real.per_scale.size() != fake.per_scale.size() || real.per_scale.empty()) {
    throw ShapeError("disc_loss: scale counts differ (" + std::to_string(real.per_scale.size()) + " vs " +
                     std::to_string(fake.per_scale.size()) + ")");
  }
  torch::Tensor sum;
  for (std::size_t s = 0; s < real.per_scale.size(); ++s) {
    auto r = real.per_scale[s].clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
    auto f = fake.per_scale[s].clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
    auto term = -torch::log(r).mean() - torch::log(1.0 - f).mean();
    sum = s == 0 ? term : sum + term;
  }
  return sum / static_cast<double>(real.per_scale.size());
}

torch::Tensor gen_adv_loss(const DiscScores& fake) {
  if (fake.per_scale.empty()) throw ShapeError("gen_adv_loss: no score maps");
  torch::Tensor sum;
  for (std::size_t s = 0; s < fake.per_scale.size(); ++s) {
    auto term = -torch::log(fake.per_scale[s].clamp(kScoreEpsilon, 1.0 - kScoreEpsilon)).mean();
    sum = s == 0 ? term : sum + term;
  }
  return sum / static_cast<double>(fake.per_scale.size());
}

}  // namespace semiderain
