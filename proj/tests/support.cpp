#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "semiderain/config.hpp"

namespace fs = std::filesystem;

namespace semiderain::testing {

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  const auto base = fs::temp_directory_path();
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = base / (tag + "_" + std::to_string(rd()) + std::to_string(attempt));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("TempDir: cannot create a directory under " + base.string());
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

torch::Tensor as_double(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).contiguous(); }

std::vector<double> gaussian_taps(int64_t n, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(n));
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

}  // namespace

double ssim_oracle(const torch::Tensor& x_in, const torch::Tensor& y_in, int64_t window, double sigma, double k1,
                   double k2) {
  const auto x = as_double(x_in);
  const auto y = as_double(y_in);
  const auto xa = x.accessor<double, 3>();
  const auto ya = y.accessor<double, 3>();
  const int64_t C = x.size(0), H = x.size(1), W = x.size(2);
  const int64_t n = std::min({window, H, W});
  const auto g = gaussian_taps(n, sigma);
  const double c1 = k1 * k1, c2 = k2 * k2;
  double total = 0.0;
  int64_t count = 0;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i + n <= H; ++i) {
      for (int64_t j = 0; j + n <= W; ++j) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int64_t u = 0; u < n; ++u) {
          for (int64_t v = 0; v < n; ++v) {
            const double w = g[u] * g[v];
            const double a = xa[c][i + u][j + v];
            const double b = ya[c][i + u][j + v];
            mx += w * a;
            my += w * b;
            mxx += w * a * a;
            myy += w * b * b;
            mxy += w * a * b;
          }
        }
        const double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double psnr_oracle(const torch::Tensor& x_in, const torch::Tensor& y_in) {
  const double mse = mse_oracle(x_in, y_in);
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double mse_oracle(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  const auto a = as_double(a_in).flatten();
  const auto b = as_double(b_in).flatten();
  const auto aa = a.accessor<double, 1>();
  const auto ba = b.accessor<double, 1>();
  double sum = 0.0;
  for (int64_t i = 0; i < a.size(0); ++i) sum += (aa[i] - ba[i]) * (aa[i] - ba[i]);
  return sum / static_cast<double>(a.size(0));
}

double l1_oracle(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  const auto a = as_double(a_in).flatten();
  const auto b = as_double(b_in).flatten();
  const auto aa = a.accessor<double, 1>();
  const auto ba = b.accessor<double, 1>();
  double sum = 0.0;
  for (int64_t i = 0; i < a.size(0); ++i) sum += std::abs(aa[i] - ba[i]);
  return sum / static_cast<double>(a.size(0));
}

double tv_oracle(const torch::Tensor& y_in) {
  const auto y = as_double(y_in);
  const auto ya = y.accessor<double, 4>();
  const int64_t B = y.size(0), C = y.size(1), H = y.size(2), W = y.size(3);
  double batch_sum = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
          if (i + 1 < H) s += std::abs(ya[b][c][i + 1][j] - ya[b][c][i][j]);
          if (j + 1 < W) s += std::abs(ya[b][c][i][j + 1] - ya[b][c][i][j]);
        }
      }
    }
    batch_sum += s / static_cast<double>(C * H * W);
  }
  return batch_sum / static_cast<double>(B);
}

namespace {

double clamp_score(double s, double eps) { return std::min(std::max(s, eps), 1.0 - eps); }

template <class F>
double mean_over(const torch::Tensor& t_in, F f) {
  const auto t = as_double(t_in).flatten();
  const auto ta = t.accessor<double, 1>();
  double sum = 0.0;
  for (int64_t i = 0; i < t.size(0); ++i) sum += f(ta[i]);
  return sum / static_cast<double>(t.size(0));
}

}  // namespace

double disc_oracle(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake, double eps) {
  double total = 0.0;
  for (std::size_t k = 0; k < real.size(); ++k) {
    total += mean_over(real[k], [&](double s) { return -std::log(clamp_score(s, eps)); });
    total += mean_over(fake[k], [&](double s) { return -std::log(1.0 - clamp_score(s, eps)); });
  }
  return total / static_cast<double>(real.size());
}

double gen_adv_oracle(const std::vector<torch::Tensor>& fake, double eps) {
  double total = 0.0;
  for (const auto& f : fake) total += mean_over(f, [&](double s) { return -std::log(clamp_score(s, eps)); });
  return total / static_cast<double>(fake.size());
}

torch::Tensor surrogate_features_oracle(const FeatureExtractor& fe, const torch::Tensor& x_in) {
  static const double mean[3] = {0.485, 0.456, 0.406};
  static const double stdev[3] = {0.229, 0.224, 0.225};
  auto cur = as_double(x_in).clone();
  {
    auto a = cur.accessor<double, 4>();
    for (int64_t b = 0; b < cur.size(0); ++b)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < cur.size(2); ++i)
          for (int64_t j = 0; j < cur.size(3); ++j) a[b][c][i][j] = (a[b][c][i][j] - mean[c]) / stdev[c];
  }
  for (const auto& [w_in, b_in] : fe.conv_parameters()) {
    const auto w = as_double(w_in);
    const auto bias = as_double(b_in);
    const auto wa = w.accessor<double, 4>();
    const auto ba = bias.accessor<double, 1>();
    const int64_t B = cur.size(0), Cin = cur.size(1), H = cur.size(2), W = cur.size(3), Cout = w.size(0);
    auto next = torch::zeros({B, Cout, H, W}, torch::kFloat64);
    auto in = cur.accessor<double, 4>();
    auto out = next.accessor<double, 4>();
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t o = 0; o < Cout; ++o) {
        for (int64_t i = 0; i < H; ++i) {
          for (int64_t j = 0; j < W; ++j) {
            double s = ba[o];
            for (int64_t c = 0; c < Cin; ++c) {
              for (int64_t u = 0; u < 3; ++u) {
                for (int64_t v = 0; v < 3; ++v) {
                  const int64_t ii = i + u - 1, jj = j + v - 1;
                  if (ii < 0 || jj < 0 || ii >= H || jj >= W) continue;
                  s += wa[o][c][u][v] * in[b][c][ii][jj];
                }
              }
            }
            out[b][o][i][j] = std::max(0.0, s);
          }
        }
      }
    }
    cur = next;
  }
  return cur;
}

double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                      double h) {
  auto x = x0.detach().clone().to(torch::kFloat64).set_requires_grad(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach().flatten();

  auto base = x0.detach().clone().to(torch::kFloat64).flatten();
  auto numeric = torch::zeros_like(base);
  torch::NoGradGuard no_grad;
  for (int64_t i = 0; i < base.size(0); ++i) {
    auto plus = base.clone();
    auto minus = base.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(plus.view(x0.sizes())).item<double>();
    const double fm = f(minus.view(x0.sizes())).item<double>();
    numeric[i] = (fp - fm) / (2.0 * h);
  }
  const double denom = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-12});
  return (analytic - numeric).norm().item<double>() / denom;
}

uint64_t hash_parameters(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : module.parameters()) {
    const auto t = p.detach().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    const auto n = static_cast<std::size_t>(t.numel()) * t.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

TrainConfig tiny_train_config() {
  auto cfg = desk_train_config();
  cfg.model.ssrml_iterations = 2;
  cfg.epochs = 4;
  cfg.decay_start_epoch = 2;
  cfg.batch_size = 2;
  cfg.checkpoint_every = 2;
  return cfg;
}

MixedBatch random_batch(int64_t batch, int64_t size, bool with_unpaired, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  MixedBatch b;
  b.clean = at::rand({batch, 3, size, size}, gen, torch::kFloat32);
  b.rainy = (b.clean + 0.3 * at::rand({batch, 1, size, size}, gen, torch::kFloat32)).clamp(0, 1);
  if (with_unpaired) {
    UnpairedBatch u;
    u.rainy = at::rand({batch, 3, size, size}, gen, torch::kFloat32);
    u.fake_label = at::rand({batch, 3, size, size}, gen, torch::kFloat32);
    b.unpaired = u;
  }
  return b;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace semiderain::testing
