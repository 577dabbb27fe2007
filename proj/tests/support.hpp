#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "semiderain/data.hpp"
#include "semiderain/networks.hpp"
#include "semiderain/trainer.hpp"

namespace semiderain::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "sd");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// Reference implementations written with plain loops over double accessors.
// None of them call a torch operator on the values being checked.

/// Mean local SSIM over channels and valid window positions, [C,H,W] inputs.
double ssim_oracle(const torch::Tensor& x, const torch::Tensor& y, int64_t window = 11, double sigma = 1.5,
                   double k1 = 0.01, double k2 = 0.03);
double psnr_oracle(const torch::Tensor& x, const torch::Tensor& y);
double l1_oracle(const torch::Tensor& a, const torch::Tensor& b);
/// [B,C,H,W] -> batch mean of (sum |dy| + |dx|) / (C*H*W).
double tv_oracle(const torch::Tensor& y);
double disc_oracle(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake, double eps);
double gen_adv_oracle(const std::vector<torch::Tensor>& fake, double eps);
/// Features of the fixed random surrogate recomputed by direct convolution.
torch::Tensor surrogate_features_oracle(const FeatureExtractor& fe, const torch::Tensor& x);
double mse_oracle(const torch::Tensor& a, const torch::Tensor& b);

/// Norm-wise relative error between the autograd gradient of the scalar f at x
/// and its central finite difference with step h. x must be double.
double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                      double h = 1e-5);

/// FNV-1a over the raw bytes of every parameter of a module.
uint64_t hash_parameters(const torch::nn::Module& module);

/// Small model for training-level tests.
TrainConfig tiny_train_config();

/// Random batch [B,3,size,size]; unpaired part included when `with_unpaired`.
MixedBatch random_batch(int64_t batch, int64_t size, bool with_unpaired, uint64_t seed);

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace semiderain::testing
