#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "semiderain/image.hpp"
#include "semiderain/inference.hpp"
#include "semiderain/losses.hpp"

namespace semiderain {

/// Reported PSNR when the two images are identical.
inline constexpr double kPsnrCapDb = 99.0;

/// 10 log10(1 / MSE) with MAX = 1, computed in double; capped at kPsnrCapDb.
double psnr(const torch::Tensor& x, const torch::Tensor& y);
double psnr(const ImageTensor& x, const ImageTensor& y);

struct ImageMetrics {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  std::string dataset_id;
  std::string checkpoint_id;
  nlohmann::json model_config;  // provenance; null for baselines
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// Fills the means from `per_image`.
MetricsReport summarize(std::vector<ImageMetrics> per_image, std::string dataset_id, std::string checkpoint_id);

struct EvalOptions {
  SsimOptions ssim{};
};

/// Derains every `root/rain` image whole and scores it against `root/clean`.
MetricsReport evaluate_dataset(const Derainer& derainer, const std::filesystem::path& paired_test_root,
                               const EvalOptions& opts = {});
MetricsReport evaluate_dataset(const std::filesystem::path& checkpoint, const std::filesystem::path& paired_test_root,
                               const EvalOptions& opts = {});

/// Scores the rainy inputs themselves against their references.
MetricsReport input_baseline(const std::filesystem::path& paired_test_root, const EvalOptions& opts = {});

void write_report_json(const MetricsReport& report, const std::filesystem::path& path);
/// Columns: name,psnr_db,ssim
void write_report_csv(const MetricsReport& report, const std::filesystem::path& path);

/// "<label>  PSNR <mean> dB  SSIM <mean>"
std::string format_table_row(const std::string& label, const MetricsReport& report);

}  // namespace semiderain
