#include "semiderain/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "semiderain/data.hpp"
#include "semiderain/error.hpp"

namespace fs = std::filesystem;

namespace semiderain {

double psnr(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.sizes() != y.sizes()) {
    throw ShapeError("psnr: shape mismatch " + c10::str(x.sizes()) + " vs " + c10::str(y.sizes()));
  }
  const double mse = (x.to(torch::kFloat64) - y.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

double psnr(const ImageTensor& x, const ImageTensor& y) { return psnr(x.data(), y.data()); }

void to_json(nlohmann::json& j, const MetricsReport& r) {
  auto rows = nlohmann::json::array();
  for (const auto& m : r.per_image) rows.push_back({{"name", m.name}, {"psnr_db", m.psnr_db}, {"ssim", m.ssim}});
  j = nlohmann::json{{"dataset_id", r.dataset_id},     {"checkpoint_id", r.checkpoint_id},
                     {"mean_psnr_db", r.mean_psnr_db}, {"mean_ssim", r.mean_ssim},
                     {"per_image", rows},              {"model_config", r.model_config}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  r.mean_psnr_db = j.at("mean_psnr_db").get<double>();
  r.mean_ssim = j.at("mean_ssim").get<double>();
  r.model_config = j.value("model_config", nlohmann::json());
  r.per_image.clear();
  for (const auto& row : j.at("per_image")) {
    r.per_image.push_back({row.at("name").get<std::string>(), row.at("psnr_db").get<double>(),
                           row.at("ssim").get<double>()});
  }
}

MetricsReport summarize(std::vector<ImageMetrics> per_image, std::string dataset_id, std::string checkpoint_id) {
  MetricsReport r;
  r.per_image = std::move(per_image);
  r.dataset_id = std::move(dataset_id);
  r.checkpoint_id = std::move(checkpoint_id);
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  for (const auto& m : r.per_image) {
    psnr_sum += m.psnr_db;
    ssim_sum += m.ssim;
  }
  if (!r.per_image.empty()) {
    r.mean_psnr_db = psnr_sum / static_cast<double>(r.per_image.size());
    r.mean_ssim = ssim_sum / static_cast<double>(r.per_image.size());
  }
  return r;
}

namespace {

void require_references(const fs::path& root) {
  if (!fs::is_directory(root / "clean")) {
    throw DatasetError("test root " + root.string() + " has no clean/ references; metrics need ground truth");
  }
}

template <class Fn>
MetricsReport score_dataset(const fs::path& root, const EvalOptions& opts, std::string checkpoint_id, Fn&& predict) {
  require_references(root);
  const auto samples = load_paired_dataset(root);
  const auto names = list_images(root / "rain");
  std::vector<ImageMetrics> rows;
  rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto prediction = ImageTensor(predict(samples[i].rainy().data()).clamp(0.0, 1.0));
    rows.push_back({names[i].filename().string(), psnr(prediction, samples[i].clean()),
                    ssim(prediction, samples[i].clean(), opts.ssim)});
  }
  return summarize(std::move(rows), root.string(), std::move(checkpoint_id));
}

}  // namespace

MetricsReport evaluate_dataset(const Derainer& derainer, const fs::path& paired_test_root, const EvalOptions& opts) {
  auto report = score_dataset(paired_test_root, opts, derainer.id(),
                              [&](const torch::Tensor& x) { return derainer.derain(x); });
  report.model_config = derainer.model_config();
  return report;
}

MetricsReport evaluate_dataset(const fs::path& checkpoint, const fs::path& paired_test_root, const EvalOptions& opts) {
  require_references(paired_test_root);
  return evaluate_dataset(Derainer::from_checkpoint(checkpoint), paired_test_root, opts);
}

MetricsReport input_baseline(const fs::path& paired_test_root, const EvalOptions& opts) {
  return score_dataset(paired_test_root, opts, "input", [](const torch::Tensor& x) { return x; });
}

void write_report_json(const MetricsReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write report " + path.string());
  out << nlohmann::json(report).dump(2) << "\n";
}

void write_report_csv(const MetricsReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write report " + path.string());
  out.precision(17);
  out << "name,psnr_db,ssim\n";
  for (const auto& m : report.per_image) out << m.name << "," << m.psnr_db << "," << m.ssim << "\n";
}

std::string format_table_row(const std::string& label, const MetricsReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-10s PSNR %.2f dB  SSIM %.4f", label.c_str(), report.mean_psnr_db,
                report.mean_ssim);
  return buf;
}

}  // namespace semiderain
