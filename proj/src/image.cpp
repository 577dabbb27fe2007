#include "semiderain/image.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "semiderain/error.hpp"

namespace semiderain {

namespace {

void check_unit_range(const torch::Tensor& t, const char* what) {
  if (t.numel() == 0) return;
  auto lo = t.min().item<double>();
  auto hi = t.max().item<double>();
  if (!(lo >= 0.0 && hi <= 1.0)) {
    throw ShapeError(std::string(what) + " values must lie in [0,1], got [" + std::to_string(lo) + ", " +
                     std::to_string(hi) + "]");
  }
}

}  // namespace

ImageTensor::ImageTensor(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 3) throw ShapeError("ImageTensor expects [C,H,W], got dim " + std::to_string(data_.dim()));
  if (data_.size(0) != 1 && data_.size(0) != 3) {
    throw ShapeError("ImageTensor expects 1 or 3 channels, got " + std::to_string(data_.size(0)));
  }
  if (data_.size(1) < 1 || data_.size(2) < 1) throw ShapeError("ImageTensor must be at least 1x1");
  data_ = data_.to(torch::kFloat32).contiguous();
  check_unit_range(data_, "ImageTensor");
}

RainMask::RainMask(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 3 || data_.size(0) != 1) throw ShapeError("RainMask expects [1,H,W]");
  data_ = data_.to(torch::kFloat32).contiguous();
  check_unit_range(data_, "RainMask");
}

ImageTensor load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ImageError("cannot decode image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return ImageTensor(hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0));
}

torch::Tensor quantize_8bit(const torch::Tensor& chw) {
  return chw.clamp(0.0, 1.0).mul(255.0).round().div(255.0);
}

void save_png(const torch::Tensor& chw, const std::filesystem::path& path) {
  if (chw.dim() != 3 || (chw.size(0) != 1 && chw.size(0) != 3)) throw ShapeError("save_png expects [1|3,H,W]");
  auto bytes = chw.detach().to(torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  auto hwc = bytes.permute({1, 2, 0}).contiguous();
  const int rows = static_cast<int>(hwc.size(0));
  const int cols = static_cast<int>(hwc.size(1));
  const int type = chw.size(0) == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat view(rows, cols, type, hwc.data_ptr<uint8_t>());
  cv::Mat out;
  if (chw.size(0) == 3) {
    cv::cvtColor(view, out, cv::COLOR_RGB2BGR);
  } else {
    out = view.clone();
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw ImageError("cannot write image: " + path.string());
}

bool is_image_file(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace semiderain
