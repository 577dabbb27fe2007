#include "semiderain/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "semiderain/error.hpp"

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace semiderain {

PairedSample::PairedSample(ImageTensor rainy, ImageTensor clean) : rainy_(std::move(rainy)), clean_(std::move(clean)) {
  if (!rainy_.same_shape(clean_)) throw ShapeError("paired sample: rainy and clean shapes differ");
}

UnpairedSample::UnpairedSample(ImageTensor rainy, ImageTensor fake_label)
    : rainy_(std::move(rainy)), fake_label_(std::move(fake_label)) {
  if (!rainy_.same_shape(fake_label_)) throw ShapeError("unpaired sample: rainy and fake label shapes differ");
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

std::vector<PairedSample> load_paired_dataset(const fs::path& root) {
  const auto rain_dir = root / "rain";
  const auto clean_dir = root / "clean";
  const auto rain_files = list_images(rain_dir);
  const auto clean_files = list_images(clean_dir);

  std::set<std::string> clean_names;
  for (const auto& f : clean_files) clean_names.insert(f.filename().string());
  std::set<std::string> rain_names;
  for (const auto& f : rain_files) {
    const auto name = f.filename().string();
    rain_names.insert(name);
    if (!clean_names.contains(name)) throw DatasetError("rain/" + name + " has no counterpart clean/" + name);
  }
  for (const auto& name : clean_names) {
    if (!rain_names.contains(name)) throw DatasetError("clean/" + name + " has no counterpart rain/" + name);
  }

  std::vector<PairedSample> samples;
  samples.reserve(rain_files.size());
  for (const auto& f : rain_files) {
    const auto name = f.filename();
    auto rainy = load_image(f);
    auto clean = load_image(clean_dir / name);
    if (!rainy.same_shape(clean)) throw DatasetError("shape mismatch between rain/ and clean/ for " + name.string());
    samples.emplace_back(std::move(rainy), std::move(clean));
  }
  return samples;
}

std::vector<std::pair<std::string, ImageTensor>> load_rain_directory(const fs::path& root) {
  std::vector<std::pair<std::string, ImageTensor>> out;
  for (const auto& f : list_images(root)) out.emplace_back(f.filename().string(), load_image(f));
  return out;
}

std::vector<std::size_t> assign_fake_labels(std::size_t count, std::size_t pool_size, uint64_t seed) {
  if (pool_size == 0) throw DatasetError("clean pool is empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = pick(rng);
  return out;
}

ImageTensor match_shape(const ImageTensor& image, int64_t height, int64_t width) {
  const int64_t h = image.height();
  const int64_t w = image.width();
  if (h == height && w == width) return image;
  // Largest centered window with the target aspect ratio.
  int64_t crop_h = h;
  int64_t crop_w = w;
  if (h * width > w * height) {
    crop_h = std::max<int64_t>(1, (w * height) / width);
  } else {
    crop_w = std::max<int64_t>(1, (h * width) / height);
  }
  const int64_t top = (h - crop_h) / 2;
  const int64_t left = (w - crop_w) / 2;
  auto cropped = image.data().slice(1, top, top + crop_h).slice(2, left, left + crop_w).unsqueeze(0);
  auto resized = F::interpolate(cropped, F::InterpolateFuncOptions()
                                             .size(std::vector<int64_t>{height, width})
                                             .mode(torch::kBilinear)
                                             .align_corners(false)
                                             .antialias(true));
  return ImageTensor(resized.squeeze(0).clamp(0.0, 1.0));
}

std::vector<UnpairedSample> load_unpaired_dataset(const fs::path& rain_root, std::span<const ImageTensor> clean_pool,
                                                  uint64_t seed) {
  if (clean_pool.empty()) throw DatasetError("clean pool for fake labels is empty");
  const auto files = list_images(rain_root);
  if (files.empty()) throw DatasetError("no rainy images in " + rain_root.string());
  const auto picks = assign_fake_labels(files.size(), clean_pool.size(), seed);
  std::vector<UnpairedSample> samples;
  samples.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    auto rainy = load_image(files[i]);
    auto label = match_shape(clean_pool[picks[i]], rainy.height(), rainy.width());
    if (label.channels() != rainy.channels()) {
      throw DatasetError("channel mismatch between " + files[i].filename().string() + " and its fake label");
    }
    samples.emplace_back(std::move(rainy), std::move(label));
  }
  return samples;
}

int64_t patch_count(int64_t dim, int64_t patch, int64_t stride) {
  if (dim < patch) return 0;
  return (dim - patch) / stride + 1;
}

std::vector<ImageTensor> extract_patches(const ImageTensor& image, int64_t patch, int64_t stride) {
  if (patch < 1 || stride < 1) throw ConfigError("patch and stride must be >= 1");
  if (image.height() < patch || image.width() < patch) {
    throw ShapeError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                     " is smaller than patch " + std::to_string(patch));
  }
  const int64_t rows = patch_count(image.height(), patch, stride);
  const int64_t cols = patch_count(image.width(), patch, stride);
  std::vector<ImageTensor> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      const int64_t y = r * stride;
      const int64_t x = c * stride;
      out.emplace_back(image.data().slice(1, y, y + patch).slice(2, x, x + patch).clone());
    }
  }
  return out;
}

namespace {

bool fits(const ImageTensor& image, int64_t patch) { return image.height() >= patch && image.width() >= patch; }

void warn_skip(std::size_t index, const ImageTensor& image, int64_t patch) {
  std::cerr << "warning: skipping sample " << index << " (" << image.height() << "x" << image.width()
            << ") smaller than patch " << patch << "\n";
}

}  // namespace

std::vector<PairedSample> extract_paired_patches(std::span<const PairedSample> samples, int64_t patch,
                                                 int64_t stride) {
  std::vector<PairedSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!fits(samples[i].rainy(), patch)) {
      warn_skip(i, samples[i].rainy(), patch);
      continue;
    }
    auto rainy = extract_patches(samples[i].rainy(), patch, stride);
    auto clean = extract_patches(samples[i].clean(), patch, stride);
    for (std::size_t k = 0; k < rainy.size(); ++k) out.emplace_back(std::move(rainy[k]), std::move(clean[k]));
  }
  return out;
}

std::vector<UnpairedSample> extract_unpaired_patches(std::span<const UnpairedSample> samples, int64_t patch,
                                                     int64_t stride) {
  std::vector<UnpairedSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!fits(samples[i].rainy(), patch)) {
      warn_skip(i, samples[i].rainy(), patch);
      continue;
    }
    auto rainy = extract_patches(samples[i].rainy(), patch, stride);
    auto label = extract_patches(samples[i].fake_label(), patch, stride);
    for (std::size_t k = 0; k < rainy.size(); ++k) out.emplace_back(std::move(rainy[k]), std::move(label[k]));
  }
  return out;
}

MixedLoader::MixedLoader(std::vector<PairedSample> paired, std::vector<UnpairedSample> unpaired, int64_t batch_size,
                         uint64_t seed)
    : paired_(std::move(paired)), unpaired_(std::move(unpaired)), batch_size_(batch_size), rng_(seed) {
  if (paired_.empty()) throw DatasetError("paired stream is empty; the supervised process needs data");
  if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
  for (std::size_t i = 1; i < paired_.size(); ++i) {
    if (!paired_[i].rainy().same_shape(paired_[0].rainy())) throw ShapeError("paired samples differ in shape");
  }
  for (const auto& u : unpaired_) {
    if (!u.rainy().same_shape(paired_[0].rainy())) throw ShapeError("unpaired samples differ in shape from paired");
  }
}

std::size_t MixedLoader::steps_per_epoch() const {
  const auto b = static_cast<std::size_t>(batch_size_);
  return (paired_.size() + b - 1) / b;
}

std::size_t MixedLoader::next_unpaired() {
  if (unpaired_cursor_ >= unpaired_order_.size()) {
    unpaired_order_.resize(unpaired_.size());
    std::iota(unpaired_order_.begin(), unpaired_order_.end(), std::size_t{0});
    std::shuffle(unpaired_order_.begin(), unpaired_order_.end(), rng_);
    unpaired_cursor_ = 0;
  }
  return unpaired_order_[unpaired_cursor_++];
}

std::vector<MixedLoader::StepIndices> MixedLoader::next_epoch_indices() {
  std::vector<std::size_t> order(paired_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);

  std::vector<StepIndices> steps;
  const auto b = static_cast<std::size_t>(batch_size_);
  for (std::size_t start = 0; start < order.size(); start += b) {
    StepIndices step;
    const auto end = std::min(order.size(), start + b);
    step.paired.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
    if (!unpaired_.empty()) {
      for (std::size_t k = start; k < end; ++k) step.unpaired.push_back(next_unpaired());
    }
    steps.push_back(std::move(step));
  }
  return steps;
}

MixedBatch MixedLoader::make_batch(const StepIndices& step) const {
  std::vector<torch::Tensor> rainy;
  std::vector<torch::Tensor> clean;
  for (auto i : step.paired) {
    rainy.push_back(paired_.at(i).rainy().data());
    clean.push_back(paired_.at(i).clean().data());
  }
  MixedBatch batch{torch::stack(rainy), torch::stack(clean), std::nullopt};
  if (!step.unpaired.empty()) {
    std::vector<torch::Tensor> real;
    std::vector<torch::Tensor> label;
    for (auto i : step.unpaired) {
      real.push_back(unpaired_.at(i).rainy().data());
      label.push_back(unpaired_.at(i).fake_label().data());
    }
    batch.unpaired = UnpairedBatch{torch::stack(real), torch::stack(label)};
  }
  return batch;
}

std::vector<MixedBatch> MixedLoader::next_epoch() {
  std::vector<MixedBatch> out;
  for (const auto& step : next_epoch_indices()) out.push_back(make_batch(step));
  return out;
}

std::string MixedLoader::state() const {
  std::ostringstream rng;
  rng << rng_;
  nlohmann::json j{{"rng", rng.str()}, {"order", unpaired_order_}, {"cursor", unpaired_cursor_}};
  return j.dump();
}

void MixedLoader::set_state(const std::string& s) {
  const auto j = nlohmann::json::parse(s);
  std::istringstream rng(j.at("rng").get<std::string>());
  rng >> rng_;
  unpaired_order_ = j.at("order").get<std::vector<std::size_t>>();
  unpaired_cursor_ = j.at("cursor").get<std::size_t>();
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError("manifest " + path.string() + ": " + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "paired_root" && key != "unpaired_root" && key != "seed") {
      throw DatasetError("manifest " + path.string() + ": unknown key '" + key + "'");
    }
  }
  if (!j.contains("paired_root")) throw DatasetError("manifest " + path.string() + ": missing key 'paired_root'");
  DatasetManifest m;
  // Relative roots resolve against the manifest's directory.
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  m.paired_root = resolve(j.at("paired_root").get<std::string>());
  if (j.contains("unpaired_root") && !j.at("unpaired_root").get<std::string>().empty()) {
    m.unpaired_root = resolve(j.at("unpaired_root").get<std::string>());
  }
  m.seed = j.value("seed", uint64_t{0});
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  nlohmann::json j{{"paired_root", manifest.paired_root.string()},
                   {"unpaired_root", manifest.unpaired_root.string()},
                   {"seed", manifest.seed}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace semiderain
