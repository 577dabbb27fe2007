#include "semiderain/toy_rain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "semiderain/data.hpp"
#include "semiderain/error.hpp"

namespace fs = std::filesystem;

namespace semiderain {

namespace {

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw ConfigError(std::string("toy rain: ") + name + " has lo > hi");
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = ax + t * dx - px;
  const double qy = ay + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

double draw(std::mt19937_64& rng, const Range& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

std::string numbered(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld.png", static_cast<long long>(i));
  return buf;
}

}  // namespace

void ToyRainConfig::validate() const {
  if (image_size < 1) throw ConfigError("toy rain: image_size must be >= 1");
  if (streak_count < 0) throw ConfigError("toy rain: streak_count must be >= 0");
  check_range(angle_deg, "angle_deg");
  check_range(length, "length");
  check_range(intensity, "intensity");
  if (length.lo < 0.0) throw ConfigError("toy rain: length must be >= 0");
  if (intensity.lo < 0.0 || intensity.hi > 1.0) throw ConfigError("toy rain: intensity must lie in [0,1]");
}

void to_json(nlohmann::json& j, const ToyRainConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"streak_count", c.streak_count},
                     {"angle_deg", {c.angle_deg.lo, c.angle_deg.hi}},
                     {"length", {c.length.lo, c.length.hi}},
                     {"intensity", {c.intensity.lo, c.intensity.hi}},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ToyRainConfig& c) {
  auto range = [&](const char* key, Range& r) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("toy rain: '") + key + "' must be [lo, hi]");
    r = {v[0].get<double>(), v[1].get<double>()};
  };
  for (const auto& [key, _] : j.items()) {
    if (key != "image_size" && key != "streak_count" && key != "angle_deg" && key != "length" && key != "intensity" &&
        key != "seed") {
      throw ConfigError("toy rain: unknown key '" + key + "'");
    }
  }
  c.image_size = j.value("image_size", c.image_size);
  c.streak_count = j.value("streak_count", c.streak_count);
  range("angle_deg", c.angle_deg);
  range("length", c.length);
  range("intensity", c.intensity);
  c.seed = j.value("seed", c.seed);
}

ToyRain generate_toy_rain(const ToyRainConfig& cfg, const ImageTensor& clean) {
  cfg.validate();
  if (clean.channels() != 3) throw ShapeError("generate_toy_rain expects a 3-channel clean image");
  const int64_t h = clean.height();
  const int64_t w = clean.width();
  std::vector<float> mask(static_cast<std::size_t>(h * w), 0.0f);
  std::mt19937_64 rng(cfg.seed);

  for (int64_t k = 0; k < cfg.streak_count; ++k) {
    const double cx = std::uniform_real_distribution<double>(0.0, static_cast<double>(w))(rng);
    const double cy = std::uniform_real_distribution<double>(0.0, static_cast<double>(h))(rng);
    const double angle = draw(rng, cfg.angle_deg) * std::numbers::pi / 180.0;
    const double half = 0.5 * draw(rng, cfg.length);
    const double value = draw(rng, cfg.intensity);
    const double ux = std::sin(angle);
    const double uy = std::cos(angle);
    const double ax = cx - ux * half;
    const double ay = cy - uy * half;
    const double bx = cx + ux * half;
    const double by = cy + uy * half;

    const auto x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(ax, bx) - 1.5)));
    const auto x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(std::max(ax, bx) + 1.5)));
    const auto y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(ay, by) - 1.5)));
    const auto y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(std::max(ay, by) + 1.5)));
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const double d = segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
        if (d >= 1.0) continue;
        auto& m = mask[static_cast<std::size_t>(y * w + x)];
        m = static_cast<float>(std::min(1.0, m + value * (1.0 - d)));
      }
    }
  }

  auto streaks = torch::from_blob(mask.data(), {1, h, w}, torch::kFloat32).clone();
  auto rainy = (clean.data() + streaks).clamp(0.0, 1.0);
  return {ImageTensor(rainy), RainMask(streaks)};
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
  // splitmix64 finalizer over a simple combination
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ImageTensor generate_toy_clean(int64_t size, uint64_t seed) {
  if (size < 1) throw ConfigError("toy clean image size must be >= 1");
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto s = static_cast<double>(size);

  auto coords = torch::arange(size, torch::kFloat64).add(0.5);
  auto yy = coords.view({size, 1}).expand({size, size});
  auto xx = coords.view({1, size}).expand({size, size});

  std::vector<torch::Tensor> planes;
  std::vector<double> base(3);
  for (auto& b : base) b = uni(0.2, 0.55);
  const double gx = uni(-0.2, 0.2);
  const double gy = uni(-0.2, 0.2);
  for (int c = 0; c < 3; ++c) planes.push_back(base[c] + gx * (xx / s - 0.5) + gy * (yy / s - 0.5));
  auto img = torch::stack(planes);

  const int blobs = static_cast<int>(uni(3.0, 6.0));
  for (int k = 0; k < blobs; ++k) {
    const double cx = uni(0.0, s);
    const double cy = uni(0.0, s);
    const double sigma = uni(0.06, 0.22) * s;
    auto g = torch::exp(-((xx - cx).square() + (yy - cy).square()) / (2.0 * sigma * sigma));
    for (int c = 0; c < 3; ++c) img[c] += uni(-0.25, 0.25) * g;
  }

  const int boxes = 2;
  for (int k = 0; k < boxes; ++k) {
    const double x0 = uni(0.0, 0.7 * s);
    const double y0 = uni(0.0, 0.7 * s);
    const double x1 = x0 + uni(0.15, 0.35) * s;
    const double y1 = y0 + uni(0.15, 0.35) * s;
    auto inside = torch::sigmoid((xx - x0) * 1.5) * torch::sigmoid((x1 - xx) * 1.5) * torch::sigmoid((yy - y0) * 1.5) *
                  torch::sigmoid((y1 - yy) * 1.5);
    for (int c = 0; c < 3; ++c) img[c] += uni(-0.2, 0.2) * inside;
  }

  // Fine texture: two oriented gratings, each confined to a soft disc.
  for (int k = 0; k < 2; ++k) {
    const double theta = uni(0.0, 3.14159265358979);
    const double period = uni(4.0, 10.0);
    const double cx = uni(0.2 * s, 0.8 * s);
    const double cy = uni(0.2 * s, 0.8 * s);
    const double radius = uni(0.25, 0.45) * s;
    auto phase = (xx * std::cos(theta) + yy * std::sin(theta)) * (2.0 * 3.14159265358979 / period);
    auto region = torch::sigmoid((radius - ((xx - cx).square() + (yy - cy).square()).sqrt()) * 0.5);
    const double amp = uni(0.06, 0.14);
    for (int c = 0; c < 3; ++c) img[c] += amp * uni(0.6, 1.0) * torch::sin(phase) * region;
  }
  return ImageTensor(img.clamp(0.05, 0.85).to(torch::kFloat32));
}

void to_json(nlohmann::json& j, const ToyDatasetOptions& o) {
  j = nlohmann::json{{"count", o.count},         {"real_count", o.real_count}, {"size", o.size},
                     {"seed", o.seed},           {"domain_gap", o.domain_gap}, {"synthetic", o.synthetic},
                     {"real", o.real}};
}

void write_toy_dataset(const ToyDatasetOptions& options) {
  if (options.count < 0 || options.real_count < 0) throw ConfigError("toy dataset counts must be >= 0");
  options.synthetic.validate();
  options.real.validate();
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec || !fs::is_directory(options.out_dir)) {
    throw DatasetError("cannot create output directory " + options.out_dir.string());
  }
  const auto paired = options.out_dir / "paired";
  // Overwrite semantics: stale files from an earlier, larger run must not survive.
  fs::remove_all(paired);
  fs::remove_all(options.out_dir / "real");
  fs::create_directories(paired / "rain");
  fs::create_directories(paired / "clean");

  for (int64_t i = 0; i < options.count; ++i) {
    auto clean = generate_toy_clean(options.size, mix_seed(options.seed, static_cast<uint64_t>(i), 1));
    auto cfg = options.synthetic;
    cfg.image_size = options.size;
    cfg.seed = mix_seed(options.seed, static_cast<uint64_t>(i), 2);
    auto rain = generate_toy_rain(cfg, clean);
    save_png(rain.rainy.data(), paired / "rain" / numbered(i));
    save_png(clean.data(), paired / "clean" / numbered(i));
  }

  DatasetManifest manifest{"paired", "", options.seed};
  if (options.domain_gap) {
    const auto real = options.out_dir / "real";
    fs::create_directories(real);
    for (int64_t i = 0; i < options.real_count; ++i) {
      auto clean = generate_toy_clean(options.size, mix_seed(options.seed, static_cast<uint64_t>(i), 3));
      auto cfg = options.real;
      cfg.image_size = options.size;
      cfg.seed = mix_seed(options.seed, static_cast<uint64_t>(i), 4);
      save_png(generate_toy_rain(cfg, clean).rainy.data(), real / numbered(i));
    }
    manifest.unpaired_root = "real";
  }

  nlohmann::json config = options;
  std::ofstream out(options.out_dir / "toy_config.json", std::ios::trunc);
  if (!out) throw DatasetError("cannot write toy_config.json in " + options.out_dir.string());
  out << config.dump(2) << "\n";
  write_manifest(manifest, options.out_dir / "manifest.json");
}

}  // namespace semiderain
