#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>
#include <torch/torch.h>

#include "semiderain/checkpoint.hpp"
#include "semiderain/error.hpp"
#include "semiderain/image.hpp"
#include "semiderain/inference.hpp"
#include "semiderain/metrics.hpp"
#include "support.hpp"

using namespace semiderain;
using semiderain::testing::TempDir;
namespace st = semiderain::testing;
namespace fs = std::filesystem;

namespace {

torch::Tensor rand_t(std::vector<int64_t> shape, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return at::rand(shape, gen, torch::kFloat32);
}

void write_pair(const fs::path& root, const std::string& name, const torch::Tensor& rainy, const torch::Tensor& clean) {
  save_png(rainy, root / "rain" / name);
  save_png(clean, root / "clean" / name);
}

}  // namespace

TEST_SUITE("psnr") {
  TEST_CASE("identical images hit the cap") {
    auto x = rand_t({3, 8, 8}, 1);
    CHECK(psnr(x, x) == 99.0);
  }

  TEST_CASE("MSE 0.01 is 20 dB") {
    CHECK(psnr(torch::zeros({3, 4, 4}), torch::full({3, 4, 4}, 0.1)) == doctest::Approx(20.0).epsilon(1e-6));
  }

  TEST_CASE("random pairs match the direct formula and are symmetric") {
    for (uint64_t s = 0; s < 20; ++s) {
      auto x = rand_t({3, 16, 16}, 2 * s);
      auto y = rand_t({3, 16, 16}, 2 * s + 1);
      CHECK(std::abs(psnr(x, y) - st::psnr_oracle(x, y)) <= 1e-9);
      CHECK(psnr(x, y) == psnr(y, x));
    }
  }

  TEST_CASE("more noise means lower psnr") {
    auto x = rand_t({3, 32, 32}, 7) * 0.5 + 0.25;
    auto noise = rand_t({3, 32, 32}, 8) - 0.5;
    double prev = 1e9;
    for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2, 0.4}) {
      const double p = psnr(x, (x + amp * noise).clamp(0, 1));
      CHECK(p < prev);
      prev = p;
    }
  }

  TEST_CASE("shape mismatch is an error") {
    CHECK_THROWS_AS(psnr(torch::zeros({3, 4, 4}), torch::zeros({3, 4, 5})), ShapeError);
  }
}

TEST_SUITE("evaluation") {
  TEST_CASE("identity stub on clean-vs-clean gives perfect scores") {
    TempDir dir;
    for (int i = 0; i < 3; ++i) {
      auto c = rand_t({3, 20, 28}, i);
      write_pair(dir.path(), "im" + std::to_string(i) + ".png", c, c);
    }
    auto rep = evaluate_dataset(Derainer::identity(), dir.path());
    CHECK(rep.per_image.size() == 3);
    CHECK(rep.mean_psnr_db == 99.0);
    CHECK(rep.mean_ssim == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("means are the averages of the per-image entries") {
    TempDir dir;
    std::vector<double> p, s;
    for (int i = 0; i < 2; ++i) {
      auto c = rand_t({3, 24, 24}, 10 + i);
      auto r = (c + 0.2 * rand_t({3, 24, 24}, 20 + i)).clamp(0, 1);
      write_pair(dir.path(), "p" + std::to_string(i) + ".png", r, c);
      auto rq = load_image(dir.path() / "rain" / ("p" + std::to_string(i) + ".png")).data();
      auto cq = load_image(dir.path() / "clean" / ("p" + std::to_string(i) + ".png")).data();
      p.push_back(st::psnr_oracle(rq, cq));
      s.push_back(st::ssim_oracle(rq, cq));
    }
    auto rep = input_baseline(dir.path());
    REQUIRE(rep.per_image.size() == 2);
    CHECK(std::abs(rep.per_image[0].psnr_db - p[0]) <= 1e-9);
    CHECK(std::abs(rep.per_image[1].ssim - s[1]) <= 1e-6);
    CHECK(std::abs(rep.mean_psnr_db - (p[0] + p[1]) / 2) <= 1e-9);
    CHECK(std::abs(rep.mean_ssim - (rep.per_image[0].ssim + rep.per_image[1].ssim) / 2) <= 1e-12);
  }

  TEST_CASE("baseline with rainy equal to clean hits the cap") {
    TempDir dir;
    auto c = rand_t({3, 16, 16}, 3);
    write_pair(dir.path(), "a.png", c, c);
    CHECK(input_baseline(dir.path()).mean_psnr_db == 99.0);
  }

  TEST_CASE("baseline with an injected MSE of 0.01 reads 20 dB") {
    TempDir dir;
    // Exact 8-bit levels: clean 51/255 and rainy 51/255 + 25.5/255 are not
    // representable, so build the difference from whole levels instead.
    auto clean = torch::full({3, 8, 8}, 100.0 / 255.0);
    auto rainy = torch::full({3, 8, 8}, 125.5 / 255.0);
    // |d| alternates 25 and 26 levels; pick a checkerboard that averages to MSE 0.01.
    auto idx = torch::arange(64).view({8, 8});
    auto diff = torch::where((idx % 2) == 0, torch::full({8, 8}, 25.0), torch::full({8, 8}, 26.0));
    const double mse = (diff / 255.0).square().mean().item<double>();
    rainy = clean + (diff / 255.0).unsqueeze(0).expand({3, 8, 8});
    write_pair(dir.path(), "n.png", rainy, clean);
    const double expected = 10.0 * std::log10(1.0 / mse);
    CHECK(input_baseline(dir.path()).mean_psnr_db == doctest::Approx(expected).epsilon(1e-6));
    CHECK(expected == doctest::Approx(20.0).epsilon(2e-3));
  }

  TEST_CASE("reports recompute from their own per-image lists") {
    TempDir dir;
    for (int i = 0; i < 4; ++i) {
      auto c = rand_t({3, 16, 16}, 40 + i);
      write_pair(dir.path(), "r" + std::to_string(i) + ".png", (c * 0.9).clamp(0, 1), c);
    }
    auto rep = input_baseline(dir.path());
    write_report_json(rep, dir / "report.json");
    write_report_csv(rep, dir / "report.csv");
    std::ifstream in(dir / "report.json");
    auto j = nlohmann::json::parse(in);
    double sp = 0, ss = 0;
    for (const auto& e : j.at("per_image")) {
      sp += e.at("psnr_db").get<double>();
      ss += e.at("ssim").get<double>();
    }
    const auto n = static_cast<double>(j.at("per_image").size());
    CHECK(std::abs(sp / n - j.at("mean_psnr_db").get<double>()) <= 1e-9);
    CHECK(std::abs(ss / n - j.at("mean_ssim").get<double>()) <= 1e-9);
    std::ifstream csv(dir / "report.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "name,psnr_db,ssim");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) rows += line.empty() ? 0 : 1;
    CHECK(rows == 4);
  }

  TEST_CASE("test root without references is rejected") {
    TempDir dir;
    save_png(rand_t({3, 8, 8}, 1), dir.path() / "rain" / "a.png");
    CHECK_THROWS_AS(evaluate_dataset(Derainer::identity(), dir.path()), DatasetError);
  }

  TEST_CASE("identity checkpoint evaluates like the stub and is deterministic") {
    TempDir dir;
    save_identity_checkpoint(dir / "id.ckpt");
    auto c = rand_t({3, 16, 16}, 5);
    write_pair(dir.path() / "set", "a.png", (c * 0.8).clamp(0, 1), c);
    auto a = evaluate_dataset(dir / "id.ckpt", dir.path() / "set");
    auto b = evaluate_dataset(dir / "id.ckpt", dir.path() / "set");
    auto base = input_baseline(dir.path() / "set");
    CHECK(a.mean_psnr_db == base.mean_psnr_db);
    CHECK(a.mean_psnr_db == b.mean_psnr_db);
    CHECK(a.mean_ssim == b.mean_ssim);
  }

  TEST_CASE("table row formatting") {
    MetricsReport r = summarize({{"a", 30.0, 0.9}, {"b", 32.0, 0.95}}, "set", "ckpt");
    CHECK(format_table_row("Model", r).find("PSNR 31.00 dB") != std::string::npos);
    CHECK(format_table_row("Model", r).find("SSIM 0.9250") != std::string::npos);
  }
}
