#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include <torch/torch.h>

#include "semiderain/error.hpp"
#include "semiderain/losses.hpp"
#include "support.hpp"

using namespace semiderain;
namespace st = semiderain::testing;

namespace {

torch::Tensor rand_t(std::vector<int64_t> shape, uint64_t seed, torch::ScalarType dtype = torch::kFloat32) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return at::rand(shape, gen, dtype);
}

DiscScores scores_of(std::vector<torch::Tensor> maps) { return DiscScores{std::move(maps)}; }

DiscScores random_scores(int64_t batch, uint64_t seed) {
  // Three maps of different sizes, kept away from the clamp boundaries.
  return scores_of({rand_t({batch, 1, 3, 3}, seed, torch::kFloat64) * 0.98 + 0.01,
                    rand_t({batch, 1, 2, 2}, seed + 1, torch::kFloat64) * 0.98 + 0.01,
                    rand_t({batch, 1, 1, 1}, seed + 2, torch::kFloat64) * 0.98 + 0.01});
}

}  // namespace

TEST_SUITE("ssim") {
  TEST_CASE("an image is perfectly similar to itself") {
    for (uint64_t s = 0; s < 5; ++s) {
      auto x = rand_t({3, 16, 16}, s);
      CHECK(std::abs(ssim(ImageTensor(x), ImageTensor(x)) - 1.0) <= 1e-9);
    }
  }

  TEST_CASE("constant images follow the luminance closed form") {
    const double expected = (2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
    auto a = ImageTensor(torch::full({3, 16, 16}, 0.5));
    auto b = ImageTensor(torch::full({3, 16, 16}, 0.25));
    CHECK(ssim(a, b) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(expected == doctest::Approx(0.80006).epsilon(1e-5));
  }

  TEST_CASE("symmetric and matches the nested-loop reference") {
    for (uint64_t s = 0; s < 10; ++s) {
      auto x = rand_t({3, 16, 16}, 2 * s);
      auto y = rand_t({3, 16, 16}, 2 * s + 1);
      const double v = ssim(ImageTensor(x), ImageTensor(y));
      CHECK(std::abs(v - ssim(ImageTensor(y), ImageTensor(x))) <= 1e-12);
      CHECK(std::abs(v - st::ssim_oracle(x, y)) <= 1e-6);
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("images smaller than the window use a shrunken window") {
    auto x = rand_t({3, 6, 9}, 1);
    auto y = rand_t({3, 6, 9}, 2);
    CHECK(std::abs(ssim(ImageTensor(x), ImageTensor(y)) - st::ssim_oracle(x, y)) <= 1e-6);
  }

  TEST_CASE("luminance-only mode compares one plane") {
    auto x = rand_t({3, 16, 16}, 1);
    SsimOptions o;
    o.luminance_only = true;
    CHECK(ssim(ImageTensor(x), ImageTensor(x), o) == doctest::Approx(1.0).epsilon(1e-9));
    auto y = rand_t({3, 16, 16}, 2);
    CHECK(ssim(ImageTensor(x), ImageTensor(y), o) != doctest::Approx(ssim(ImageTensor(x), ImageTensor(y))));
  }

  TEST_CASE("shape mismatch is an error") {
    CHECK_THROWS_AS(ssim(ImageTensor(torch::zeros({3, 8, 8})), ImageTensor(torch::zeros({3, 8, 9}))), ShapeError);
  }

  TEST_CASE("ssim loss is the negated batch mean") {
    auto x = rand_t({2, 3, 16, 16}, 1);
    CHECK(ssim_loss(x, x).item<double>() == doctest::Approx(-1.0).epsilon(1e-6));
    auto a = torch::full({2, 3, 16, 16}, 0.5);
    auto b = torch::full({2, 3, 16, 16}, 0.25);
    CHECK(ssim_loss(a, b).item<double>() == doctest::Approx(-0.80006).epsilon(1e-5));
    auto y = rand_t({2, 3, 16, 16}, 2);
    const double v = ssim_loss(x, y).item<double>();
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    const double manual = -(st::ssim_oracle(x[0], y[0]) + st::ssim_oracle(x[1], y[1])) / 2.0;
    CHECK(v == doctest::Approx(manual).epsilon(1e-5));
  }
}

TEST_SUITE("pixel losses") {
  TEST_CASE("cycle loss") {
    auto x = rand_t({4, 3, 8, 8}, 1);
    CHECK(cycle_loss(x, x).item<double>() == 0.0);
    CHECK(cycle_loss(torch::zeros({2, 3, 4, 4}), torch::full({2, 3, 4, 4}, 0.5)).item<double>() == 0.5);
    auto xd = rand_t({4, 3, 8, 8}, 2, torch::kFloat64);
    auto yd = rand_t({4, 3, 8, 8}, 3, torch::kFloat64);
    CHECK(std::abs(cycle_loss(xd, yd).item<double>() - st::l1_oracle(xd, yd)) <= 1e-9);
    CHECK_THROWS_AS(cycle_loss(xd, yd.narrow(3, 0, 4)), ShapeError);
  }

  TEST_CASE("tv loss") {
    CHECK(tv_loss(torch::full({2, 3, 5, 5}, 0.3)).item<double>() == 0.0);
    auto step = torch::tensor({0.0, 1.0, 0.0, 1.0}).view({1, 1, 2, 2});
    CHECK(tv_loss(step).item<double>() == 0.5);
    auto y = rand_t({4, 3, 8, 8}, 4, torch::kFloat64);
    CHECK(std::abs(tv_loss(y).item<double>() - st::tv_oracle(y)) <= 1e-9);
    // Adding a constant leaves the differences unchanged.
    auto half = y * 0.5;
    CHECK(tv_loss(half + 0.25).item<double>() == doctest::Approx(tv_loss(half).item<double>()).epsilon(1e-12));
  }

  TEST_CASE("perceptual loss") {
    auto id = FeatureExtractor::identity();
    auto a = rand_t({4, 3, 8, 8}, 5, torch::kFloat64);
    auto b = rand_t({4, 3, 8, 8}, 6, torch::kFloat64);
    CHECK(perceptual_loss(id, a, a).item<double>() == 0.0);
    CHECK(perceptual_loss(id, a, b).item<double>() == doctest::Approx(st::mse_oracle(a, b)).epsilon(1e-12));
    auto sur = FeatureExtractor::surrogate(1234);
    const double got = perceptual_loss(sur, a, b).item<double>();
    const double want = st::mse_oracle(st::surrogate_features_oracle(sur, a), st::surrogate_features_oracle(sur, b));
    CHECK(std::abs(got - want) <= 1e-6 * std::abs(want));
    CHECK(perceptual_loss(sur, a, a).item<double>() == 0.0);
  }
}

TEST_SUITE("adversarial losses") {
  TEST_CASE("constant scores") {
    auto half = scores_of({torch::full({2, 1, 3, 3}, 0.5), torch::full({2, 1, 2, 2}, 0.5)});
    CHECK(disc_loss(half, half).item<double>() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
    CHECK(gen_adv_loss(half).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    auto one = scores_of({torch::ones({1, 1, 2, 2}, torch::kFloat64)});
    auto zero = scores_of({torch::zeros({1, 1, 2, 2}, torch::kFloat64)});
    CHECK(disc_loss(one, zero).item<double>() == doctest::Approx(-2.0 * std::log(1.0 - kScoreEpsilon)).epsilon(1e-6));
    CHECK(disc_loss(one, zero).item<double>() < 1e-6);
    CHECK(gen_adv_loss(one).item<double>() < 1e-6);
    CHECK(std::isfinite(disc_loss(zero, one).item<double>()));
  }

  TEST_CASE("random maps match the elementwise reference") {
    auto real = random_scores(4, 10);
    auto fake = random_scores(4, 20);
    CHECK(std::abs(disc_loss(real, fake).item<double>() -
                   st::disc_oracle(real.per_scale, fake.per_scale, kScoreEpsilon)) <= 1e-7);
    CHECK(std::abs(gen_adv_loss(fake).item<double>() - st::gen_adv_oracle(fake.per_scale, kScoreEpsilon)) <= 1e-7);
  }

  TEST_CASE("scale-count mismatch is an error") {
    auto a = random_scores(1, 1);
    auto b = scores_of({a.per_scale[0]});
    CHECK_THROWS_AS(disc_loss(a, b), ShapeError);
  }

  TEST_CASE("discriminator loss is smallest at real 1, fake 0 over constant scores") {
    auto loss_at = [](double r, double f) {
      return disc_loss(scores_of({torch::full({1, 1, 2, 2}, r, torch::kFloat64)}),
                       scores_of({torch::full({1, 1, 2, 2}, f, torch::kFloat64)}))
          .item<double>();
    };
    const double grid[] = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    for (std::size_t i = 1; i < std::size(grid); ++i) {
      for (double f : grid) CHECK(loss_at(grid[i], f) < loss_at(grid[i - 1], f));
      for (double r : grid) CHECK(loss_at(r, grid[i]) > loss_at(r, grid[i - 1]));
    }
  }
}

TEST_SUITE("loss properties") {
  TEST_CASE("losses are nonnegative and pure") {
    auto fe = FeatureExtractor::surrogate();
    for (uint64_t s = 0; s < 5; ++s) {
      auto a = rand_t({2, 3, 8, 8}, s);
      auto b = rand_t({2, 3, 8, 8}, s + 100);
      CHECK(perceptual_loss(fe, a, b).item<double>() >= 0.0);
      CHECK(cycle_loss(a, b).item<double>() >= 0.0);
      CHECK(tv_loss(a).item<double>() >= 0.0);
      auto r = random_scores(2, s);
      auto f = random_scores(2, s + 50);
      CHECK(disc_loss(r, f).item<double>() >= 0.0);
      CHECK(gen_adv_loss(f).item<double>() >= 0.0);
      CHECK(torch::equal(perceptual_loss(fe, a, b), perceptual_loss(fe, a, b)));
      CHECK(torch::equal(ssim_loss(a, b), ssim_loss(a, b)));
    }
  }

  TEST_CASE("analytic gradients agree with central differences") {
    auto x = rand_t({1, 3, 4, 4}, 1, torch::kFloat64) * 0.8 + 0.1;
    auto y = rand_t({1, 3, 4, 4}, 2, torch::kFloat64) * 0.8 + 0.1;
    auto sur = FeatureExtractor::surrogate();
    auto id = FeatureExtractor::identity();
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return ssim_loss(y, t); }, x) < 1e-4);
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return perceptual_loss(sur, y, t); }, x) < 1e-4);
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return perceptual_loss(id, y, t); }, x) < 1e-4);
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return cycle_loss(y, t); }, x) < 1e-4);
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return tv_loss(t); }, x) < 1e-4);
    auto real = random_scores(1, 3);
    auto s = torch::rand({1, 1, 4, 4}, torch::kFloat64) * 0.9 + 0.05;
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return disc_loss(real, scores_of({t, t, t})); }, s) <
          1e-4);
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return disc_loss(scores_of({t, t, t}), real); }, s) <
          1e-4);
    CHECK(st::gradient_check([&](const torch::Tensor& t) { return gen_adv_loss(scores_of({t})); }, s) < 1e-4);
  }
}

TEST_SUITE("composite objectives") {
  TEST_CASE("documented weighted sums") {
    LossWeights w;
    CHECK(supervised_loss<double>({0.5, 0.2, -0.9}, w) == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(supervised_loss<double>({0, 0, 0}, w) == 0.0);
    CHECK(unsupervised_loss<double>({1.0, 0.1, 0.2, 0.005}, w) == doctest::Approx(1.700015).epsilon(1e-12));
    CHECK(unsupervised_loss<double>({0, 0, 0, 0}, w) == 0.0);
    CHECK(total_loss(2.0, 3.0, w) == 5.0);
    w.unsup = 0.0;
    CHECK(total_loss(2.0, 3.0, w) == 2.0);
  }

  TEST_CASE("random terms match the dot-product reference and are linear") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.0, 3.0);
    for (int i = 0; i < 100; ++i) {
      LossWeights w{pos(rng), pos(rng), pos(rng), pos(rng), pos(rng), pos(rng), pos(rng), pos(rng)};
      SupervisedTerms<double> s{u(rng), u(rng), u(rng)};
      UnsupervisedTerms<double> r{u(rng), u(rng), u(rng), u(rng)};
      const double sup = w.adv_super * s.adv + w.per_super * s.per + w.ssim * s.ssim;
      const double uns = w.adv_unsup * r.adv + w.cc * r.cc + w.per_unsup * r.per + w.tv * r.tv;
      CHECK(std::abs(supervised_loss(s, w) - sup) <= 1e-12 * std::max(1.0, std::abs(sup)));
      CHECK(std::abs(unsupervised_loss(r, w) - uns) <= 1e-12 * std::max(1.0, std::abs(uns)));
      CHECK(std::abs(total_loss(sup, uns, w) - (sup + w.unsup * uns)) <= 1e-12 * std::max(1.0, std::abs(sup)));
      // Additivity and homogeneity in the term vector.
      SupervisedTerms<double> s2{u(rng), u(rng), u(rng)};
      const double k = u(rng);
      SupervisedTerms<double> comb{s.adv + k * s2.adv, s.per + k * s2.per, s.ssim + k * s2.ssim};
      CHECK(supervised_loss(comb, w) == doctest::Approx(supervised_loss(s, w) + k * supervised_loss(s2, w)).epsilon(1e-12));
    }
  }

  TEST_CASE("non-finite terms are named") {
    LossWeights w;
    try {
      supervised_loss<double>({0.1, std::nan(""), 0.0}, w);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.term() == "per_super");
    }
    try {
      unsupervised_loss<double>({0, 0, 0, INFINITY}, w);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.term() == "tv");
    }
  }

  TEST_CASE("weights validate and round-trip") {
    LossWeights w;
    nlohmann::json j = w;
    CHECK(j.get<LossWeights>() == w);
    w.tv = -1;
    CHECK_THROWS_AS(w.validate(), ConfigError);
  }
}
