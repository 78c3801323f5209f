// Copyright 2026 The StereoIRR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace stereoirr {
namespace {

using testing::random_tensor;

/// Brute-force SSIM: explicit 2-D Gaussian window at every valid position.
double ssim_reference(const Tensor<double>& x, const Tensor<double>& y, const SsimParams& p = {}) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = p.window;
  std::vector<double> g(static_cast<std::size_t>(K));
  double z = 0;
  for (Index i = 0; i < K; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(K - 1) / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * p.sigma * p.sigma));
    z += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= z;
  double total = 0;
  Index n = 0;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i + K <= H; ++i)
        for (Index j = 0; j + K <= W; ++j) {
          double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
          for (Index u = 0; u < K; ++u)
            for (Index v = 0; v < K; ++v) {
              const double w = g[static_cast<std::size_t>(u)] * g[static_cast<std::size_t>(v)];
              const double a = x.at(b, c, i + u, j + v), e = y.at(b, c, i + u, j + v);
              mx += w * a;
              my += w * e;
              xx += w * a * a;
              yy += w * e * e;
              xy += w * a * e;
            }
          const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
          total += (2 * mx * my + p.c1()) * (2 * sxy + p.c2()) / ((mx * mx + my * my + p.c1()) * (sx + sy + p.c2()));
          ++n;
        }
  return total / static_cast<double>(n);
}

TEST(SsimTest, SelfSimilarityIsOne) {
  Rng rng(1);
  for (int t = 0; t < 5; ++t) {
    const auto x = random_tensor<double>({1, 3, 16, 14}, rng, 0, 1);
    EXPECT_NEAR(ssim(x, x).item(), 1.0, 1e-6);
  }
}

TEST(SsimTest, ConstantShiftClosedForm) {
  const double c = 0.5, d = 0.1, c1 = 1e-4;
  const double expected = (2 * c * (c + d) + c1) / (c * c + (c + d) * (c + d) + c1);
  EXPECT_NEAR(expected, 0.98367, 1e-4);
  const Tensor<double> x({1, 3, 16, 16}, c), y({1, 3, 16, 16}, c + d);
  EXPECT_NEAR(ssim(x, y).item(), expected, 1e-9);
  EXPECT_NEAR(ssim_value(x.cast<float>(), y.cast<float>()), expected, 1e-6);
}

TEST(SsimTest, MatchesBruteForceOracle) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const Index h = rng.uniform_int(11, 18), w = rng.uniform_int(11, 18);
    const auto x = random_tensor<double>({2, 3, h, w}, rng, 0, 1);
    auto y = x.clone();
    for (auto& v : y.data()) v = std::clamp(v + rng.uniform(-0.3, 0.3), 0.0, 1.0);
    EXPECT_NEAR(ssim(x, y).item(), ssim_reference(x, y), 1e-10);
  }
}

TEST(SsimTest, SymmetricAndBounded) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_tensor<double>({1, 1, 12, 12}, rng, 0, 1);
    const auto y = random_tensor<double>({1, 1, 12, 12}, rng, 0, 1);
    const double a = ssim(x, y).item();
    EXPECT_EQ(a, ssim(y, x).item());
    EXPECT_LE(std::abs(a), 1.0);
  }
  EXPECT_THROW(ssim(Tensor<double>({1, 1, 12, 12}), Tensor<double>({1, 1, 12, 13})), ShapeError);
}

TEST(SsimTest, GradientCheck) {
  Rng rng(4);
  auto x = random_tensor<double>({1, 2, 12, 13}, rng, 0, 1);
  auto y = random_tensor<double>({1, 2, 12, 13}, rng, 0, 1);
  GradCheckOptions o;
  o.seed = 5;
  const auto r = grad_check([&] { return ssim(x, y); }, {x, y}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(PsnrTest, GoldenValues) {
  const Tensor<double> a({1, 1, 4, 4}, 0.5);
  const Tensor<double> b({1, 1, 4, 4}, 0.5 + 10.0 / 255.0);
  EXPECT_NEAR(psnr(a, b), 28.13, 0.01);
  EXPECT_NEAR(psnr(a, b), 20 * std::log10(25.5), 1e-9);
  const Tensor<double> half({1, 1, 4, 4}, 0.5 + 5.0 / 255.0);
  EXPECT_NEAR(psnr(a, half) - psnr(a, b), 20 * std::log10(2.0), 1e-9);
  EXPECT_NEAR(20 * std::log10(2.0), 6.02, 0.005);
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
}

TEST(PsnrTest, StrictlyDecreasingInUniformError) {
  const Tensor<double> a({1, 3, 5, 5}, 0.2);
  double prev = INFINITY;
  for (int k = 1; k <= 20; ++k) {
    const double v = psnr(a, Tensor<double>({1, 3, 5, 5}, 0.2 + 0.01 * k));
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(LumaTest, GoldenValues) {
  const auto white = rgb_to_y(Tensor<double>({1, 3, 1, 1}, 1.0));
  const auto black = rgb_to_y(Tensor<double>({1, 3, 1, 1}, 0.0));
  EXPECT_NEAR(white.item(), 235.0 / 255.0, 1e-6);
  EXPECT_NEAR(black.item(), 16.0 / 255.0, 1e-6);
  Tensor<double> green({3, 1, 1}, std::vector<double>{0, 1, 0});
  Tensor<double> blue({3, 1, 1}, std::vector<double>{0, 0, 1});
  EXPECT_GT(rgb_to_y(green).item(), rgb_to_y(blue).item());
  EXPECT_EQ(rgb_to_y(green).shape(), (Shape{1, 1, 1}));
}

TEST(LumaTest, RangeInvariant) {
  Rng rng(6);
  const auto y = rgb_to_y(random_tensor<double>({2, 3, 20, 20}, rng, 0, 1));
  for (double v : y.data()) {
    EXPECT_GE(v, 16.0 / 255.0 - 1e-12);
    EXPECT_LE(v, 235.0 / 255.0 + 1e-12);
  }
  EXPECT_THROW(rgb_to_y(Tensor<double>({1, 4, 2, 2})), ShapeError);
}

TEST(MetricsTest, PureFunctions) {
  Rng rng(7);
  const auto a = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  const auto b = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  const auto q1 = y_channel_quality(a, b), q2 = y_channel_quality(a, b);
  EXPECT_EQ(q1.psnr_db, q2.psnr_db);
  EXPECT_EQ(q1.ssim, q2.ssim);
  const auto q = y_channel_quality(a, a);
  EXPECT_TRUE(std::isinf(q.psnr_db));
  EXPECT_NEAR(q.ssim, 1.0, 1e-9);
}

TEST(PerceptualTest, ZeroAtTargetAndNonnegative) {
  PerceptualExtractor<double> ex;
  Rng rng(8);
  const auto y = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
  EXPECT_EQ(perceptual_loss(y, y, y, y, ex).item(), 0.0);
  for (int t = 0; t < 10; ++t) {
    const auto a = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
    const auto b = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
    EXPECT_GT(perceptual_loss(a, b, y, y, ex).item(), 0.0);
  }
}

TEST(PerceptualTest, MatchesDefinitionFromFeatures) {
  PerceptualExtractor<double> ex;
  Rng rng(9);
  const auto pl = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1), pr = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
  const auto gl = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1), gr = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
  double expected = 0;
  for (const auto& [p, g] : {std::pair{pl, gl}, std::pair{pr, gr}}) {
    const auto fp = ex.features(p), fg = ex.features(g);
    ASSERT_EQ(fp.size(), 2u);
    EXPECT_EQ(fp[0].shape(), (Shape{1, 8, 4, 4}));
    EXPECT_EQ(fp[1].shape(), (Shape{1, 16, 2, 2}));
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0;
      for (Index k = 0; k < fp[i].numel(); ++k) s += (fp[i][k] - fg[i][k]) * (fp[i][k] - fg[i][k]);
      expected += s / static_cast<double>(fp[i].numel());
    }
  }
  EXPECT_NEAR(perceptual_loss(pl, pr, gl, gr, ex).item(), 0.5 * expected, 1e-12);
}

TEST(PerceptualTest, GradientCheckThroughFrozenExtractor) {
  PerceptualExtractor<double> ex;
  Rng rng(10);
  auto pl = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1), pr = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
  const auto gl = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1), gr = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
  GradCheckOptions o;
  o.seed = 11;
  const auto r = grad_check([&] { return perceptual_loss(pl, pr, gl, gr, ex); }, {pl, pr}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  for (const auto& p : ex.parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
}

TEST(PerceptualTest, SameSeedSameFeaturesAndLoadHook) {
  PerceptualExtractor<float> a, b, c(99);
  Rng rng(12);
  const auto x = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
  EXPECT_TRUE(testing::bit_equal(a.features(x)[1], b.features(x)[1]));
  EXPECT_FALSE(testing::bit_equal(a.features(x)[1], c.features(x)[1]));
  const auto path = testing::scratch_dir("extractor") / "weights.sirr";
  save_tensors(path, c.parameters());
  a.load(load_tensors(path));
  EXPECT_TRUE(testing::bit_equal(a.features(x)[1], c.features(x)[1]));
  auto partial = c.parameters();
  partial.pop_back();
  EXPECT_THROW(b.load(partial), ConfigError);
}

TEST(HybridLossTest, MinimumAtTarget) {
  PerceptualExtractor<double> ex;
  Rng rng(13);
  const auto yl = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1), yr = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
  for (double ws : {1.0, 0.5}) {
    const LossWeights w{0.1, ws};
    const double best = hybrid_loss(yl, yr, yl, yr, ex, w).item();
    EXPECT_NEAR(best, -ws, 1e-9);
    for (int t = 0; t < 5; ++t) {
      auto pl = yl.clone();
      for (auto& v : pl.data()) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      EXPECT_GT(hybrid_loss(pl, yr, yl, yr, ex, w).item(), best);
    }
  }
  EXPECT_THROW(hybrid_loss(yl, yr, yl, yr, ex, LossWeights{-1, 1}), ConfigError);
}

TEST(HybridLossTest, SsimOnlyMatchesClosedForm) {
  PerceptualExtractor<double> ex;
  const Tensor<double> x({1, 3, 16, 16}, 0.5), y({1, 3, 16, 16}, 0.6);
  const double expected = (2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
  EXPECT_NEAR(hybrid_loss(x, x, y, y, ex, LossWeights{0, 1}).item(), -expected, 1e-9);
}

TEST(HybridLossTest, MseMode) {
  PerceptualExtractor<double> ex;
  Rng rng(14);
  const auto yl = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1), yr = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
  EXPECT_EQ(training_loss(LossKind::Mse, StereoOutput<double>{yl, yr}, yl, yr, ex).item(), 0.0);
  const Tensor<double> zl({1, 3, 8, 8}, 0.1), zr({1, 3, 8, 8}, 0.3);
  const Tensor<double> zero({1, 3, 8, 8}, 0.0);
  EXPECT_NEAR(training_loss(LossKind::Mse, StereoOutput<double>{zl, zr}, zero, zero, ex).item(), 0.5 * (0.01 + 0.09),
              1e-12);
}

TEST(ErrorMapTest, GroundTruthIsWhite) {
  Rng rng(15);
  ImageRGB gt(5, 7);
  for (auto& v : gt.data) v = static_cast<float>(rng.uniform());
  const auto m = error_map(gt, gt);
  for (float v : m.data) EXPECT_EQ(v, 1.0f);
}

TEST(ErrorMapTest, SinglePerturbedPixelIsLocal) {
  Rng rng(16);
  ImageRGB gt(6, 6);
  for (auto& v : gt.data) v = static_cast<float>(rng.uniform(0.2, 0.8));
  auto d = gt;
  d.at(2, 3, 1) += 0.1f;
  const auto m = error_map(d, gt);
  int dark = 0;
  for (Index y = 0; y < 6; ++y)
    for (Index x = 0; x < 6; ++x)
      if (m.at(y, x, 0) < 1.0f) {
        ++dark;
        EXPECT_EQ(y, 2);
        EXPECT_EQ(x, 3);
      }
  EXPECT_EQ(dark, 1);
  EXPECT_NEAR(m.at(2, 3, 0), 1.0 - 4.0 * 0.1 / 3.0, 1e-6);
}

TEST(ErrorMapTest, RainyInputIsDarkest) {
  const auto s = make_sample(17, DataGenConfig{.height = 32, .width = 64});
  auto mean_of = [](const ImageRGB& img) {
    double a = 0;
    for (float v : img.data) a += v;
    return a / static_cast<double>(img.data.size());
  };
  ImageRGB partial = s.rainy_l;
  for (std::size_t i = 0; i < partial.data.size(); ++i) partial.data[i] = 0.5f * (s.rainy_l.data[i] + s.clean_l.data[i]);
  const double rainy = mean_of(error_map(s.rainy_l, s.clean_l));
  EXPECT_LT(rainy, mean_of(error_map(partial, s.clean_l)));
  EXPECT_LT(rainy, mean_of(error_map(s.clean_l, s.clean_l)));
}

}  // namespace
}  // namespace stereoirr
