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

#include "test_support.hpp"

namespace stereoirr {
namespace {

using testing::bit_equal;
using testing::max_abs_diff;
using testing::perturb_gates;
using testing::random_tensor;
using testing::toy_config;

TEST(ModelTest, IdentityAtInitAcrossConfigs) {
  Rng rng(1);
  std::vector<ModelConfig> cfgs{toy_config(8, true), toy_config(8, false), toy_config(4, true)};
  cfgs[2].multi_scale = false;
  cfgs[2].cross_value = true;
  for (const auto& c : cfgs) {
    StereoIrrModel<float> m(c, 7);
    const auto xl = random_tensor<float>({2, 3, 8, 12}, rng, 0, 1);
    const auto xr = random_tensor<float>({2, 3, 8, 12}, rng, 0, 1);
    const auto y = m.forward(xl, xr);
    EXPECT_TRUE(bit_equal(y.left, xl));
    EXPECT_TRUE(bit_equal(y.right, xr));
  }
}

TEST(ModelTest, OutputShapesMatchInputs) {
  Rng rng(2);
  for (bool ms : {true, false}) {
    auto c = toy_config();
    c.multi_scale = ms;
    StereoIrrModel<float> m(c, 3);
    perturb_gates(m, Rng(4));
    const auto xl = random_tensor<float>({1, 3, 12, 8}, rng, 0, 1);
    const auto y = m.forward(xl, xl);
    EXPECT_EQ(y.left.shape(), xl.shape());
    EXPECT_EQ(y.right.shape(), xl.shape());
    EXPECT_EQ(m.lci_forward(m.feature_extraction(xl, xl)).shape(), (Shape{2, 8, 12, 8}));
  }
}

TEST(ModelTest, FeatureExtractionStacksViewsLeftFirst) {
  ModelConfig c;  // default width 30, five levels
  StereoIrrModel<float> m(c, 5);
  Rng rng(6);
  const auto xl = random_tensor<float>({1, 3, 64, 64}, rng, 0, 1);
  const auto xr = random_tensor<float>({1, 3, 64, 64}, rng, 0, 1);
  const auto f = m.feature_extraction(xl, xr);
  EXPECT_EQ(f.shape(), (Shape{2, 30, 64, 64}));
  EXPECT_TRUE(bit_equal(slice_batch(f, 0, 1), slice_batch(m.feature_extraction(xl, xl), 0, 1)));
  EXPECT_TRUE(bit_equal(slice_batch(f, 1, 1), slice_batch(m.feature_extraction(xr, xr), 1, 1)));
  EXPECT_TRUE(bit_equal(slice_batch(f, 0, 1), slice_batch(m.feature_extraction(xr, xl), 1, 1)));
}

TEST(ModelTest, UnpaddedInputIsDescriptiveShapeError) {
  StereoIrrModel<float> m(ModelConfig{}, 5);
  const Tensor<float> x({1, 3, 375, 1242});
  try {
    m.feature_extraction(x, x);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("375x1242"), std::string::npos) << msg;
    EXPECT_NE(msg.find("multiple of 32"), std::string::npos) << msg;
    EXPECT_NE(msg.find("pad_reflect"), std::string::npos) << msg;
  }
  EXPECT_THROW(m.feature_extraction(Tensor<float>({1, 3, 32, 32}), Tensor<float>({1, 3, 32, 64})), ShapeError);
  EXPECT_THROW(m.feature_extraction(Tensor<float>({1, 1, 32, 32}), Tensor<float>({1, 1, 32, 32})), ShapeError);
}

TEST(ModelTest, BottleneckShapeForDefaultConfig) {
  const ModelConfig c;
  EXPECT_EQ(c.levels(), 5);
  EXPECT_EQ(bottleneck_shape(c, 1, 384, 1248), (Shape{2, 960, 12, 39}));
  auto flat = c;
  flat.multi_scale = false;
  EXPECT_EQ(bottleneck_shape(flat, 1, 375, 1242), (Shape{2, 30, 375, 1242}));
}

TEST(PaddingTest, PadsToMultipleAndCropsBack) {
  Rng rng(7);
  const auto x = random_tensor<float>({1, 3, 375, 1242}, rng, 0, 1);
  const auto p = pad_reflect(x, 5);
  EXPECT_EQ(p.image.shape(), (Shape{1, 3, 384, 1248}));
  EXPECT_EQ(p.crop.pad_bottom, 9);
  EXPECT_EQ(p.crop.pad_right, 6);
  EXPECT_TRUE(bit_equal(crop_to(p.image, p.crop), x));
  // Mirror without edge repeat: row H maps to row H-2.
  EXPECT_EQ(p.image.at(0, 1, 375, 10), x.at(0, 1, 373, 10));
  EXPECT_EQ(p.image.at(0, 2, 7, 1242), x.at(0, 2, 7, 1240));
}

TEST(PaddingTest, AlignedInputIsUnchanged) {
  Rng rng(8);
  const auto x = random_tensor<float>({1, 3, 64, 96}, rng);
  const auto p = pad_reflect(x, 5);
  EXPECT_TRUE(p.crop.empty());
  EXPECT_TRUE(x.same_storage(p.image));
}

TEST(PaddingTest, ReflectIndexProperties) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const Index n = rng.uniform_int(1, 20);
    const Index i = rng.uniform_int(-3 * n, 4 * n);
    const Index r = reflect_index(i, n);
    ASSERT_GE(r, 0);
    ASSERT_LT(r, n);
    if (i >= 0 && i < n) {
      EXPECT_EQ(r, i);
    }
    if (n > 1) {
      EXPECT_EQ(reflect_index(-i, n), reflect_index(i, n));
    }
  }
}

TEST(PaddingTest, InferOnOddSizeReturnsInputSize) {
  auto c = toy_config();
  StereoIrrModel<float> m(c, 10);
  Rng rng(11);
  const auto xl = random_tensor<float>({1, 3, 13, 22}, rng, 0, 1);
  const auto xr = random_tensor<float>({1, 3, 13, 22}, rng, 0, 1);
  const auto y = infer(m, xl, xr);
  EXPECT_TRUE(bit_equal(y.left, xl));
  EXPECT_TRUE(bit_equal(y.right, xr));
  perturb_gates(m, Rng(12));
  const auto z = infer(m, xl, xr);
  EXPECT_EQ(z.left.shape(), xl.shape());
  EXPECT_GT(max_abs_diff(z.left, xl), 0.0);
}

TEST(PaddingTest, CropIsDifferentiable) {
  Rng rng(13);
  auto x = random_tensor<double>({1, 2, 5, 6}, rng);
  GradCheckOptions o;
  o.seed = 14;
  EXPECT_TRUE(grad_check([&] { return crop_to(x, CropSpec{3, 4, 2, 2}); }, {x}, o).passed);
}

TEST(ModelTest, SwappingViewsWithMirroredDmaSwapsOutputs) {
  for (bool cv : {false, true}) {
    auto c = toy_config();
    c.cross_value = cv;
    StereoIrrModel<double> m(c, 15);
    perturb_gates(m, Rng(16));
    Rng rng(17);
    const auto xl = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
    const auto xr = random_tensor<double>({1, 3, 8, 8}, rng, 0, 1);
    const auto a = m.forward(xl, xr);
    StereoIrrModel<double> mm(c, 15);
    mm.load_values_from(m);
    for (auto* d : mm.dma_layers()) *d = d->mirrored();
    const auto b = mm.forward(xr, xl);
    EXPECT_LT(max_abs_diff(a.left, b.right), 1e-12);
    EXPECT_LT(max_abs_diff(a.right, b.left), 1e-12);
  }
}

TEST(ModelTest, ParameterCountDeterministicAndSeedIndependent) {
  const auto c = toy_config();
  StereoIrrModel<float> a(c, 1), b(c, 1), d(c, 2);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_EQ(a.parameter_count(), d.parameter_count());
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(bit_equal(pa[i].tensor, pb[i].tensor)) << pa[i].name;
  }
  auto off = c;
  off.use_dma = false;
  EXPECT_LT(StereoIrrModel<float>(off, 1).parameter_count(), a.parameter_count());
}

TEST(ModelTest, ZeroTailReturnsInputEvenWithLiveTrunk) {
  StereoIrrModel<float> m(toy_config(), 18);
  perturb_gates(m, Rng(19));
  for (auto& p : m.parameters())
    if (p.name.rfind("tail.", 0) == 0) {
      auto t = p.tensor;
      std::fill(t.data().begin(), t.data().end(), 0.0f);
    }
  Rng rng(20);
  const auto xl = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
  const auto xr = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
  const auto y = m.forward(xl, xr);
  EXPECT_TRUE(bit_equal(y.left, xl));
  EXPECT_TRUE(bit_equal(y.right, xr));
}

TEST(ModelTest, TailReceivesGradientAtInit) {
  StereoIrrModel<double> m(toy_config(), 21);
  Rng rng(22);
  const auto xl = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
  const auto xr = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
  const auto gl = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
  const auto gr = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
  m.zero_grad();
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> s(tape);
    const auto y = m.forward(xl, xr);
    loss = ssim_loss(y.left, y.right, gl, gr);
  }
  backward(loss, tape);
  double tail = 0, alpha = 0;
  for (const auto& p : m.parameters()) {
    if (!p.tensor.has_grad()) continue;
    double n = 0;
    for (double g : p.tensor.grad()) n += g * g;
    if (p.name.rfind("tail.", 0) == 0) tail += n;
    if (p.name.ends_with(".alpha")) alpha += n;
  }
  EXPECT_GT(tail, 0.0);
  // The gates sit behind a zero tail, so they only start moving after one step.
  EXPECT_EQ(alpha, 0.0);
}

TEST(ModelTest, NoDmaLayersWhenDisabled) {
  StereoIrrModel<float> off(toy_config(8, false), 1);
  EXPECT_TRUE(off.dma_layers().empty());
  for (const auto& p : off.parameters()) EXPECT_EQ(p.name.find(".dma."), std::string::npos) << p.name;
  StereoIrrModel<float> on(toy_config(8, true), 1);
  EXPECT_EQ(on.dma_layers().size(), 5u);
}

TEST(ModelTest, ConfigValidation) {
  auto c = toy_config();
  c.encoder_blocks = {1};
  EXPECT_THROW(StereoIrrModel<float>(c, 1), ConfigError);
  c = toy_config();
  c.width = 0;
  EXPECT_THROW(StereoIrrModel<float>(c, 1), ConfigError);
  auto a = toy_config(), b = toy_config();
  b.use_dma = false;
  b.width = 16;
  EXPECT_EQ(diff_fields(a, b), (std::vector<std::string>{"model.width", "model.use_dma"}));
}

TEST(ModelTest, GradientCheckThroughWholeModel) {
  auto c = toy_config(4, true);
  c.encoder_blocks = {1};
  c.decoder_blocks = {1};
  StereoIrrModel<double> m(c, 23);
  perturb_gates(m, Rng(24), 0.3);
  Rng rng(25);
  const auto xl = random_tensor<double>({1, 3, 4, 4}, rng, 0, 1);
  const auto xr = random_tensor<double>({1, 3, 4, 4}, rng, 0, 1);
  std::vector<Tensor<double>> wrt;
  for (const auto& p : m.parameters()) wrt.push_back(p.tensor);
  GradCheckOptions o;
  o.seed = 26;
  o.max_entries = 4;
  const auto r = grad_check(
      [&] {
        const auto y = m.forward(xl, xr);
        return concat_batch(y.left, y.right);
      },
      wrt, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at tensor " << r.worst_tensor;
}

}  // namespace
}  // namespace stereoirr
