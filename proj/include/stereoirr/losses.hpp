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

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stereoirr/model.hpp"
#include "stereoirr/nn.hpp"
#include "stereoirr/ops.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

struct SsimParams {
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Normalized 1-D Gaussian taps; the 2-D window is its outer product and sums to 1.
template <class T>
std::vector<T> gaussian_taps(const SsimParams& p) {
  std::vector<double> g(static_cast<std::size_t>(p.window));
  const double mid = static_cast<double>(p.window - 1) / 2.0;
  double z = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = static_cast<double>(i) - mid;
    g[i] = std::exp(-d * d / (2 * p.sigma * p.sigma));
    z += g[i];
  }
  std::vector<T> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<T>(g[i] / z);
  return out;
}

/**
 * Mean SSIM over all valid window positions, channels and batch items of two
 * [B,C,H,W] tensors (Gaussian-weighted local statistics, no padding).
 * Differentiable in both arguments.
 */
template <class T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {}) {
  if (x.shape() != y.shape())
    throw ShapeError("ssim: shapes differ, " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  const auto k = gaussian_taps<T>(p);
  const auto mu_x = separable_filter_valid(x, k);
  const auto mu_y = separable_filter_valid(y, k);
  const auto mu_xx = mul(mu_x, mu_x);
  const auto mu_yy = mul(mu_y, mu_y);
  const auto mu_xy = mul(mu_x, mu_y);
  const auto s_xx = sub(separable_filter_valid(mul(x, x), k), mu_xx);
  const auto s_yy = sub(separable_filter_valid(mul(y, y), k), mu_yy);
  const auto s_xy = sub(separable_filter_valid(mul(x, y), k), mu_xy);
  const T c1 = static_cast<T>(p.c1()), c2 = static_cast<T>(p.c2());
  const auto num = mul(add_scalar(mul_scalar(mu_xy, T(2)), c1), add_scalar(mul_scalar(s_xy, T(2)), c2));
  const auto den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(s_xx, s_yy), c2));
  return mean(div(num, den));
}

/**
 * Frozen convolutional feature pyramid used as the perceptual feature space.
 * Stage i is conv3x3+GELU, conv3x3+GELU, 2x2 average pool; the outputs of the
 * two stages (1/2 and 1/4 resolution) are the compared features.
 */
template <class T>
class PerceptualExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EEDF00D;

  explicit PerceptualExtractor(std::uint64_t seed = kDefaultSeed, Index width1 = 8, Index width2 = 16) {
    const Rng root(seed);
    // He-style scaling keeps random GELU features from collapsing with depth.
    auto make = [&](Index cin, Index cout, const std::string& name) {
      auto c = Conv2d<T>::conv3x3(cin, cout, root.split(name));
      Rng r = root.split(name + ".he");
      const double sd = std::sqrt(2.0 / static_cast<double>(cin * 9));
      for (auto& v : c.weight.data()) v = static_cast<T>(sd * r.normal());
      std::fill(c.bias.data().begin(), c.bias.data().end(), T(0));
      return c;
    };
    convs_ = {make(3, width1, "s1.c1"), make(width1, width1, "s1.c2"), make(width1, width2, "s2.c1"),
              make(width2, width2, "s2.c2")};
    freeze();
  }

  /// Takes weights from named tensors s1.c1.weight, ..., s2.c2.bias (e.g. read from a checkpoint file).
  void load(const ParamList<T>& named) {
    auto own = parameters();
    for (auto& p : own) {
      bool found = false;
      for (const auto& q : named) {
        if (q.name != p.name) continue;
        if (q.tensor.shape() != p.tensor.shape())
          throw ConfigError("perceptual extractor: shape mismatch for " + p.name);
        std::copy(q.tensor.data().begin(), q.tensor.data().end(), p.tensor.data().begin());
        found = true;
      }
      if (!found) throw ConfigError("perceptual extractor: missing tensor " + p.name);
    }
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    const char* names[] = {"s1.c1", "s1.c2", "s2.c1", "s2.c2"};
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(names[i], out);
    return out;
  }

  std::vector<Tensor<T>> features(const Tensor<T>& x) const {
    const auto f1 = pool(gelu(convs_[1](gelu(convs_[0](x)))));
    const auto f2 = pool(gelu(convs_[3](gelu(convs_[2](f1)))));
    return {f1, f2};
  }

 private:
  void freeze() {
    for (auto& c : convs_) {
      c.weight.set_requires_grad(false);
      c.bias.set_requires_grad(false);
    }
  }

  static Tensor<T> pool(const Tensor<T>& x) {
    const Index c = x.dim(1);
    Tensor<T> k({c, 1, 2, 2}, T(0.25));
    return conv2d(x, k, Tensor<T>(), 2, 0, c);
  }

  std::vector<Conv2d<T>> convs_;
};

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  return mean(square(sub(a, b)));
}

/// 1/2 * sum over both feature stages and both views of the mean squared feature distance.
template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& pred_l, const Tensor<T>& pred_r, const Tensor<T>& gt_l,
                          const Tensor<T>& gt_r, const PerceptualExtractor<T>& ex) {
  std::vector<Tensor<T>> tl, tr;
  {
    NoGradScope<T> ng;
    tl = ex.features(gt_l);
    tr = ex.features(gt_r);
  }
  const auto pl = ex.features(pred_l);
  const auto pr = ex.features(pred_r);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < pl.size(); ++i) total = add(total, add(mse(pl[i], tl[i]), mse(pr[i], tr[i])));
  return mul_scalar(total, T(0.5));
}

/// -mean SSIM over the two views.
template <class T>
Tensor<T> ssim_loss(const Tensor<T>& pred_l, const Tensor<T>& pred_r, const Tensor<T>& gt_l, const Tensor<T>& gt_r,
                    const SsimParams& p = {}) {
  return mul_scalar(add(ssim(pred_l, gt_l, p), ssim(pred_r, gt_r, p)), T(-0.5));
}

struct LossWeights {
  double perceptual = 0.1;
  double ssim = 1.0;
};

template <class T>
Tensor<T> hybrid_loss(const Tensor<T>& pred_l, const Tensor<T>& pred_r, const Tensor<T>& gt_l, const Tensor<T>& gt_r,
                      const PerceptualExtractor<T>& ex, const LossWeights& w = {}) {
  if (w.perceptual < 0 || w.ssim < 0) throw ConfigError("loss weights must be >= 0");
  auto l = mul_scalar(ssim_loss(pred_l, pred_r, gt_l, gt_r), static_cast<T>(w.ssim));
  if (w.perceptual > 0)
    l = add(l, mul_scalar(perceptual_loss(pred_l, pred_r, gt_l, gt_r, ex), static_cast<T>(w.perceptual)));
  return l;
}

/// Mean squared error over both views.
template <class T>
Tensor<T> stereo_mse_loss(const Tensor<T>& pred_l, const Tensor<T>& pred_r, const Tensor<T>& gt_l,
                          const Tensor<T>& gt_r) {
  return mul_scalar(add(mse(pred_l, gt_l), mse(pred_r, gt_r)), T(0.5));
}

template <class T>
Tensor<T> training_loss(LossKind kind, const StereoOutput<T>& pred, const Tensor<T>& gt_l, const Tensor<T>& gt_r,
                        const PerceptualExtractor<T>& ex, const LossWeights& w = {}) {
  if (kind == LossKind::Mse) return stereo_mse_loss(pred.left, pred.right, gt_l, gt_r);
  return hybrid_loss(pred.left, pred.right, gt_l, gt_r, ex, w);
}

}  // namespace stereoirr
