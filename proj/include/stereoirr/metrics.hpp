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

#include <algorithm>
#include <cmath>
#include <limits>

#include "stereoirr/image.hpp"
#include "stereoirr/losses.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

/// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/**
 * Studio-range luma of [0,1] RGB, as produced by the usual MATLAB
 * rgb2ycbcr-based evaluation scripts:
 *   Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255.
 * Accepts [B,3,H,W] (or [3,H,W]); the channel axis collapses to 1.
 */
template <class T>
Tensor<double> rgb_to_y(const Tensor<T>& img) {
  const bool batched = img.ndim() == 4;
  if (!(batched || img.ndim() == 3) || img.dim(batched ? 1 : 0) != 3)
    throw ShapeError("rgb_to_y: expected [B,3,H,W] or [3,H,W], got " + to_string(img.shape()));
  const Index B = batched ? img.dim(0) : 1;
  const Index hw = img.dim(batched ? 2 : 1) * img.dim(batched ? 3 : 2);
  Shape os = img.shape();
  os[batched ? 1 : 0] = 1;
  Tensor<double> y(os);
  for (Index b = 0; b < B; ++b) {
    const T* p = img.ptr() + b * 3 * hw;
    for (Index i = 0; i < hw; ++i)
      y[b * hw + i] =
          (16.0 + 65.481 * static_cast<double>(p[i]) + 128.553 * static_cast<double>(p[hw + i]) +
           24.966 * static_cast<double>(p[2 * hw + i])) /
          255.0;
  }
  return y;
}

/// 10 log10(peak^2 / MSE); +inf when the inputs are identical.
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
  if (x.shape() != y.shape()) throw ShapeError("psnr: shapes differ");
  double acc = 0;
  for (Index i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  const double m = acc / static_cast<double>(x.numel());
  if (m == 0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / m);
}

/// SSIM as an evaluation metric (double precision, no tape).
template <class T>
double ssim_value(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {}) {
  NoGradScope<double> ng;
  const auto xd = x.template cast<double>();
  const auto yd = y.template cast<double>();
  if (xd.ndim() == 3) return ssim(reshape(xd, {1, xd.dim(0), xd.dim(1), xd.dim(2)}),
                                  reshape(yd, {1, yd.dim(0), yd.dim(1), yd.dim(2)}), p).item();
  return ssim(xd, yd, p).item();
}

struct QualityScore {
  double psnr_db = 0;
  double ssim = 0;
};

/// PSNR and SSIM of two RGB [B,3,H,W] images measured on the luma channel.
template <class T>
QualityScore y_channel_quality(const Tensor<T>& restored, const Tensor<T>& reference) {
  const auto a = rgb_to_y(restored);
  const auto b = rgb_to_y(reference);
  return {psnr(a, b, 1.0), ssim_value(a, b)};
}

/**
 * Per-pixel error picture: d = mean |a - b| over channels, rendered as
 * 1 - min(d * gain, 1), so smaller errors are whiter.
 */
inline ImageRGB error_map(const ImageRGB& restored, const ImageRGB& reference, double gain = 4.0) {
  if (restored.height != reference.height || restored.width != reference.width)
    throw ShapeError("error_map: image sizes differ");
  ImageRGB out(restored.height, restored.width);
  for (Index y = 0; y < out.height; ++y)
    for (Index x = 0; x < out.width; ++x) {
      double d = 0;
      for (Index c = 0; c < 3; ++c) d += std::abs(static_cast<double>(restored.at(y, x, c)) - reference.at(y, x, c));
      d /= 3.0;
      const auto v = static_cast<float>(1.0 - std::min(d * gain, 1.0));
      for (Index c = 0; c < 3; ++c) out.at(y, x, c) = v;
    }
  return out;
}

}  // namespace stereoirr
