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
#include <string>
#include <vector>

#include "stereoirr/ops.hpp"
#include "stereoirr/rng.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedTensor<T>>;

template <class T>
Tensor<T> trainable(Shape shape, T fill) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

/// Convolution layer. Weights and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;

  Conv2d() = default;
  Conv2d(Index cin, Index cout, Index k, Index stride_, Index padding_, Index groups_, Rng rng)
      : stride(stride_), padding(padding_), groups(groups_) {
    if (cin % groups || cout % groups)
      throw ConfigError("Conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                        " not divisible by groups " + std::to_string(groups));
    weight = trainable<T>({cout, cin / groups, k, k}, T(0));
    bias = trainable<T>({cout}, T(0));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin / groups * k * k));
    Rng wr = rng.split("weight"), br = rng.split("bias");
    for (auto& v : weight.data()) v = static_cast<T>(wr.uniform(-bound, bound));
    for (auto& v : bias.data()) v = static_cast<T>(br.uniform(-bound, bound));
  }

  static Conv2d pointwise(Index cin, Index cout, Rng rng) { return Conv2d(cin, cout, 1, 1, 0, 1, rng); }
  static Conv2d depthwise3x3(Index c, Rng rng) { return Conv2d(c, c, 3, 1, 1, c, rng); }
  static Conv2d conv3x3(Index cin, Index cout, Rng rng) { return Conv2d(cin, cout, 3, 1, 1, 1, rng); }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding, groups); }

  void zero() {
    std::fill(weight.data().begin(), weight.data().end(), T(0));
    std::fill(bias.data().begin(), bias.data().end(), T(0));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct LayerNorm2d {
  Tensor<T> weight;
  Tensor<T> bias;
  T eps = T(1e-6);

  LayerNorm2d() = default;
  explicit LayerNorm2d(Index c) : weight(trainable<T>({c}, T(1))), bias(trainable<T>({c}, T(0))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_channel(x, weight, bias, eps); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Squeeze-excitation gate: x * sigmoid(expand(gelu(reduce(gap(x))))).
template <class T>
struct ChannelAttention {
  Conv2d<T> reduce;
  Conv2d<T> expand;
  Index reduction = 2;

  ChannelAttention() = default;
  ChannelAttention(Index c, Index r, Rng rng) : reduction(r) {
    if (r <= 0 || c % r)
      throw ConfigError("ChannelAttention: " + std::to_string(c) + " channels not divisible by reduction " +
                        std::to_string(r));
    reduce = Conv2d<T>::pointwise(c, c / r, rng.split("reduce"));
    expand = Conv2d<T>::pointwise(c / r, c, rng.split("expand"));
  }

  Tensor<T> gate(const Tensor<T>& x) const { return sigmoid(expand(gelu(reduce(global_avg_pool(x))))); }
  Tensor<T> operator()(const Tensor<T>& x) const { return mul(x, gate(x)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
  }
};

/// Depth-wise channel attention module: pw -> dw3x3 -> GELU -> CA -> pw.
template <class T>
struct Dcam {
  Conv2d<T> pw_in;
  Conv2d<T> dw;
  ChannelAttention<T> ca;
  Conv2d<T> pw_out;

  Dcam() = default;
  Dcam(Index c, Index ca_reduction, Rng rng)
      : pw_in(Conv2d<T>::pointwise(c, c, rng.split("pw_in"))),
        dw(Conv2d<T>::depthwise3x3(c, rng.split("dw"))),
        ca(c, ca_reduction, rng.split("ca")),
        pw_out(Conv2d<T>::pointwise(c, c, rng.split("pw_out"))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return pw_out(ca(gelu(dw(pw_in(x))))); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    pw_in.collect(prefix + ".pw_in", out);
    dw.collect(prefix + ".dw", out);
    ca.collect(prefix + ".ca", out);
    pw_out.collect(prefix + ".pw_out", out);
  }
};

template <class T>
struct Ffn {
  Conv2d<T> pw1;
  Conv2d<T> pw2;

  Ffn() = default;
  Ffn(Index c, Index expansion, Rng rng)
      : pw1(Conv2d<T>::pointwise(c, c * expansion, rng.split("pw1"))),
        pw2(Conv2d<T>::pointwise(c * expansion, c, rng.split("pw2"))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return pw2(gelu(pw1(x))); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    pw1.collect(prefix + ".pw1", out);
    pw2.collect(prefix + ".pw2", out);
  }
};

/**
 * Residual unit
 *   F   = alpha * DCAM(LN(x)) + x
 *   out = beta  * FFN(LN(F))  + F
 * with per-channel alpha, beta starting at zero, so a fresh block is the
 * identity map.
 */
template <class T>
struct BasicBlock {
  LayerNorm2d<T> ln1;
  LayerNorm2d<T> ln2;
  Dcam<T> dcam;
  Ffn<T> ffn;
  Tensor<T> alpha;
  Tensor<T> beta;

  BasicBlock() = default;
  BasicBlock(Index c, Index ffn_expansion, Index ca_reduction, Rng rng)
      : ln1(c),
        ln2(c),
        dcam(c, ca_reduction, rng.split("dcam")),
        ffn(c, ffn_expansion, rng.split("ffn")),
        alpha(trainable<T>({c}, T(0))),
        beta(trainable<T>({c}, T(0))) {}

  Index channels() const { return alpha.numel(); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto f = add(channel_scale(dcam(ln1(x)), alpha), x);
    return add(channel_scale(ffn(ln2(f)), beta), f);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    dcam.collect(prefix + ".dcam", out);
    ffn.collect(prefix + ".ffn", out);
    out.push_back({prefix + ".alpha", alpha});
    out.push_back({prefix + ".beta", beta});
  }
};

/// 2x2 stride-2 conv, C -> 2C at half resolution.
template <class T>
struct Downsample {
  Conv2d<T> conv;

  Downsample() = default;
  Downsample(Index c, Rng rng) : conv(c, 2 * c, 2, 2, 0, 1, rng.split("conv")) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_4d(x.shape(), "downsample");
    if (x.dim(2) % 2 || x.dim(3) % 2)
      throw ShapeError("downsample: H and W must be even, got " + to_string(x.shape()) +
                       " (pad inputs to a multiple of 2^levels)");
    return conv(x);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const { conv.collect(prefix + ".conv", out); }
};

/// Point-wise C -> 2C then pixel_shuffle(2): C/2 channels at double resolution.
template <class T>
struct Upsample {
  Conv2d<T> conv;

  Upsample() = default;
  Upsample(Index c, Rng rng) {
    if (c % 2) throw ConfigError("Upsample: channel count must be even, got " + std::to_string(c));
    conv = Conv2d<T>::pointwise(c, 2 * c, rng.split("conv"));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_4d(x.shape(), "upsample");
    if (x.dim(1) % 2) throw ShapeError("upsample: channel count must be even, got " + to_string(x.shape()));
    return pixel_shuffle(conv(x), 2);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const { conv.collect(prefix + ".conv", out); }
};

}  // namespace stereoirr
