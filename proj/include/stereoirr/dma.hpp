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

// Dual-view mutual attention. Each view's queries attend over the other
// view's keys along the same image row (stereo disparity is horizontal), and
// the attended values are added back through a zero-initialized per-channel
// gate.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stereoirr/nn.hpp"
#include "stereoirr/ops.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

/// Point-wise conv for channel mixing followed by a depth-wise 3x3 for spatial context.
template <class T>
struct Projection {
  Conv2d<T> pw;
  Conv2d<T> dw;

  Projection() = default;
  Projection(Index c, Rng rng)
      : pw(Conv2d<T>::pointwise(c, c, rng.split("pw"))), dw(Conv2d<T>::depthwise3x3(c, rng.split("dw"))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return dw(pw(x)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    pw.collect(prefix + ".pw", out);
    dw.collect(prefix + ".dw", out);
  }
};

template <class T>
struct DmaLayer {
  Projection<T> q_l, k_l, v_l;
  Projection<T> q_r, k_r, v_r;
  Conv2d<T> out_l, out_r;
  Tensor<T> gamma1;  // gates the left output
  Tensor<T> gamma2;  // gates the right output
  Index d_k = 0;
  bool cross_value = false;

  DmaLayer() = default;
  DmaLayer(Index c, bool cross_value_, Rng rng)
      : q_l(c, rng.split("q_l")),
        k_l(c, rng.split("k_l")),
        v_l(c, rng.split("v_l")),
        q_r(c, rng.split("q_r")),
        k_r(c, rng.split("k_r")),
        v_r(c, rng.split("v_r")),
        out_l(Conv2d<T>::pointwise(c, c, rng.split("out_l"))),
        out_r(Conv2d<T>::pointwise(c, c, rng.split("out_r"))),
        gamma1(trainable<T>({c}, T(0))),
        gamma2(trainable<T>({c}, T(0))),
        d_k(c),
        cross_value(cross_value_) {}

  Index channels() const { return gamma1.numel(); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    q_l.collect(prefix + ".q_l", out);
    k_l.collect(prefix + ".k_l", out);
    v_l.collect(prefix + ".v_l", out);
    q_r.collect(prefix + ".q_r", out);
    k_r.collect(prefix + ".k_r", out);
    v_r.collect(prefix + ".v_r", out);
    out_l.collect(prefix + ".out_l", out);
    out_r.collect(prefix + ".out_r", out);
    out.push_back({prefix + ".gamma1", gamma1});
    out.push_back({prefix + ".gamma2", gamma2});
  }

  /// Same parameters with the roles of the two views exchanged (shares storage).
  DmaLayer mirrored() const {
    DmaLayer m = *this;
    std::swap(m.q_l, m.q_r);
    std::swap(m.k_l, m.k_r);
    std::swap(m.v_l, m.v_r);
    std::swap(m.out_l, m.out_r);
    std::swap(m.gamma1, m.gamma2);
    return m;
  }
};

template <class T>
struct StereoQkv {
  Tensor<T> q_l, k_l, v_l, q_r, k_r, v_r;
};

template <class T>
StereoQkv<T> project_qkv(const Tensor<T>& f_l, const Tensor<T>& f_r, const DmaLayer<T>& layer) {
  if (f_l.shape() != f_r.shape())
    throw ShapeError("project_qkv: view shapes differ, " + to_string(f_l.shape()) + " vs " + to_string(f_r.shape()));
  return {layer.q_l(f_l), layer.k_l(f_l), layer.v_l(f_l), layer.q_r(f_r), layer.k_r(f_r), layer.v_r(f_r)};
}

template <class T>
struct AttentionResult {
  Tensor<T> out;  // [B,C,H,W]
  Tensor<T> map;  // [B,H,W,W], row h: query column -> key column weights
};

/**
 * Row-wise attention. For every (b, h) the W x C matrices of q, k, v give
 * out_row = softmax(q_row k_row^T / sqrt(d_k)) v_row. Rows and batch items
 * never mix.
 */
template <class T>
AttentionResult<T> mutual_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Index d_k) {
  detail::require_4d(q.shape(), "mutual_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("mutual_attention: q/k/v shapes differ: " + to_string(q.shape()) + ", " + to_string(k.shape()) +
                     ", " + to_string(v.shape()));
  if (d_k <= 0) throw ShapeError("mutual_attention: d_k must be positive");
  const auto qr = permute(q, {0, 2, 3, 1});  // [B,H,W,C]
  const auto kt = permute(k, {0, 2, 1, 3});  // [B,H,C,W]
  const auto logits = mul_scalar(matmul(qr, kt), T(1) / std::sqrt(static_cast<T>(d_k)));
  auto map = softmax(logits, 3);
  const auto vr = permute(v, {0, 2, 3, 1});
  auto out = permute(matmul(map, vr), {0, 3, 1, 2});
  return {std::move(out), std::move(map)};
}

template <class T>
struct DmaOutput {
  Tensor<T> left;   // F_{l<-r}
  Tensor<T> right;  // F_{r<-l}
  Tensor<T> map_l;  // left queries over right keys
  Tensor<T> map_r;
};

/**
 *   F_{l<-r} = gamma1 * out_l(Attn(Q_l, K_r, V)) + F_l
 *   F_{r<-l} = gamma2 * out_r(Attn(Q_r, K_l, V)) + F_r
 * V is the same-view value (V_l resp. V_r) unless cross_value is set, in which
 * case the opposite view's value is used.
 */
template <class T>
DmaOutput<T> dma_forward(const Tensor<T>& f_l, const Tensor<T>& f_r, const DmaLayer<T>& layer) {
  const auto p = project_qkv(f_l, f_r, layer);
  const auto& val_l = layer.cross_value ? p.v_r : p.v_l;
  const auto& val_r = layer.cross_value ? p.v_l : p.v_r;
  auto a_l = mutual_attention(p.q_l, p.k_r, val_l, layer.d_k);
  auto a_r = mutual_attention(p.q_r, p.k_l, val_r, layer.d_k);
  auto left = add(channel_scale(layer.out_l(a_l.out), layer.gamma1), f_l);
  auto right = add(channel_scale(layer.out_r(a_r.out), layer.gamma2), f_r);
  return {std::move(left), std::move(right), std::move(a_l.map), std::move(a_r.map)};
}

}  // namespace stereoirr
