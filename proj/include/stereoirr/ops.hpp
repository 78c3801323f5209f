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

// Differentiable primitives. Every op computes its forward result eagerly
// and, when a tape is active and some input requires grad, records a closure
// that accumulates the output gradient into its inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "stereoirr/tensor.hpp"

namespace stereoirr {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_4d(const Shape& s, const char* op) {
  require(s.size() == 4, std::string(op) + ": expected a 4-D [B,C,H,W] tensor, got " + to_string(s));
}

inline std::vector<Index> contiguous_strides(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Index da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const Index db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` viewed through the broadcast shape `out` (0 on broadcast axes).
inline std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
  const auto st = contiguous_strides(in);
  std::vector<Index> r(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) r[off + i] = in[i] == 1 ? 0 : st[i];
  return r;
}

/// Calls f(out_offset, a_offset, b_offset) for every element of `out`.
template <class F>
void broadcast_loop(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, F&& f) {
  const std::size_t nd = out.size();
  if (nd == 0) {
    f(Index{0}, Index{0}, Index{0});
    return;
  }
  const Index inner = out[nd - 1];
  const Index a_in = sa[nd - 1], b_in = sb[nd - 1];
  const Index outer = numel_of(out) / inner;
  std::vector<Index> idx(nd, 0);
  Index o = 0, oa = 0, ob = 0;
  for (Index r = 0; r < outer; ++r) {
    for (Index j = 0; j < inner; ++j) f(o + j, oa + j * a_in, ob + j * b_in);
    o += inner;
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T, class Fwd, class Bwd>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (a.shape() == b.shape()) {
    for (Index i = 0; i < out.numel(); ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    broadcast_loop(out_shape, sa, sb, [&](Index o, Index ia, Index ib) { po[o] = fwd(pa[ia], pb[ib]); });
  }
  record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), out_shape, sa, sb, bwd] {
    const bool ga = wants(ai), gb = wants(bi);
    const T* g = oi->grad.data();
    const T* xa = ai->data.data();
    const T* xb = bi->data.data();
    T* da = ga ? ai->grad.data() : nullptr;
    T* db = gb ? bi->grad.data() : nullptr;
    broadcast_loop(out_shape, sa, sb, [&](Index o, Index ia, Index ib) {
      T dfa, dfb;
      bwd(xa[ia], xb[ib], dfa, dfb);
      if (da) da[ia] += g[o] * dfa;
      if (db) db[ib] += g[o] * dfb;
    });
  });
  return out;
}

/// Elementwise op; df(x, y) is the derivative given input x and output y.
template <class T, class Fwd, class Df>
Tensor<T> unary(const Tensor<T>& x, Fwd f, Df df) {
  Tensor<T> out(x.shape());
  const T* px = x.ptr();
  T* po = out.ptr();
  for (Index i = 0; i < x.numel(); ++i) po[i] = f(px[i]);
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), df] {
    if (!wants(xi)) return;
    const std::size_t n = xi->data.size();
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * df(xi->data[i], oi->data[i]);
  });
  return out;
}

inline Index norm_axis(Index axis, std::size_t nd) {
  const Index a = axis < 0 ? axis + static_cast<Index>(nd) : axis;
  require(a >= 0 && a < static_cast<Index>(nd),
          "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(nd));
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x + y; },
      [](T, T, T& da, T& db) {
        da = T(1);
        db = T(1);
      });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x - y; },
      [](T, T, T& da, T& db) {
        da = T(1);
        db = T(-1);
      });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T& da, T& db) {
        da = y;
        db = x;
      });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T& da, T& db) {
        da = T(1) / y;
        db = -x / (y * y);
      });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Activations

/// Exact GELU, x * Phi(x) with the erf-based normal CDF.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(acc);
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    const T g = oi->grad[0];
    for (auto& d : xi->grad) d += g;
  });
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Spatial mean per channel: [B,C,H,W] -> [B,C,1,1].
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "global_avg_pool");
  const Index bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), 1, 1});
  for (Index i = 0; i < bc; ++i) {
    T acc = 0;
    const T* p = x.ptr() + i * hw;
    for (Index j = 0; j < hw; ++j) acc += p[j];
    out[i] = acc / static_cast<T>(hw);
  }
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), bc, hw] {
    if (!detail::wants(xi)) return;
    for (Index i = 0; i < bc; ++i) {
      const T g = oi->grad[static_cast<std::size_t>(i)] / static_cast<T>(hw);
      T* d = xi->grad.data() + i * hw;
      for (Index j = 0; j < hw; ++j) d[j] += g;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

/**
 * 2-D cross-correlation with zero padding.
 *
 * input [B,Cin,H,W], weight [Cout,Cin/groups,KH,KW], bias [Cout] or an
 * undefined tensor. Point-wise is k=1 groups=1, depth-wise is groups=Cin=Cout.
 */
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Index stride = 1,
                 Index pad = 0, Index groups = 1) {
  detail::require_4d(x.shape(), "conv2d");
  detail::require(w.ndim() == 4, "conv2d: weight must be [Cout,Cin/groups,KH,KW], got " + to_string(w.shape()));
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Cout = w.dim(0), CinG = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  detail::require(groups > 0 && stride > 0 && pad >= 0, "conv2d: invalid stride/pad/groups");
  detail::require(Cin % groups == 0 && Cout % groups == 0,
                  "conv2d: channels " + std::to_string(Cin) + "->" + std::to_string(Cout) +
                      " not divisible by groups=" + std::to_string(groups));
  detail::require(CinG * groups == Cin, "conv2d: input has " + std::to_string(Cin) +
                                            " channels but weight " + to_string(w.shape()) + " with groups=" +
                                            std::to_string(groups) + " expects " +
                                            std::to_string(CinG * groups));
  detail::require(!b.defined() || b.numel() == Cout,
                  "conv2d: bias has " + std::to_string(b.numel()) + " entries, expected " + std::to_string(Cout));
  const Index Ho = (H + 2 * pad - KH) / stride + 1;
  const Index Wo = (W + 2 * pad - KW) / stride + 1;
  detail::require(H + 2 * pad >= KH && W + 2 * pad >= KW,
                  "conv2d: kernel larger than padded input " + to_string(x.shape()));

  const Index CoutG = Cout / groups;
  const Index plane = H * W, oplane = Ho * Wo;
  const bool pointwise = KH == 1 && KW == 1 && stride == 1 && pad == 0;

  // Output column range [lo, hi] for which iw = ow*stride + kw - pad is in [0, W).
  auto col_range = [=](Index kw, Index& lo, Index& hi) {
    const Index a = pad - kw;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    const Index c = W - 1 + pad - kw;
    hi = c < 0 ? -1 : std::min(Wo - 1, c / stride);
  };

  Tensor<T> out({B, Cout, Ho, Wo});
  for (Index bi = 0; bi < B; ++bi) {
    for (Index co = 0; co < Cout; ++co) {
      const Index g = co / CoutG;
      T* o = out.ptr() + (bi * Cout + co) * oplane;
      std::fill(o, o + oplane, b.defined() ? b[co] : T(0));
      for (Index ci = 0; ci < CinG; ++ci) {
        const T* in = x.ptr() + (bi * Cin + g * CinG + ci) * plane;
        const T* wk = w.ptr() + (co * CinG + ci) * KH * KW;
        if (pointwise) {
          const T wv = wk[0];
          for (Index j = 0; j < plane; ++j) o[j] += wv * in[j];
          continue;
        }
        for (Index kh = 0; kh < KH; ++kh) {
          for (Index kw = 0; kw < KW; ++kw) {
            const T wv = wk[kh * KW + kw];
            Index lo, hi;
            col_range(kw, lo, hi);
            for (Index oh = 0; oh < Ho; ++oh) {
              const Index ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              T* orow = o + oh * Wo;
              const T* irow = in + ih * W + kw - pad;
              for (Index ow = lo; ow <= hi; ++ow) orow[ow] += wv * irow[ow * stride];
            }
          }
        }
      }
    }
  }

  detail::record(out, {&x, &w, &b}, [=, xi = x.impl(), wi = w.impl(), bi_ = b.impl(), oi = out.impl()] {
    const bool gx = detail::wants(xi), gw = detail::wants(wi), gb = bi_->requires_grad && detail::wants(bi_);
    const T* go_all = oi->grad.data();
    for (Index bi = 0; bi < B; ++bi) {
      for (Index co = 0; co < Cout; ++co) {
        const Index g = co / CoutG;
        const T* go = go_all + (bi * Cout + co) * oplane;
        if (gb) {
          T acc = 0;
          for (Index j = 0; j < oplane; ++j) acc += go[j];
          bi_->grad[static_cast<std::size_t>(co)] += acc;
        }
        for (Index ci = 0; ci < CinG; ++ci) {
          const Index cabs = g * CinG + ci;
          const T* in = xi->data.data() + (bi * Cin + cabs) * plane;
          T* din = gx ? xi->grad.data() + (bi * Cin + cabs) * plane : nullptr;
          const T* wk = wi->data.data() + (co * CinG + ci) * KH * KW;
          T* dwk = gw ? wi->grad.data() + (co * CinG + ci) * KH * KW : nullptr;
          if (pointwise) {
            const T wv = wk[0];
            T acc = 0;
            for (Index j = 0; j < plane; ++j) {
              if (din) din[j] += wv * go[j];
              acc += go[j] * in[j];
            }
            if (dwk) dwk[0] += acc;
            continue;
          }
          for (Index kh = 0; kh < KH; ++kh) {
            for (Index kw = 0; kw < KW; ++kw) {
              const T wv = wk[kh * KW + kw];
              Index lo, hi;
              col_range(kw, lo, hi);
              T acc = 0;
              for (Index oh = 0; oh < Ho; ++oh) {
                const Index ih = oh * stride + kh - pad;
                if (ih < 0 || ih >= H) continue;
                const T* grow = go + oh * Wo;
                const Index base = ih * W + kw - pad;
                for (Index ow = lo; ow <= hi; ++ow) {
                  const Index k = base + ow * stride;
                  acc += grow[ow] * in[k];
                  if (din) din[k] += wv * grow[ow];
                }
              }
              if (dwk) dwk[kh * KW + kw] += acc;
            }
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

/// Batched matrix product [...,M,K] x [...,K,N] -> [...,M,N]; leading dims broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.ndim() >= 2 && b.ndim() >= 2,
                  "matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index M = a.shape()[a.ndim() - 2], K = a.shape()[a.ndim() - 1];
  const Index K2 = b.shape()[b.ndim() - 2], N = b.shape()[b.ndim() - 1];
  detail::require(K == K2, "matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const Shape ba(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shape(ba, bb);
  std::vector<Index> offa, offb;
  offa.reserve(static_cast<std::size_t>(numel_of(batch)));
  offb.reserve(offa.capacity());
  detail::broadcast_loop(batch, detail::broadcast_strides(ba, batch), detail::broadcast_strides(bb, batch),
                         [&](Index, Index ia, Index ib) {
                           offa.push_back(ia * M * K);
                           offb.push_back(ib * K * N);
                         });
  Shape os = batch;
  os.push_back(M);
  os.push_back(N);
  Tensor<T> out(os);
  for (std::size_t n = 0; n < offa.size(); ++n) {
    const T* pa = a.ptr() + offa[n];
    const T* pb = b.ptr() + offb[n];
    T* po = out.ptr() + static_cast<Index>(n) * M * N;
    for (Index i = 0; i < M; ++i)
      for (Index k = 0; k < K; ++k) {
        const T av = pa[i * K + k];
        const T* brow = pb + k * N;
        T* orow = po + i * N;
        for (Index j = 0; j < N; ++j) orow[j] += av * brow[j];
      }
  }
  detail::record(out, {&a, &b}, [=, ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    const bool ga = detail::wants(ai), gb = detail::wants(bi);
    for (std::size_t n = 0; n < offa.size(); ++n) {
      const T* pa = ai->data.data() + offa[n];
      const T* pb = bi->data.data() + offb[n];
      const T* g = oi->grad.data() + static_cast<Index>(n) * M * N;
      T* da = ga ? ai->grad.data() + offa[n] : nullptr;
      T* db = gb ? bi->grad.data() + offb[n] : nullptr;
      for (Index i = 0; i < M; ++i) {
        const T* grow = g + i * N;
        for (Index k = 0; k < K; ++k) {
          const T* brow = pb + k * N;
          if (da) {
            T acc = 0;
            for (Index j = 0; j < N; ++j) acc += grow[j] * brow[j];
            da[i * K + k] += acc;
          }
          if (db) {
            const T av = pa[i * K + k];
            T* dbrow = db + k * N;
            for (Index j = 0; j < N; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
    }
  });
  return out;
}

/// Axis permutation: out.shape[i] = x.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<Index>& perm) {
  const std::size_t nd = x.ndim();
  detail::require(perm.size() == nd, "permute: permutation rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(nd, false);
  for (Index p : perm) {
    detail::require(p >= 0 && p < static_cast<Index>(nd) && !seen[static_cast<std::size_t>(p)],
                    "permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  const auto st = detail::contiguous_strides(x.shape());
  Shape os(nd);
  std::vector<Index> src(nd), zero(nd, 0);
  for (std::size_t i = 0; i < nd; ++i) {
    os[i] = x.shape()[static_cast<std::size_t>(perm[i])];
    src[i] = st[static_cast<std::size_t>(perm[i])];
  }
  Tensor<T> out(os);
  const T* px = x.ptr();
  T* po = out.ptr();
  detail::broadcast_loop(os, src, zero, [&](Index o, Index i, Index) { po[o] = px[i]; });
  detail::record(out, {&x}, [=, xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    T* d = xi->grad.data();
    const T* g = oi->grad.data();
    detail::broadcast_loop(os, src, zero, [&](Index o, Index i, Index) { d[i] += g[o]; });
  });
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel_of(shape) == x.numel(),
                  "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
  });
  return out;
}

/// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, Index axis) {
  const Index ax = detail::norm_axis(axis, x.ndim());
  const auto& s = x.shape();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < s.size(); ++i) inner *= s[i];
  const Index n = s[static_cast<std::size_t>(ax)];
  Tensor<T> out(s);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (Index o = 0; o < outer; ++o)
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      T mx = px[base];
      for (Index k = 1; k < n; ++k) mx = std::max(mx, px[base + k * inner]);
      T z = 0;
      for (Index k = 0; k < n; ++k) {
        const T e = std::exp(px[base + k * inner] - mx);
        po[base + k * inner] = e;
        z += e;
      }
      for (Index k = 0; k < n; ++k) po[base + k * inner] /= z;
    }
  detail::record(out, {&x}, [=, xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    const T* y = oi->data.data();
    const T* g = oi->grad.data();
    T* d = xi->grad.data();
    for (Index o = 0; o < outer; ++o)
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * n * inner + in;
        T dot = 0;
        for (Index k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (Index k = 0; k < n; ++k) d[base + k * inner] += y[base + k * inner] * (g[base + k * inner] - dot);
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and per-channel affine

/**
 * LayerNorm over the channel axis at each (b, h, w):
 * y = gamma * (x - mean_c) / sqrt(var_c + eps) + beta, with gamma, beta of shape [C].
 */
template <class T>
Tensor<T> layer_norm_channel(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6)) {
  detail::require_4d(x.shape(), "layer_norm_channel");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  detail::require(gamma.numel() == C && beta.numel() == C, "layer_norm_channel: gamma/beta must have C entries");
  detail::require(eps > 0, "layer_norm_channel: eps must be positive");
  Tensor<T> out(x.shape());
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> rstd(static_cast<std::size_t>(B * HW));
  for (Index b = 0; b < B; ++b) {
    const T* px = x.ptr() + b * C * HW;
    T* po = out.ptr() + b * C * HW;
    T* ph = xhat.data() + b * C * HW;
    for (Index p = 0; p < HW; ++p) {
      T mu = 0;
      for (Index c = 0; c < C; ++c) mu += px[c * HW + p];
      mu /= static_cast<T>(C);
      T var = 0;
      for (Index c = 0; c < C; ++c) {
        const T d = px[c * HW + p] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T r = T(1) / std::sqrt(var + eps);
      rstd[static_cast<std::size_t>(b * HW + p)] = r;
      for (Index c = 0; c < C; ++c) {
        const T h = (px[c * HW + p] - mu) * r;
        ph[c * HW + p] = h;
        po[c * HW + p] = gamma[c] * h + beta[c];
      }
    }
  }
  detail::record(out, {&x, &gamma, &beta},
                 [=, xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
                  xhat = std::move(xhat), rstd = std::move(rstd)] {
                   const bool gx = detail::wants(xi), gg = detail::wants(gi), gbt = detail::wants(bi);
                   const T* gam = gi->data.data();
                   std::vector<T> dxh(static_cast<std::size_t>(C));
                   for (Index b = 0; b < B; ++b) {
                     const T* g = oi->grad.data() + b * C * HW;
                     const T* ph = xhat.data() + b * C * HW;
                     T* dx = gx ? xi->grad.data() + b * C * HW : nullptr;
                     for (Index p = 0; p < HW; ++p) {
                       T m1 = 0, m2 = 0;
                       for (Index c = 0; c < C; ++c) {
                         const T gv = g[c * HW + p];
                         const T h = ph[c * HW + p];
                         if (gg) gi->grad[static_cast<std::size_t>(c)] += gv * h;
                         if (gbt) bi->grad[static_cast<std::size_t>(c)] += gv;
                         const T d = gv * gam[c];
                         dxh[static_cast<std::size_t>(c)] = d;
                         m1 += d;
                         m2 += d * h;
                       }
                       if (!dx) continue;
                       m1 /= static_cast<T>(C);
                       m2 /= static_cast<T>(C);
                       const T r = rstd[static_cast<std::size_t>(b * HW + p)];
                       for (Index c = 0; c < C; ++c)
                         dx[c * HW + p] += r * (dxh[static_cast<std::size_t>(c)] - m1 - ph[c * HW + p] * m2);
                     }
                   }
                 });
  return out;
}

/// x[B,C,H,W] * s[C], broadcast over batch and space.
template <class T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  detail::require_4d(x.shape(), "channel_scale");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  detail::require(s.numel() == C, "channel_scale: scale has " + std::to_string(s.numel()) + " entries, expected " +
                                      std::to_string(C));
  Tensor<T> out(x.shape());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const T* px = x.ptr() + (b * C + c) * HW;
      T* po = out.ptr() + (b * C + c) * HW;
      const T sv = s[c];
      for (Index j = 0; j < HW; ++j) po[j] = sv * px[j];
    }
  detail::record(out, {&x, &s}, [=, xi = x.impl(), si = s.impl(), oi = out.impl()] {
    const bool gx = detail::wants(xi), gs = detail::wants(si);
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c) {
        const Index off = (b * C + c) * HW;
        const T* g = oi->grad.data() + off;
        const T* px = xi->data.data() + off;
        const T sv = si->data[static_cast<std::size_t>(c)];
        T acc = 0;
        for (Index j = 0; j < HW; ++j) {
          if (gx) xi->grad[static_cast<std::size_t>(off + j)] += sv * g[j];
          acc += g[j] * px[j];
        }
        if (gs) si->grad[static_cast<std::size_t>(c)] += acc;
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Resampling layout ops

/// Depth-to-space: [B, C*r*r, H, W] -> [B, C, H*r, W*r].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, Index r) {
  detail::require_4d(x.shape(), "pixel_shuffle");
  const Index B = x.dim(0), Cr = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(r > 0 && Cr % (r * r) == 0, "pixel_shuffle: " + std::to_string(Cr) +
                                                  " channels not divisible by r^2=" + std::to_string(r * r));
  const Index C = Cr / (r * r);
  Tensor<T> out({B, C, H * r, W * r});
  std::vector<Index> src(static_cast<std::size_t>(out.numel()));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index oh = 0; oh < H * r; ++oh)
        for (Index ow = 0; ow < W * r; ++ow, ++o) {
          const Index ic = c * r * r + (oh % r) * r + (ow % r);
          src[static_cast<std::size_t>(o)] = ((b * Cr + ic) * H + oh / r) * W + ow / r;
        }
  for (Index i = 0; i < out.numel(); ++i) out[i] = x[src[static_cast<std::size_t>(i)]];
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), src = std::move(src)] {
    if (!detail::wants(xi)) return;
    for (std::size_t i = 0; i < src.size(); ++i) xi->grad[static_cast<std::size_t>(src[i])] += oi->grad[i];
  });
  return out;
}

/// Space-to-depth, the inverse of pixel_shuffle.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, Index r) {
  detail::require_4d(x.shape(), "pixel_unshuffle");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(r > 0 && H % r == 0 && W % r == 0, "pixel_unshuffle: spatial size not divisible by r");
  const Index Ho = H / r, Wo = W / r, Co = C * r * r;
  Tensor<T> out({B, Co, Ho, Wo});
  std::vector<Index> src(static_cast<std::size_t>(out.numel()));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index oc = 0; oc < Co; ++oc) {
      const Index c = oc / (r * r), i = (oc % (r * r)) / r, j = oc % r;
      for (Index h = 0; h < Ho; ++h)
        for (Index w = 0; w < Wo; ++w, ++o)
          src[static_cast<std::size_t>(o)] = ((b * C + c) * H + h * r + i) * W + w * r + j;
    }
  for (Index i = 0; i < out.numel(); ++i) out[i] = x[src[static_cast<std::size_t>(i)]];
  detail::record(out, {&x}, [xi = x.impl(), oi = out.impl(), src = std::move(src)] {
    if (!detail::wants(xi)) return;
    for (std::size_t i = 0; i < src.size(); ++i) xi->grad[static_cast<std::size_t>(src[i])] += oi->grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Batch-axis plumbing

template <class T>
Tensor<T> slice_batch(const Tensor<T>& x, Index start, Index count) {
  detail::require(x.ndim() >= 1 && start >= 0 && count > 0 && start + count <= x.dim(0),
                  "slice_batch: range out of bounds for " + to_string(x.shape()));
  Shape os = x.shape();
  os[0] = count;
  const Index per = x.numel() / x.dim(0);
  Tensor<T> out(os, std::vector<T>(x.data().begin() + start * per, x.data().begin() + (start + count) * per));
  detail::record(out, {&x}, [=, xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    for (Index i = 0; i < count * per; ++i)
      xi->grad[static_cast<std::size_t>(start * per + i)] += oi->grad[static_cast<std::size_t>(i)];
  });
  return out;
}

/// Top-left [.., h, w] window of a 4-D tensor.
template <class T>
Tensor<T> crop_hw(const Tensor<T>& x, Index h, Index w) {
  detail::require(x.ndim() == 4 && h > 0 && w > 0 && h <= x.dim(2) && w <= x.dim(3),
                  "crop_hw: window " + std::to_string(h) + "x" + std::to_string(w) + " does not fit " +
                      to_string(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({B, C, h, w});
  const auto src = x.data();
  auto dst = out.data();
  for (Index p = 0; p < B * C; ++p)
    for (Index i = 0; i < h; ++i)
      std::copy_n(src.begin() + (p * H + i) * W, w, dst.begin() + (p * h + i) * w);
  detail::record(out, {&x}, [=, xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    for (Index p = 0; p < B * C; ++p)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
          xi->grad[static_cast<std::size_t>((p * H + i) * W + j)] += oi->grad[static_cast<std::size_t>((p * h + i) * w + j)];
  });
  return out;
}

template <class T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.ndim() >= 1 && b.ndim() == a.ndim() &&
                      std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1),
                  "concat_batch: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  Shape os = a.shape();
  os[0] += b.dim(0);
  std::vector<T> d(a.data().begin(), a.data().end());
  d.insert(d.end(), b.data().begin(), b.data().end());
  Tensor<T> out(os, std::move(d));
  detail::record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    const std::size_t na = ai->data.size();
    if (detail::wants(ai))
      for (std::size_t i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
    if (detail::wants(bi))
      for (std::size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] += oi->grad[na + i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

/**
 * Separable 'valid' correlation of every plane with k (x) k, k a fixed 1-D
 * kernel: [N,C,H,W] -> [N,C,H-K+1,W-K+1]. The kernel is not differentiated.
 */
template <class T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, const std::vector<T>& k) {
  detail::require_4d(x.shape(), "separable_filter_valid");
  const Index K = static_cast<Index>(k.size());
  const Index NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(K >= 1 && H >= K && W >= K, "separable_filter_valid: image " + to_string(x.shape()) +
                                                  " smaller than the " + std::to_string(K) + "-tap window");
  const Index Ho = H - K + 1, Wo = W - K + 1;
  Tensor<T> out({x.dim(0), x.dim(1), Ho, Wo});
  std::vector<T> tmp(static_cast<std::size_t>(H * Wo));
  for (Index n = 0; n < NC; ++n) {
    const T* in = x.ptr() + n * H * W;
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < Wo; ++w) {
        T acc = 0;
        for (Index j = 0; j < K; ++j) acc += k[static_cast<std::size_t>(j)] * in[h * W + w + j];
        tmp[static_cast<std::size_t>(h * Wo + w)] = acc;
      }
    T* o = out.ptr() + n * Ho * Wo;
    for (Index h = 0; h < Ho; ++h)
      for (Index w = 0; w < Wo; ++w) {
        T acc = 0;
        for (Index i = 0; i < K; ++i) acc += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((h + i) * Wo + w)];
        o[h * Wo + w] = acc;
      }
  }
  detail::record(out, {&x}, [=, xi = x.impl(), oi = out.impl()] {
    if (!detail::wants(xi)) return;
    std::vector<T> gt(static_cast<std::size_t>(H * Wo));
    for (Index n = 0; n < NC; ++n) {
      std::fill(gt.begin(), gt.end(), T(0));
      const T* g = oi->grad.data() + n * Ho * Wo;
      for (Index h = 0; h < Ho; ++h)
        for (Index i = 0; i < K; ++i) {
          const T kv = k[static_cast<std::size_t>(i)];
          for (Index w = 0; w < Wo; ++w) gt[static_cast<std::size_t>((h + i) * Wo + w)] += kv * g[h * Wo + w];
        }
      T* d = xi->grad.data() + n * H * W;
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < Wo; ++w) {
          const T gv = gt[static_cast<std::size_t>(h * Wo + w)];
          for (Index j = 0; j < K; ++j) d[h * W + w + j] += k[static_cast<std::size_t>(j)] * gv;
        }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers

/// Values clamped to [lo, hi]; not recorded (export-time only).
template <class T>
Tensor<T> clamp_values(const Tensor<T>& x, T lo, T hi) {
  Tensor<T> out(x.shape());
  for (Index i = 0; i < x.numel(); ++i) out[i] = std::clamp(x[i], lo, hi);
  return out;
}

template <class T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace stereoirr
