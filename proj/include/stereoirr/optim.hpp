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

#include "stereoirr/nn.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
  double grad_clip = 0.0;     // global max-norm; 0 disables
};

/// First/second moments per parameter (same order as the parameter list) and step count.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t = 0;

  static AdamState zeros_like(const ParamList<T>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.shape(), T(0));
      s.v.emplace_back(p.tensor.shape(), T(0));
    }
    return s;
  }
};

/// Global L2 norm of all parameter gradients (missing grads count as zero).
template <class T>
double grad_norm(const ParamList<T>& params) {
  double acc = 0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

/**
 * One bias-corrected Adam update in place. Accumulation is done in double and
 * rounded once per element, so results do not depend on parameter order.
 */
template <class T>
void adam_step(const ParamList<T>& params, AdamState<T>& st, double lr, const AdamConfig& cfg) {
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("adam_step: optimizer state has " + std::to_string(st.m.size()) + " slots for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (st.m[i].shape() != params[i].tensor.shape() || st.v[i].shape() != params[i].tensor.shape())
      throw ShapeError("adam_step: moment shape mismatch for " + params[i].name);

  double scale = 1.0;
  if (cfg.grad_clip > 0) {
    const double n = grad_norm(params);
    if (n > cfg.grad_clip) scale = cfg.grad_clip / n;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor;  // shared handle
    auto w = p.data();
    auto m = st.m[i].data();
    auto v = st.v[i].data();
    const bool has = p.has_grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      double g = has ? static_cast<double>(p.grad()[k]) * scale : 0.0;
      if (cfg.weight_decay != 0) g += cfg.weight_decay * static_cast<double>(w[k]);
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1 - cfg.beta1) * g;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1 - cfg.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double upd = lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - upd);
    }
  }
}

/// Step decay: lr * decay^floor(epoch / milestone).
inline double lr_schedule(std::int64_t epoch, double lr, std::int64_t milestone, double decay) {
  if (epoch < 0) throw ContractError("lr_schedule: epoch must be >= 0");
  if (milestone <= 0) return lr;
  return lr * std::pow(decay, static_cast<double>(epoch / milestone));
}

}  // namespace stereoirr
