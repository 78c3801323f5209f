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
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stereoirr/ops.hpp"
#include "stereoirr/rng.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  /// Entries probed per tensor; <= 0 probes every entry.
  Index max_entries = 0;
  /// Denominator floor, relative to the largest analytic entry over all of wrt.
  /// Keeps parameters whose true gradient is exactly zero from scoring round-off.
  double scale_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t probes = 0;
  bool passed = false;
};

/**
 * Compares reverse-mode gradients of f against central differences.
 *
 * f's output is reduced to a scalar by a fixed random projection,
 * loss = sum(f() * R), so the whole Jacobian is exercised rather than just its
 * column sums. `wrt` are handles into the storage f reads; they are perturbed
 * in place and restored.
 *
 * The error for one tensor is max_i |a_i - n_i| / max(|a|_inf, |n|_inf, s) over
 * the probed entries (a analytic, n numeric, s = scale_floor times the largest
 * analytic entry of any tensor); the report keeps the worst tensor.
 */
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> wrt,
                                  const GradCheckOptions& opt = {}) {
  Rng rng(opt.seed);
  Rng proj_rng = rng.split("projection");
  Rng probe_rng = rng.split("probes");

  Tensor<double> proj;
  auto projected = [&](const Tensor<double>& out) {
    if (!proj.defined()) {
      proj = Tensor<double>(out.shape());
      for (auto& v : proj.data()) v = proj_rng.normal();
    }
    return sum(mul(out, proj));
  };

  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const auto loss = projected(f());
    backward(loss, tape);
  }

  auto eval = [&] {
    NoGradScope<double> ng;
    return projected(f()).item();
  };

  double global = 0;
  for (const auto& t : wrt)
    for (double a : t.grad()) global = std::max(global, std::abs(a));

  GradCheckReport rep;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    const auto analytic = std::vector<double>(t.grad().begin(), t.grad().end());
    std::vector<Index> idx(static_cast<std::size_t>(t.numel()));
    for (Index i = 0; i < t.numel(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (opt.max_entries > 0 && t.numel() > opt.max_entries) {
      probe_rng.shuffle(idx);
      idx.resize(static_cast<std::size_t>(opt.max_entries));
    }
    double amax = 0, nmax = 0, dmax = 0;
    for (double a : analytic) amax = std::max(amax, std::abs(a));
    for (Index i : idx) {
      const double orig = t[i];
      t[i] = orig + opt.step;
      const double up = eval();
      t[i] = orig - opt.step;
      const double dn = eval();
      t[i] = orig;
      const double num = (up - dn) / (2 * opt.step);
      nmax = std::max(nmax, std::abs(num));
      dmax = std::max(dmax, std::abs(analytic[static_cast<std::size_t>(i)] - num));
      ++rep.probes;
    }
    const double denom = std::max({amax, nmax, opt.scale_floor * global, 1e-12});
    const double err = dmax / denom;
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_tensor = ti;
    }
  }
  rep.passed = rep.max_rel_error < opt.tolerance;
  return rep;
}

/// Shape-driven form: draws N(0,1) inputs of the given shapes and checks op.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& op,
                                  const std::vector<Shape>& input_shapes, const GradCheckOptions& opt = {}) {
  Rng rng = Rng(opt.seed).split("inputs");
  std::vector<Tensor<double>> inputs;
  for (const auto& s : input_shapes) {
    Tensor<double> t(s);
    for (auto& v : t.data()) v = rng.normal();
    inputs.push_back(t);
  }
  return grad_check([&] { return op(inputs); }, inputs, opt);
}

}  // namespace stereoirr
