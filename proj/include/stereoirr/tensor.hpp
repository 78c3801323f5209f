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

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stereoirr {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Violated calling contract (e.g. backward from a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/**
 * Shared handle to a dense row-major buffer. Copies alias the same storage;
 * use clone() for a detached deep copy. Ops never write into their inputs.
 */
template <class T>
class Tensor {
 public:
  using value_type = T;

  /// Undefined placeholder (shape [0], no data).
  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) { impl_->shape = {0}; }

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    for (Index d : shape)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    impl_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : Tensor(std::move(shape)) {
    if (data.size() != impl_->data.size())
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       to_string(impl_->shape));
    impl_->data = std::move(data);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return impl_->shape; }
  Index dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t ndim() const { return impl_->shape.size(); }
  Index numel() const { return static_cast<Index>(impl_->data.size()); }
  bool defined() const { return !impl_->data.empty(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T item() const {
    if (impl_->data.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  T& operator[](Index i) { return impl_->data[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  /// Element of a 4-D tensor.
  T& at(Index b, Index c, Index h, Index w) {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((b * s[1] + c) * s[2] + h) * s[3] + w)];
  }
  const T& at(Index b, Index c, Index h, Index w) const {
    return const_cast<Tensor*>(this)->at(b, c, h, w);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) impl_->ensure_grad();
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<T> grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  std::span<const T> grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  /// Deep copy of the values; the copy does not require grad.
  Tensor clone() const { return Tensor(impl_->shape, impl_->data); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(impl_->shape, std::vector<U>(impl_->data.begin(), impl_->data.end()));
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// One recorded op: the output it produced, its inputs, and how to push
/// the output gradient back into them.
template <class T>
struct TapeEntry {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::shared_ptr<TensorImpl<T>> output;
  std::function<void()> backward;
};

/**
 * Ordered record of differentiable ops. Entries are appended as ops run, so
 * the list is topologically sorted by construction.
 */
template <class T>
class Tape {
 public:
  void record(TapeEntry<T> e) { entries_.push_back(std::move(e)); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  const std::vector<TapeEntry<T>>& entries() const { return entries_; }

 private:
  std::vector<TapeEntry<T>> entries_;
};

template <class T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording target on this thread for the scope's lifetime.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suspends recording (inference, frozen feature targets).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape<T>()) { active_tape<T>() = nullptr; }
  ~NoGradScope() { active_tape<T>() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

/// Records `fn` if a tape is active and any input needs a gradient.
template <class T, class Fn>
void record(Tensor<T>& out, const std::vector<const Tensor<T>*>& inputs, Fn&& fn) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return;
  bool any = false;
  for (const auto* t : inputs) any = any || t->requires_grad();
  if (!any) return;
  out.impl()->requires_grad = true;
  TapeEntry<T> e;
  for (const auto* t : inputs) e.inputs.push_back(t->impl());
  e.output = out.impl();
  e.backward = std::forward<Fn>(fn);
  tape->record(std::move(e));
}

template <class T>
bool wants(const std::shared_ptr<TensorImpl<T>>& t) {
  if (!t->requires_grad) return false;
  t->ensure_grad();
  return true;
}

}  // namespace detail

/**
 * Reverse sweep from a scalar loss. Gradients are summed into every
 * requires_grad tensor reachable through the tape; the tape is cleared
 * afterwards. Callers zero parameter gradients between steps.
 */
template <class T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  if (loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  auto root = loss.impl();
  root->ensure_grad();
  root->grad[0] += T(1);
  const auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // nothing flowed here
    it->backward();
  }
  for (const auto& e : entries)
    for (const auto& in : e.inputs)
      if (in->requires_grad) in->ensure_grad();
  tape.clear();
}

}  // namespace stereoirr
