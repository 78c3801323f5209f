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

// Tensor file layout (all integers little-endian):
//
//   "SIRR"  u32 version  u32 count
//   count x { u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dim, f32 payload }
//
// A checkpoint is a tensor file with these names:
//
//   param/<name>             model parameters
//   adam.m/<name>            first moments
//   adam.v/<name>            second moments
//   adam.t, epoch            u64 counters
//   rng.seed, rng.counter    trainer RNG position
//   model.*, train.*         configuration fields
//
// Scalars that do not fit a float exactly (u64, double, and every config
// value) are stored as 64-bit patterns split into four 16-bit limbs, least
// significant first, each an exactly representable float.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stereoirr/config.hpp"
#include "stereoirr/image.hpp"
#include "stereoirr/model.hpp"
#include "stereoirr/nn.hpp"
#include "stereoirr/optim.hpp"
#include "stereoirr/rng.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

inline constexpr char kTensorFileMagic[4] = {'S', 'I', 'R', 'R'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>("tensor payload")); }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated tensor file while reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensors(const ParamList<float>& tensors) {
  detail::ByteWriter w;
  w.raw(kTensorFileMagic, 4);
  w.le<std::uint32_t>(kTensorFileVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw ContractError("tensor name too long: " + name.substr(0, 40) + "...");
    if (t.ndim() > 0xFF) throw ContractError("too many dimensions for " + name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.ndim()));
    for (Index d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return std::move(w.bytes());
}

inline ParamList<float> decode_tensors(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(4, "magic") != std::string(kTensorFileMagic, 4)) throw FormatError("bad magic (not a SIRR tensor file)", 0);
  const std::size_t version_at = r.pos();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kTensorFileVersion)
    throw FormatError("unsupported tensor file version " + std::to_string(version), version_at);
  const auto count = r.le<std::uint32_t>("tensor count");
  ParamList<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>("name length");
    std::string name = r.str(len, "name");
    const auto nd = r.le<std::uint8_t>("ndim");
    Shape shape;
    for (std::uint8_t d = 0; d < nd; ++d) shape.push_back(r.le<std::uint32_t>("dims"));
    const auto n = static_cast<std::size_t>(numel_of(shape));
    r.need(4 * n, "tensor payload");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    out.push_back({std::move(name), Tensor<float>(shape, std::move(data))});
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.pos());
  return out;
}

inline void save_tensors(const std::filesystem::path& path, const ParamList<float>& tensors) {
  write_file(path, encode_tensors(tensors));
}

inline ParamList<float> load_tensors(const std::filesystem::path& path) { return decode_tensors(read_file(path)); }

/// 64-bit pattern as four exact 16-bit float limbs.
inline Tensor<float> pack_u64(std::uint64_t v) {
  return Tensor<float>({4}, {static_cast<float>(v & 0xFFFF), static_cast<float>((v >> 16) & 0xFFFF),
                             static_cast<float>((v >> 32) & 0xFFFF), static_cast<float>(v >> 48)});
}

inline std::uint64_t unpack_u64(const Tensor<float>& t, const std::string& name) {
  if (t.shape() != Shape{4}) throw ConfigError("checkpoint field " + name + " has shape " + to_string(t.shape()));
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const float f = t[i];
    if (!(f >= 0 && f <= 65535 && f == static_cast<float>(static_cast<std::uint32_t>(f))))
      throw ConfigError("checkpoint field " + name + " is not a valid limb encoding");
    v |= static_cast<std::uint64_t>(f) << (16 * i);
  }
  return v;
}

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParamList<float> params;
  AdamState<float> adam;
  std::int64_t epoch = 0;  // number of completed epochs
  RngState rng;
};

namespace detail {

class FieldMap {
 public:
  explicit FieldMap(ParamList<float> list) {
    for (auto& p : list) map_.emplace(p.name, std::move(p.tensor));
  }
  const Tensor<float>& at(const std::string& name) const {
    const auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("checkpoint is missing '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  std::uint64_t u64(const std::string& n) const { return unpack_u64(at(n), n); }
  double f64(const std::string& n) const { return std::bit_cast<double>(u64(n)); }
  Index idx(const std::string& n) const { return static_cast<Index>(u64(n)); }
  bool flag(const std::string& n) const { return u64(n) != 0; }
  std::vector<Index> list(const std::string& n) const {
    const auto& t = at(n);
    if (t.ndim() != 1 || t.numel() % 4) throw ConfigError("checkpoint field " + n + " is malformed");
    std::vector<Index> out;
    for (Index i = 0; i < t.numel(); i += 4) {
      Tensor<float> limb({4}, {t[i], t[i + 1], t[i + 2], t[i + 3]});
      out.push_back(static_cast<Index>(unpack_u64(limb, n)));
    }
    return out;
  }

 private:
  std::map<std::string, Tensor<float>> map_;
};

inline Tensor<float> pack_list(const std::vector<Index>& v) {
  std::vector<float> data;
  for (Index x : v) {
    const auto limb = pack_u64(static_cast<std::uint64_t>(x));
    data.insert(data.end(), limb.data().begin(), limb.data().end());
  }
  return Tensor<float>({static_cast<Index>(4 * v.size())}, std::move(data));
}

}  // namespace detail

inline ParamList<float> checkpoint_tensors(const Checkpoint& c) {
  if (c.adam.m.size() != c.params.size() || c.adam.v.size() != c.params.size())
    throw ContractError("checkpoint: optimizer state does not match parameter list");
  ParamList<float> out;
  for (const auto& p : c.params) out.push_back({"param/" + p.name, p.tensor});
  for (std::size_t i = 0; i < c.params.size(); ++i) out.push_back({"adam.m/" + c.params[i].name, c.adam.m[i]});
  for (std::size_t i = 0; i < c.params.size(); ++i) out.push_back({"adam.v/" + c.params[i].name, c.adam.v[i]});
  auto u = [&](const std::string& n, std::uint64_t v) { out.push_back({n, pack_u64(v)}); };
  auto d = [&](const std::string& n, double v) { u(n, std::bit_cast<std::uint64_t>(v)); };
  u("adam.t", static_cast<std::uint64_t>(c.adam.t));
  u("epoch", static_cast<std::uint64_t>(c.epoch));
  u("rng.seed", c.rng.seed);
  u("rng.counter", c.rng.counter);
  const auto& m = c.model;
  u("model.width", static_cast<std::uint64_t>(m.width));
  out.push_back({"model.encoder_blocks", detail::pack_list(m.encoder_blocks)});
  u("model.middle_blocks", static_cast<std::uint64_t>(m.middle_blocks));
  out.push_back({"model.decoder_blocks", detail::pack_list(m.decoder_blocks)});
  u("model.use_dma", m.use_dma);
  u("model.dma_every", static_cast<std::uint64_t>(m.dma_every));
  u("model.multi_scale", m.multi_scale);
  u("model.ffn_expansion", static_cast<std::uint64_t>(m.ffn_expansion));
  u("model.ca_reduction", static_cast<std::uint64_t>(m.ca_reduction));
  u("model.cross_value", m.cross_value);
  u("model.loss", static_cast<std::uint64_t>(m.loss));
  const auto& t = c.train;
  d("train.lr", t.lr);
  d("train.beta1", t.beta1);
  d("train.beta2", t.beta2);
  d("train.weight_decay", t.weight_decay);
  d("train.eps", t.eps);
  u("train.batch_size", static_cast<std::uint64_t>(t.batch_size));
  u("train.crop", static_cast<std::uint64_t>(t.crop));
  u("train.epochs", static_cast<std::uint64_t>(t.epochs));
  u("train.milestone_every", static_cast<std::uint64_t>(t.milestone_every));
  d("train.decay_factor", t.decay_factor);
  u("train.seed", t.seed);
  d("train.lambda_per", t.lambda_per);
  d("train.lambda_ssim", t.lambda_ssim);
  d("train.grad_clip", t.grad_clip);
  u("train.checkpoint_every", static_cast<std::uint64_t>(t.checkpoint_every));
  u("train.perceptual_seed", t.perceptual_seed);
  return out;
}

inline Checkpoint checkpoint_from_tensors(const ParamList<float>& list) {
  Checkpoint c;
  for (const auto& p : list)
    if (p.name.rfind("param/", 0) == 0) c.params.push_back({p.name.substr(6), p.tensor});
  const detail::FieldMap f(list);
  for (const auto& p : c.params) {
    const auto& m = f.at("adam.m/" + p.name);
    const auto& v = f.at("adam.v/" + p.name);
    if (m.shape() != p.tensor.shape() || v.shape() != p.tensor.shape())
      throw ConfigError("checkpoint: moment shape mismatch for " + p.name);
    c.adam.m.push_back(m);
    c.adam.v.push_back(v);
  }
  c.adam.t = static_cast<std::int64_t>(f.u64("adam.t"));
  c.epoch = static_cast<std::int64_t>(f.u64("epoch"));
  c.rng = {f.u64("rng.seed"), f.u64("rng.counter")};
  auto& m = c.model;
  m.width = f.idx("model.width");
  m.encoder_blocks = f.list("model.encoder_blocks");
  m.middle_blocks = f.idx("model.middle_blocks");
  m.decoder_blocks = f.list("model.decoder_blocks");
  m.use_dma = f.flag("model.use_dma");
  m.dma_every = f.idx("model.dma_every");
  m.multi_scale = f.flag("model.multi_scale");
  m.ffn_expansion = f.idx("model.ffn_expansion");
  m.ca_reduction = f.idx("model.ca_reduction");
  m.cross_value = f.flag("model.cross_value");
  const auto loss = f.u64("model.loss");
  if (loss > 1) throw ConfigError("checkpoint: unknown loss kind " + std::to_string(loss));
  m.loss = static_cast<LossKind>(loss);
  auto& t = c.train;
  t.lr = f.f64("train.lr");
  t.beta1 = f.f64("train.beta1");
  t.beta2 = f.f64("train.beta2");
  t.weight_decay = f.f64("train.weight_decay");
  t.eps = f.f64("train.eps");
  t.batch_size = f.idx("train.batch_size");
  t.crop = f.idx("train.crop");
  t.epochs = f.idx("train.epochs");
  t.milestone_every = f.idx("train.milestone_every");
  t.decay_factor = f.f64("train.decay_factor");
  t.seed = f.u64("train.seed");
  t.lambda_per = f.f64("train.lambda_per");
  t.lambda_ssim = f.f64("train.lambda_ssim");
  t.grad_clip = f.f64("train.grad_clip");
  t.checkpoint_every = f.idx("train.checkpoint_every");
  t.perceptual_seed = f.u64("train.perceptual_seed");
  return c;
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) { return encode_tensors(checkpoint_tensors(c)); }

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  return checkpoint_from_tensors(decode_tensors(bytes));
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

/// Snapshot of a model with fresh optimizer state (e.g. an untrained model).
inline Checkpoint make_checkpoint(const StereoIrrModel<float>& model, const TrainConfig& train = {}) {
  Checkpoint c;
  c.model = model.config();
  c.train = train;
  for (const auto& p : model.parameters()) c.params.push_back({p.name, p.tensor.clone()});
  c.adam = AdamState<float>::zeros_like(c.params);
  c.rng = Rng(train.seed).split("train").state();
  return c;
}

/**
 * Copies checkpoint parameters into `model`. A config mismatch throws
 * ConfigError listing every differing field.
 */
inline void restore_parameters(StereoIrrModel<float>& model, const Checkpoint& c) {
  const auto diff = diff_fields(model.config(), c.model);
  if (!diff.empty()) {
    std::string msg = "checkpoint is incompatible with the model config; differing fields:";
    for (const auto& f : diff) msg += " " + f;
    throw ConfigError(msg);
  }
  auto own = model.parameters();
  if (own.size() != c.params.size()) throw ConfigError("checkpoint parameter count differs from model");
  for (std::size_t i = 0; i < own.size(); ++i) {
    if (own[i].name != c.params[i].name || own[i].tensor.shape() != c.params[i].tensor.shape())
      throw ConfigError("checkpoint parameter mismatch at " + own[i].name);
    std::copy(c.params[i].tensor.data().begin(), c.params[i].tensor.data().end(), own[i].tensor.data().begin());
  }
}

/// Builds a model from the checkpoint's own config and loads its parameters.
inline StereoIrrModel<float> model_from_checkpoint(const Checkpoint& c) {
  StereoIrrModel<float> model(c.model, 0);
  restore_parameters(model, c);
  return model;
}

}  // namespace stereoirr
