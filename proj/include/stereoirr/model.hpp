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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stereoirr/dma.hpp"
#include "stereoirr/nn.hpp"
#include "stereoirr/ops.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

enum class LossKind { Hybrid, Mse };

inline std::string to_string(LossKind k) { return k == LossKind::Hybrid ? "hybrid" : "mse"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "hybrid" || s == "per+ssim") return LossKind::Hybrid;
  if (s == "mse") return LossKind::Mse;
  throw ConfigError("unknown loss '" + s + "' (expected hybrid or mse)");
}

/// Architecture knobs. Defaults are the full-size configuration.
struct ModelConfig {
  Index width = 30;
  std::vector<Index> encoder_blocks{3, 3, 3, 3, 3};
  Index middle_blocks = 1;
  std::vector<Index> decoder_blocks{3, 3, 3, 3, 3};
  bool use_dma = true;
  Index dma_every = 1;  // a DMA follows every dma_every-th block of a stage
  bool multi_scale = true;
  Index ffn_expansion = 2;
  Index ca_reduction = 2;
  bool cross_value = false;
  LossKind loss = LossKind::Hybrid;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  /// Number of down/up resampling steps (one per encoder stage).
  Index levels() const { return multi_scale ? static_cast<Index>(encoder_blocks.size()) : 0; }

  void validate() const {
    if (width <= 0) throw ConfigError("model.width must be positive");
    if (encoder_blocks.size() != decoder_blocks.size())
      throw ConfigError("model.encoder_blocks and model.decoder_blocks must have the same length (" +
                        std::to_string(encoder_blocks.size()) + " vs " + std::to_string(decoder_blocks.size()) + ")");
    for (Index n : encoder_blocks)
      if (n < 0) throw ConfigError("model.encoder_blocks entries must be >= 0");
    for (Index n : decoder_blocks)
      if (n < 0) throw ConfigError("model.decoder_blocks entries must be >= 0");
    if (middle_blocks < 0) throw ConfigError("model.middle_blocks must be >= 0");
    if (dma_every <= 0) throw ConfigError("model.dma_every must be positive");
    if (ffn_expansion <= 0) throw ConfigError("model.ffn_expansion must be positive");
    if (ca_reduction <= 0 || width % ca_reduction)
      throw ConfigError("model.width must be divisible by model.ca_reduction");
  }

  /// Channel width of encoder stage `i` (i == levels gives the middle stage).
  Index stage_width(std::size_t i) const { return multi_scale ? width << i : width; }
};

/// Names of fields where two configs differ.
inline std::vector<std::string> diff_fields(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> d;
  if (a.width != b.width) d.push_back("model.width");
  if (a.encoder_blocks != b.encoder_blocks) d.push_back("model.encoder_blocks");
  if (a.middle_blocks != b.middle_blocks) d.push_back("model.middle_blocks");
  if (a.decoder_blocks != b.decoder_blocks) d.push_back("model.decoder_blocks");
  if (a.use_dma != b.use_dma) d.push_back("model.use_dma");
  if (a.dma_every != b.dma_every) d.push_back("model.dma_every");
  if (a.multi_scale != b.multi_scale) d.push_back("model.multi_scale");
  if (a.ffn_expansion != b.ffn_expansion) d.push_back("model.ffn_expansion");
  if (a.ca_reduction != b.ca_reduction) d.push_back("model.ca_reduction");
  if (a.cross_value != b.cross_value) d.push_back("model.cross_value");
  if (a.loss != b.loss) d.push_back("model.loss");
  return d;
}

/// Feature-map shape at the bottleneck for a [B,3,H,W] input pair (views stacked: 2B).
inline Shape bottleneck_shape(const ModelConfig& cfg, Index batch, Index h, Index w) {
  const Index l = cfg.levels();
  return {2 * batch, cfg.stage_width(static_cast<std::size_t>(l)), h >> l, w >> l};
}

template <class T>
struct StereoOutput {
  Tensor<T> left;
  Tensor<T> right;
};

/// A BasicBlock optionally followed by a DMA layer.
template <class T>
struct Unit {
  BasicBlock<T> block;
  std::optional<DmaLayer<T>> dma;
};

template <class T>
struct EncoderStage {
  std::vector<Unit<T>> units;
  std::optional<Downsample<T>> down;
};

template <class T>
struct DecoderStage {
  std::optional<Upsample<T>> up;
  std::vector<Unit<T>> units;
};

/**
 * Stereo deraining network: a shared 3x3 head, a U-shaped trunk of
 * BasicBlocks with interleaved DMA layers, and a 3x3 tail that predicts a
 * residual added back to each input view. Both views run through the shared
 * layers stacked along the batch axis (left first).
 *
 * All residual gates and the tail start at zero, so a freshly built model
 * returns its inputs unchanged.
 */
template <class T>
class StereoIrrModel {
 public:
  StereoIrrModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const Rng root(seed);
    head_ = Conv2d<T>::conv3x3(3, cfg_.width, root.split("head"));
    const std::size_t n = cfg_.encoder_blocks.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::string name = "encoders." + std::to_string(i);
      EncoderStage<T> st;
      st.units = make_units(cfg_.encoder_blocks[i], cfg_.stage_width(i), root, name);
      if (cfg_.multi_scale) st.down = Downsample<T>(cfg_.stage_width(i), root.split(name + ".down"));
      encoders_.push_back(std::move(st));
    }
    middle_ = make_units(cfg_.middle_blocks, cfg_.stage_width(n), root, "middle");
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t level = n - 1 - j;
      const std::string name = "decoders." + std::to_string(j);
      DecoderStage<T> st;
      if (cfg_.multi_scale) st.up = Upsample<T>(cfg_.stage_width(level + 1), root.split(name + ".up"));
      st.units = make_units(cfg_.decoder_blocks[j], cfg_.stage_width(level), root, name);
      decoders_.push_back(std::move(st));
    }
    tail_ = Conv2d<T>::conv3x3(cfg_.width, 3, root.split("tail"));
    tail_.zero();
  }

  const ModelConfig& config() const { return cfg_; }

  /// Shared head conv on both views: [B,3,H,W] x 2 -> [2B,C,H,W].
  Tensor<T> feature_extraction(const Tensor<T>& x_l, const Tensor<T>& x_r) const {
    detail::require_4d(x_l.shape(), "feature_extraction");
    if (x_l.shape() != x_r.shape())
      throw ShapeError("feature_extraction: left " + to_string(x_l.shape()) + " and right " +
                       to_string(x_r.shape()) + " differ");
    if (x_l.dim(1) != 3) throw ShapeError("feature_extraction: expected 3-channel images, got " + to_string(x_l.shape()));
    const Index m = Index{1} << cfg_.levels();
    if (x_l.dim(2) % m || x_l.dim(3) % m)
      throw ShapeError("feature_extraction: " + std::to_string(x_l.dim(2)) + "x" + std::to_string(x_l.dim(3)) +
                       " is not a multiple of " + std::to_string(m) + "; pad with pad_reflect(levels=" +
                       std::to_string(cfg_.levels()) + ") first");
    return head_(concat_batch(x_l, x_r));
  }

  /// U-net trunk; output has the shape of its input.
  Tensor<T> lci_forward(const Tensor<T>& f0) const {
    Tensor<T> x = f0;
    std::vector<Tensor<T>> skips;
    for (const auto& st : encoders_) {
      x = run_units(st.units, x);
      skips.push_back(x);
      if (st.down) x = (*st.down)(x);
    }
    x = run_units(middle_, x);
    for (std::size_t j = 0; j < decoders_.size(); ++j) {
      const auto& st = decoders_[j];
      if (st.up) x = (*st.up)(x);
      x = add(x, skips[skips.size() - 1 - j]);
      x = run_units(st.units, x);
    }
    return x;
  }

  /// Tail conv to a 3-channel residual per view, added to the inputs.
  StereoOutput<T> residual_prediction(const Tensor<T>& fd, const Tensor<T>& x_l, const Tensor<T>& x_r) const {
    const auto y = add(concat_batch(x_l, x_r), tail_(fd));
    const Index b = x_l.dim(0);
    return {slice_batch(y, 0, b), slice_batch(y, b, b)};
  }

  StereoOutput<T> forward(const Tensor<T>& x_l, const Tensor<T>& x_r) const {
    return residual_prediction(lci_forward(feature_extraction(x_l, x_r)), x_l, x_r);
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    head_.collect("head", out);
    for (std::size_t i = 0; i < encoders_.size(); ++i) {
      const std::string name = "encoders." + std::to_string(i);
      collect_units(encoders_[i].units, name, out);
      if (encoders_[i].down) encoders_[i].down->collect(name + ".down", out);
    }
    collect_units(middle_, "middle", out);
    for (std::size_t j = 0; j < decoders_.size(); ++j) {
      const std::string name = "decoders." + std::to_string(j);
      if (decoders_[j].up) decoders_[j].up->collect(name + ".up", out);
      collect_units(decoders_[j].units, name, out);
    }
    tail_.collect("tail", out);
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  /// All DMA layers in forward order.
  std::vector<DmaLayer<T>*> dma_layers() {
    std::vector<DmaLayer<T>*> out;
    auto grab = [&](std::vector<Unit<T>>& us) {
      for (auto& u : us)
        if (u.dma) out.push_back(&*u.dma);
    };
    for (auto& e : encoders_) grab(e.units);
    grab(middle_);
    for (auto& d : decoders_) grab(d.units);
    return out;
  }

  /// Copies values (not grads) from another model with the same parameter names.
  template <class U>
  void load_values_from(const StereoIrrModel<U>& other) {
    const auto src = other.parameters();
    auto dst = parameters();
    if (src.size() != dst.size()) throw ConfigError("load_values_from: parameter lists differ");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape())
        throw ConfigError("load_values_from: mismatch at " + dst[i].name);
      auto d = dst[i].tensor.data();
      auto s = src[i].tensor.data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(s[k]);
    }
  }

 private:
  std::vector<Unit<T>> make_units(Index count, Index c, const Rng& root, const std::string& prefix) const {
    std::vector<Unit<T>> us;
    for (Index k = 0; k < count; ++k) {
      const std::string name = prefix + ".units." + std::to_string(k);
      Unit<T> u{BasicBlock<T>(c, cfg_.ffn_expansion, cfg_.ca_reduction, root.split(name + ".block")), std::nullopt};
      if (cfg_.use_dma && (k + 1) % cfg_.dma_every == 0)
        u.dma = DmaLayer<T>(c, cfg_.cross_value, root.split(name + ".dma"));
      us.push_back(std::move(u));
    }
    return us;
  }

  static Tensor<T> run_units(const std::vector<Unit<T>>& us, Tensor<T> x) {
    for (const auto& u : us) {
      x = u.block(x);
      if (u.dma) {
        const Index b = x.dim(0) / 2;
        const auto o = dma_forward(slice_batch(x, 0, b), slice_batch(x, b, b), *u.dma);
        x = concat_batch(o.left, o.right);
      }
    }
    return x;
  }

  static void collect_units(const std::vector<Unit<T>>& us, const std::string& prefix, ParamList<T>& out) {
    for (std::size_t k = 0; k < us.size(); ++k) {
      const std::string name = prefix + ".units." + std::to_string(k);
      us[k].block.collect(name + ".block", out);
      if (us[k].dma) us[k].dma->collect(name + ".dma", out);
    }
  }

  ModelConfig cfg_;
  Conv2d<T> head_;
  std::vector<EncoderStage<T>> encoders_;
  std::vector<Unit<T>> middle_;
  std::vector<DecoderStage<T>> decoders_;
  Conv2d<T> tail_;
};

// ---------------------------------------------------------------------------
// Padding to the resampling grid

/// How to undo pad_reflect.
struct CropSpec {
  Index height = 0;
  Index width = 0;
  Index pad_bottom = 0;
  Index pad_right = 0;

  bool empty() const { return pad_bottom == 0 && pad_right == 0; }
};

template <class T>
struct PaddedImage {
  Tensor<T> image;
  CropSpec crop;
};

/// Mirror index without repeating the edge sample (numpy "reflect").
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Reflect-pads bottom/right of a [B,C,H,W] image up to multiples of 2^levels.
template <class T>
PaddedImage<T> pad_reflect(const Tensor<T>& x, Index levels) {
  detail::require_4d(x.shape(), "pad_reflect");
  if (levels < 0) throw ShapeError("pad_reflect: levels must be >= 0");
  const Index m = Index{1} << levels;
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
  CropSpec spec{H, W, Hp - H, Wp - W};
  if (spec.empty()) return {x, spec};
  Tensor<T> out({B, C, Hp, Wp});
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < Hp; ++h)
        for (Index w = 0; w < Wp; ++w) out.at(b, c, h, w) = x.at(b, c, reflect_index(h, H), reflect_index(w, W));
  return {out, spec};
}

template <class T>
Tensor<T> crop_to(const Tensor<T>& x, const CropSpec& spec) {
  if (spec.empty()) return x;
  detail::require_4d(x.shape(), "crop_to");
  return crop_hw(x, spec.height, spec.width);
}

/// pad -> forward -> crop, without recording.
template <class T>
StereoOutput<T> infer(const StereoIrrModel<T>& model, const Tensor<T>& x_l, const Tensor<T>& x_r) {
  NoGradScope<T> ng;
  const auto pl = pad_reflect(x_l, model.config().levels());
  const auto pr = pad_reflect(x_r, model.config().levels());
  const auto y = model.forward(pl.image, pr.image);
  return {crop_to(y.left, pl.crop), crop_to(y.right, pr.crop)};
}

}  // namespace stereoirr
