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

// Flat key=value settings with dotted namespaces:
//
//   # comment
//   model.width = 16
//   model.encoder_blocks = 1,1
//   train.lr = 5e-4
//
// Every key maps onto one field of ModelConfig, TrainConfig or DataGenConfig.
// Unknown keys are rejected by name.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stereoirr/losses.hpp"
#include "stereoirr/model.hpp"
#include "stereoirr/optim.hpp"
#include "stereoirr/synth.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double weight_decay = 0.0;
  double eps = 1e-8;
  Index batch_size = 3;
  Index crop = 320;  // 0 trains on full images (all must share one size)
  Index epochs = 200;
  Index milestone_every = 50;
  double decay_factor = 0.5;
  std::uint64_t seed = 0;
  double lambda_per = 0.1;
  double lambda_ssim = 1.0;
  double grad_clip = 0.0;
  Index checkpoint_every = 10;  // 0: only at the end
  std::uint64_t perceptual_seed = PerceptualExtractor<float>::kDefaultSeed;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  AdamConfig adam() const { return {beta1, beta2, eps, weight_decay, grad_clip}; }
  LossWeights loss_weights() const { return {lambda_per, lambda_ssim}; }
  double lr_at(Index epoch) const { return lr_schedule(epoch, lr, milestone_every, decay_factor); }

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train.eps must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (crop < 0) throw ConfigError("train.crop must be >= 0");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (milestone_every < 0) throw ConfigError("train.milestone_every must be >= 0");
    if (!(decay_factor > 0)) throw ConfigError("train.decay_factor must be positive");
    if (lambda_per < 0 || lambda_ssim < 0) throw ConfigError("train.lambda_* must be >= 0");
    if (grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  }
};

inline std::vector<std::string> diff_fields(const TrainConfig& a, const TrainConfig& b) {
  std::vector<std::string> d;
#define SIRR_DIFF(f) \
  if (a.f != b.f) d.push_back("train." #f);
  SIRR_DIFF(lr)
  SIRR_DIFF(beta1)
  SIRR_DIFF(beta2)
  SIRR_DIFF(weight_decay)
  SIRR_DIFF(eps)
  SIRR_DIFF(batch_size)
  SIRR_DIFF(crop)
  SIRR_DIFF(epochs)
  SIRR_DIFF(milestone_every)
  SIRR_DIFF(decay_factor)
  SIRR_DIFF(seed)
  SIRR_DIFF(lambda_per)
  SIRR_DIFF(lambda_ssim)
  SIRR_DIFF(grad_clip)
  SIRR_DIFF(checkpoint_every)
  SIRR_DIFF(perceptual_seed)
#undef SIRR_DIFF
  return d;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if (!v.empty() && v[0] == '+') ++first;
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<N>)
    r = std::from_chars(first, last, out, std::chars_format::general);
  else
    r = std::from_chars(first, last, out);
  if (r.ec != std::errc() || r.ptr != last || first == last)
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "' (use on/off)");
}

inline std::vector<Index> parse_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for key '" + key + "'");
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

/// Everything a command can be configured with.
struct Settings {
  ModelConfig model;
  TrainConfig train;
  DataGenConfig data;

  /// Sets one field; throws ConfigError naming the key if it is unknown or the value is bad.
  void set(const std::string& key, const std::string& raw) {
    const auto& tbl = table();
    const auto it = tbl.find(key);
    if (it == tbl.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(*this, key, detail::trim(raw));
  }

  std::string get(const std::string& key) const {
    const auto& tbl = table();
    const auto it = tbl.find(key);
    if (it == tbl.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(*this);
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : table()) out.push_back(k);
    return out;
  }

  static bool known(const std::string& key) { return table().count(key) > 0; }

  /// One `key = value` line per field, sorted by key.
  std::string dump() const {
    std::string out;
    for (const auto& [k, f] : table()) out += k + " = " + f.get(*this) + "\n";
    return out;
  }

  void validate() const {
    model.validate();
    train.validate();
  }

 private:
  struct Field {
    std::function<void(Settings&, const std::string&, const std::string&)> set;
    std::function<std::string(const Settings&)> get;
  };

  template <class N, class Sel>
  static Field num(Sel sel) {
    return {[sel](Settings& s, const std::string& k, const std::string& v) { sel(s) = detail::parse_number<N>(k, v); },
            [sel](const Settings& s) {
              if constexpr (std::is_floating_point_v<N>)
                return detail::format_double(sel(const_cast<Settings&>(s)));
              else
                return std::to_string(sel(const_cast<Settings&>(s)));
            }};
  }

  template <class Sel>
  static Field flag(Sel sel) {
    return {[sel](Settings& s, const std::string& k, const std::string& v) { sel(s) = detail::parse_bool(k, v); },
            [sel](const Settings& s) { return std::string(sel(const_cast<Settings&>(s)) ? "on" : "off"); }};
  }

  template <class Sel>
  static Field list(Sel sel) {
    return {[sel](Settings& s, const std::string& k, const std::string& v) { sel(s) = detail::parse_list(k, v); },
            [sel](const Settings& s) {
              std::string out;
              for (Index n : sel(const_cast<Settings&>(s))) out += (out.empty() ? "" : ",") + std::to_string(n);
              return out;
            }};
  }

  static const std::map<std::string, Field>& table() {
    static const std::map<std::string, Field> t = [] {
      std::map<std::string, Field> m;
      m["model.width"] = num<Index>([](Settings& s) -> Index& { return s.model.width; });
      m["model.encoder_blocks"] = list([](Settings& s) -> std::vector<Index>& { return s.model.encoder_blocks; });
      m["model.middle_blocks"] = num<Index>([](Settings& s) -> Index& { return s.model.middle_blocks; });
      m["model.decoder_blocks"] = list([](Settings& s) -> std::vector<Index>& { return s.model.decoder_blocks; });
      m["model.use_dma"] = flag([](Settings& s) -> bool& { return s.model.use_dma; });
      m["model.dma_every"] = num<Index>([](Settings& s) -> Index& { return s.model.dma_every; });
      m["model.multi_scale"] = flag([](Settings& s) -> bool& { return s.model.multi_scale; });
      m["model.ffn_expansion"] = num<Index>([](Settings& s) -> Index& { return s.model.ffn_expansion; });
      m["model.ca_reduction"] = num<Index>([](Settings& s) -> Index& { return s.model.ca_reduction; });
      m["model.cross_value"] = flag([](Settings& s) -> bool& { return s.model.cross_value; });
      m["model.loss"] = {[](Settings& s, const std::string&, const std::string& v) { s.model.loss = parse_loss_kind(v); },
                         [](const Settings& s) { return to_string(s.model.loss); }};

      m["train.lr"] = num<double>([](Settings& s) -> double& { return s.train.lr; });
      m["train.beta1"] = num<double>([](Settings& s) -> double& { return s.train.beta1; });
      m["train.beta2"] = num<double>([](Settings& s) -> double& { return s.train.beta2; });
      m["train.weight_decay"] = num<double>([](Settings& s) -> double& { return s.train.weight_decay; });
      m["train.eps"] = num<double>([](Settings& s) -> double& { return s.train.eps; });
      m["train.batch_size"] = num<Index>([](Settings& s) -> Index& { return s.train.batch_size; });
      m["train.crop"] = num<Index>([](Settings& s) -> Index& { return s.train.crop; });
      m["train.epochs"] = num<Index>([](Settings& s) -> Index& { return s.train.epochs; });
      m["train.milestone_every"] = num<Index>([](Settings& s) -> Index& { return s.train.milestone_every; });
      m["train.decay_factor"] = num<double>([](Settings& s) -> double& { return s.train.decay_factor; });
      m["train.seed"] = num<std::uint64_t>([](Settings& s) -> std::uint64_t& { return s.train.seed; });
      m["train.lambda_per"] = num<double>([](Settings& s) -> double& { return s.train.lambda_per; });
      m["train.lambda_ssim"] = num<double>([](Settings& s) -> double& { return s.train.lambda_ssim; });
      m["train.grad_clip"] = num<double>([](Settings& s) -> double& { return s.train.grad_clip; });
      m["train.checkpoint_every"] = num<Index>([](Settings& s) -> Index& { return s.train.checkpoint_every; });
      m["train.perceptual_seed"] =
          num<std::uint64_t>([](Settings& s) -> std::uint64_t& { return s.train.perceptual_seed; });

      m["scene.height"] = num<Index>([](Settings& s) -> Index& { return s.data.height; });
      m["scene.width"] = num<Index>([](Settings& s) -> Index& { return s.data.width; });
      m["scene.layers_min"] = num<Index>([](Settings& s) -> Index& { return s.data.layers_min; });
      m["scene.layers_max"] = num<Index>([](Settings& s) -> Index& { return s.data.layers_max; });
      m["scene.depth_min"] = num<double>([](Settings& s) -> double& { return s.data.depth_min; });
      m["scene.depth_max"] = num<double>([](Settings& s) -> double& { return s.data.depth_max; });
      m["scene.fb_min"] = num<double>([](Settings& s) -> double& { return s.data.fb_min; });
      m["scene.fb_max"] = num<double>([](Settings& s) -> double& { return s.data.fb_max; });
      m["rain.density_min"] = num<double>([](Settings& s) -> double& { return s.data.density_min; });
      m["rain.density_max"] = num<double>([](Settings& s) -> double& { return s.data.density_max; });
      m["rain.angle_min"] = num<double>([](Settings& s) -> double& { return s.data.rain.angle_min; });
      m["rain.angle_max"] = num<double>([](Settings& s) -> double& { return s.data.rain.angle_max; });
      m["rain.length_min"] = num<double>([](Settings& s) -> double& { return s.data.rain.length_min; });
      m["rain.length_max"] = num<double>([](Settings& s) -> double& { return s.data.rain.length_max; });
      m["rain.width_min"] = num<double>([](Settings& s) -> double& { return s.data.rain.width_min; });
      m["rain.width_max"] = num<double>([](Settings& s) -> double& { return s.data.rain.width_max; });
      m["rain.intensity_min"] = num<double>([](Settings& s) -> double& { return s.data.rain.intensity_min; });
      m["rain.intensity_max"] = num<double>([](Settings& s) -> double& { return s.data.rain.intensity_max; });
      m["rain.rho"] = num<double>([](Settings& s) -> double& { return s.data.rain.rho; });
      m["rain.disparity_max"] = num<Index>([](Settings& s) -> Index& { return s.data.rain.disparity_max; });
      return m;
    }();
    return t;
  }
};

/// Short names accepted in ablation grids for the Table-1 style axes.
inline std::string expand_key(const std::string& key) {
  static const std::map<std::string, std::string> alias = {
      {"dma", "model.use_dma"},      {"scale", "model.multi_scale"}, {"loss", "model.loss"},
      {"width", "model.width"},      {"encoder", "model.encoder_blocks"}, {"decoder", "model.decoder_blocks"},
      {"middle", "model.middle_blocks"}, {"patch", "train.crop"}};
  const auto it = alias.find(key);
  return it == alias.end() ? key : it->second;
}

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines; '#' starts a comment. Keys are not validated here.
inline std::vector<KeyValue> parse_key_values(const std::string& text) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
    KeyValue kv{detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)), no};
    if (kv.key.empty()) throw ConfigError("line " + std::to_string(no) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

inline void apply_config_text(Settings& s, const std::string& text) {
  for (const auto& kv : parse_key_values(text)) {
    try {
      s.set(kv.key, kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
}

inline void apply_config_file(Settings& s, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    apply_config_text(s, ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Applies a `key=value` override as given on the command line.
inline void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  s.set(detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

}  // namespace stereoirr
