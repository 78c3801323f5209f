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

// Procedural stereo data. Scenes are stacks of fronto-parallel textured
// layers; the right view samples every layer f*b/z pixels further right, so
// ground-truth disparity is exact. Rain is an additive layer of bright
// anti-aliased streaks, partially shared between the two views.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stereoirr/image.hpp"
#include "stereoirr/rng.hpp"
#include "stereoirr/tensor.hpp"

namespace stereoirr {

struct SceneParams {
  std::uint64_t seed = 0;
  Index height = 64;
  Index width = 64;
  /// Baseline times focal length, in pixel x depth units.
  double fb = 16.0;
  /// Layer depths ordered far to near; layer 0 is the full-frame background.
  std::vector<double> depths{8.0, 4.0, 2.0};

  /// Integer disparity of each layer, round(fb / z).
  std::vector<Index> disparities() const {
    std::vector<Index> d;
    for (double z : depths) d.push_back(static_cast<Index>(std::lround(fb / z)));
    return d;
  }

  void validate() const {
    if (height < 1 || width < 1) throw ConfigError("scene size must be positive");
    if (depths.empty()) throw ConfigError("scene needs at least one layer");
    if (fb < 0) throw ConfigError("scene.fb must be >= 0");
    for (std::size_t i = 0; i < depths.size(); ++i) {
      if (!(depths[i] > 0)) throw ConfigError("scene depths must be positive");
      if (i > 0 && depths[i] > depths[i - 1]) throw ConfigError("scene layers must be ordered far to near");
    }
    for (Index d : disparities())
      if (4 * d > width)
        throw ConfigError("disparity " + std::to_string(d) + " exceeds a quarter of the image width " +
                          std::to_string(width));
  }
};

struct RainParams {
  std::uint64_t seed = 0;
  double density = 4.0;  // streaks per 1000 pixels
  double angle_min = -20.0, angle_max = 20.0;  // degrees from vertical
  double length_min = 6.0, length_max = 18.0;
  double width_min = 0.8, width_max = 1.8;
  double intensity_min = 0.25, intensity_max = 0.7;
  double rho = 0.7;  // fraction of streaks shared between the views
  Index disparity_max = 3;  // shift of shared streaks in the right view

  void validate() const {
    if (density < 0) throw ConfigError("rain.density must be >= 0");
    if (angle_min > angle_max || length_min > length_max || width_min > width_max || intensity_min > intensity_max)
      throw ConfigError("rain ranges must satisfy min <= max");
    if (length_min <= 0 || width_min <= 0) throw ConfigError("rain length/width must be positive");
    if (intensity_min <= 0 || intensity_max > 1) throw ConfigError("rain intensity must lie in (0, 1]");
    if (rho < 0 || rho > 1) throw ConfigError("rain.rho must lie in [0, 1]");
    if (disparity_max < 0) throw ConfigError("rain.disparity_max must be >= 0");
  }
};

enum class View { Left, Right };

struct StereoPair {
  ImageRGB left;
  ImageRGB right;
  /// Index of the visible layer per pixel, row-major.
  std::vector<int> layer_left;
  std::vector<int> layer_right;
};

struct StereoSample {
  std::string id;
  ImageRGB rainy_l, rainy_r;
  ImageRGB clean_l, clean_r;
  SceneParams scene;
  RainParams rain;
};

namespace detail {

struct Rgb {
  double r, g, b;
};

struct Blob {
  bool ellipse;
  double cx, cy, rx, ry;
  Rgb color, color2;
  double grad_angle;
};

/// Texture recipe of one layer, derived from the scene seed.
struct LayerTexture {
  bool full = false;
  Rgb base_a{}, base_b{};
  double grad_angle = 0;
  double stripe_freq = 0, stripe_phase = 0, stripe_amp = 0;
  std::vector<Blob> blobs;
};

inline Rgb random_color(Rng& r) { return {r.uniform(0.05, 0.8), r.uniform(0.05, 0.8), r.uniform(0.05, 0.8)}; }

inline LayerTexture make_texture(const SceneParams& p, std::size_t layer) {
  Rng r = Rng(p.seed).split("layer").split(layer);
  LayerTexture t;
  t.full = layer == 0;
  t.base_a = random_color(r);
  t.base_b = random_color(r);
  t.grad_angle = r.uniform(0, 2 * std::numbers::pi);
  t.stripe_freq = r.uniform(0.05, 0.6);
  t.stripe_phase = r.uniform(0, 2 * std::numbers::pi);
  t.stripe_amp = r.uniform(0.0, 0.12);
  const double W = static_cast<double>(p.width), H = static_cast<double>(p.height);
  const auto n = t.full ? r.uniform_int(3, 6) : r.uniform_int(2, 4);
  for (Index i = 0; i < n; ++i) {
    Blob b;
    b.ellipse = r.bernoulli(0.5);
    b.cx = r.uniform(-0.2 * W, 1.2 * W);
    b.cy = r.uniform(0, H);
    b.rx = r.uniform(0.06, 0.25) * W;
    b.ry = r.uniform(0.08, 0.35) * H;
    b.color = random_color(r);
    b.color2 = random_color(r);
    b.grad_angle = r.uniform(0, 2 * std::numbers::pi);
    t.blobs.push_back(b);
  }
  return t;
}

inline bool blob_covers(const Blob& b, double x, double y) {
  const double dx = (x - b.cx) / b.rx, dy = (y - b.cy) / b.ry;
  return b.ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
}

/// Colour of a layer at integer layer coordinates; false where the layer is transparent.
inline bool sample_layer(const LayerTexture& t, double W, double H, Index xi, Index yi, Rgb& out) {
  const double x = static_cast<double>(xi), y = static_cast<double>(yi);
  for (auto it = t.blobs.rbegin(); it != t.blobs.rend(); ++it) {
    if (!blob_covers(*it, x, y)) continue;
    const double s = 0.5 + 0.5 * std::sin(((x - it->cx) * std::cos(it->grad_angle) +
                                           (y - it->cy) * std::sin(it->grad_angle)) /
                                          std::max(it->rx, it->ry) * 1.5);
    out = {it->color.r + (it->color2.r - it->color.r) * s, it->color.g + (it->color2.g - it->color.g) * s,
           it->color.b + (it->color2.b - it->color.b) * s};
    return true;
  }
  if (!t.full) return false;
  const double u = (x * std::cos(t.grad_angle) + y * std::sin(t.grad_angle)) / std::max(W, H);
  const double s = std::clamp(0.5 + 0.5 * u, 0.0, 1.0);
  const double stripe = t.stripe_amp * std::sin(t.stripe_freq * x + 0.7 * t.stripe_freq * y + t.stripe_phase);
  out = {t.base_a.r + (t.base_b.r - t.base_a.r) * s + stripe, t.base_a.g + (t.base_b.g - t.base_a.g) * s + stripe,
         t.base_a.b + (t.base_b.b - t.base_a.b) * s + stripe};
  return true;
}

struct Streak {
  double cx, cy, angle, length, width, intensity;
  Index shift;
};

inline Streak draw_streak(Rng& r, const RainParams& p, double base_angle, Index h, Index w) {
  Streak s;
  s.cx = r.uniform(-0.1 * static_cast<double>(w), 1.1 * static_cast<double>(w));
  s.cy = r.uniform(-0.1 * static_cast<double>(h), 1.1 * static_cast<double>(h));
  s.angle = (base_angle + r.uniform(-3.0, 3.0)) * std::numbers::pi / 180.0;
  s.length = r.uniform(p.length_min, p.length_max);
  s.width = r.uniform(p.width_min, p.width_max);
  s.intensity = r.uniform(p.intensity_min, p.intensity_max);
  s.shift = r.uniform_int(0, p.disparity_max);
  return s;
}

/// Streaks visible in one view. The first n (n from density) streaks of a
/// seed are always the same, so raising the density only adds streaks.
inline std::vector<Streak> view_streaks(const RainParams& p, Index h, Index w, View view) {
  const Rng root(p.seed);
  Rng angle_rng = root.split("angle");
  const double base_angle = angle_rng.uniform(p.angle_min, p.angle_max);
  const auto n = static_cast<Index>(std::lround(p.density * static_cast<double>(h * w) / 1000.0));
  Rng base = root.split("streaks"), keep = root.split("keep"), alt = root.split("resampled");
  std::vector<Streak> out;
  for (Index i = 0; i < n; ++i) {
    Streak s = draw_streak(base, p, base_angle, h, w);
    const bool shared = keep.uniform() < p.rho;
    Streak other = draw_streak(alt, p, base_angle, h, w);
    if (view == View::Left) {
      out.push_back(s);
    } else if (shared) {
      s.cx -= static_cast<double>(s.shift);
      out.push_back(s);
    } else {
      out.push_back(other);
    }
  }
  return out;
}

inline void render_streak(const Streak& s, std::vector<float>& layer, Index h, Index w) {
  const double dx = std::sin(s.angle), dy = std::cos(s.angle);
  const double half = s.length / 2, reach = half + s.width + 1;
  const auto x0 = static_cast<Index>(std::floor(s.cx - reach)), x1 = static_cast<Index>(std::ceil(s.cx + reach));
  const auto y0 = static_cast<Index>(std::floor(s.cy - reach)), y1 = static_cast<Index>(std::ceil(s.cy + reach));
  for (Index y = std::max<Index>(0, y0); y <= std::min(h - 1, y1); ++y)
    for (Index x = std::max<Index>(0, x0); x <= std::min(w - 1, x1); ++x) {
      const double px = static_cast<double>(x) - s.cx, py = static_cast<double>(y) - s.cy;
      const double t = px * dx + py * dy;
      const double dist = std::abs(px * dy - py * dx);
      const double across = std::clamp(s.width / 2 + 0.5 - dist, 0.0, 1.0);
      const double along = std::clamp(half + 0.5 - std::abs(t), 0.0, 1.0);
      const double taper = 0.55 + 0.45 * std::cos(std::numbers::pi * std::clamp(t / s.length, -0.5, 0.5));
      const auto v = static_cast<float>(s.intensity * across * along * taper);
      auto& dst = layer[static_cast<std::size_t>(y * w + x)];
      dst = std::max(dst, v);
    }
}

}  // namespace detail

/// Renders the clean pair; each right-view pixel samples its layer at x + disparity.
inline StereoPair synth_scene(const SceneParams& p) {
  p.validate();
  std::vector<detail::LayerTexture> tex;
  for (std::size_t i = 0; i < p.depths.size(); ++i) tex.push_back(detail::make_texture(p, i));
  const auto disp = p.disparities();
  const double W = static_cast<double>(p.width), H = static_cast<double>(p.height);
  StereoPair out{ImageRGB(p.height, p.width), ImageRGB(p.height, p.width),
                 std::vector<int>(static_cast<std::size_t>(p.height * p.width)),
                 std::vector<int>(static_cast<std::size_t>(p.height * p.width))};
  auto render = [&](ImageRGB& img, std::vector<int>& layer_of, bool right) {
    for (Index y = 0; y < p.height; ++y)
      for (Index x = 0; x < p.width; ++x) {
        detail::Rgb c{};
        int hit = 0;
        for (std::size_t li = tex.size(); li-- > 0;) {
          const Index lx = right ? x + disp[li] : x;
          if (detail::sample_layer(tex[li], W, H, lx, y, c)) {
            hit = static_cast<int>(li);
            break;
          }
        }
        img.at(y, x, 0) = static_cast<float>(std::clamp(c.r, 0.0, 1.0));
        img.at(y, x, 1) = static_cast<float>(std::clamp(c.g, 0.0, 1.0));
        img.at(y, x, 2) = static_cast<float>(std::clamp(c.b, 0.0, 1.0));
        layer_of[static_cast<std::size_t>(y * p.width + x)] = hit;
      }
  };
  render(out.left, out.layer_left, false);
  render(out.right, out.layer_right, true);
  return out;
}

struct RainResult {
  ImageRGB rainy;
  ImageRGB rain_layer;  // equal in all three channels, >= 0
};

/// rainy = clamp(clean + R, 0, 1) with R the streak layer of the given view.
inline RainResult synth_rain(const ImageRGB& clean, const RainParams& p, View view) {
  p.validate();
  std::vector<float> layer(static_cast<std::size_t>(clean.height * clean.width), 0.f);
  for (const auto& s : detail::view_streaks(p, clean.height, clean.width, view))
    detail::render_streak(s, layer, clean.height, clean.width);
  RainResult out{ImageRGB(clean.height, clean.width), ImageRGB(clean.height, clean.width)};
  for (Index y = 0; y < clean.height; ++y)
    for (Index x = 0; x < clean.width; ++x) {
      const float r = layer[static_cast<std::size_t>(y * clean.width + x)];
      for (Index c = 0; c < 3; ++c) {
        out.rain_layer.at(y, x, c) = r;
        out.rainy.at(y, x, c) = std::clamp(clean.at(y, x, c) + r, 0.f, 1.f);
      }
    }
  return out;
}

/// Same window applied to all four images, so stereo rows stay aligned.
inline StereoSample random_crop(const StereoSample& s, Index size, Rng& rng) {
  const Index h = s.clean_l.height, w = s.clean_l.width;
  if (size < 1 || size > std::min(h, w))
    throw ShapeError("random_crop: crop " + std::to_string(size) + " larger than image " + std::to_string(h) + "x" +
                     std::to_string(w));
  const Index y0 = rng.uniform_int(0, h - size), x0 = rng.uniform_int(0, w - size);
  auto cut = [&](const ImageRGB& img) {
    ImageRGB out(size, size);
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x)
        for (Index c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
  };
  StereoSample out = s;
  out.rainy_l = cut(s.rainy_l);
  out.rainy_r = cut(s.rainy_r);
  out.clean_l = cut(s.clean_l);
  out.clean_r = cut(s.clean_r);
  return out;
}

/// Ranges from which per-sample scene and rain parameters are drawn.
struct DataGenConfig {
  Index height = 128;
  Index width = 256;
  Index layers_min = 2, layers_max = 4;
  double depth_min = 2.0, depth_max = 20.0;
  double fb_min = 8.0, fb_max = 24.0;
  RainParams rain;  // seed ignored; density/ranges act as bounds below
  double density_min = 2.0, density_max = 8.0;
};

/// Deterministic sample for `seed`.
inline StereoSample make_sample(std::uint64_t seed, const DataGenConfig& g, std::string id = {}) {
  const Rng root(seed);
  Rng sr = root.split("scene-params");
  SceneParams scene;
  scene.seed = root.split("scene").next_u64();
  scene.height = g.height;
  scene.width = g.width;
  const auto n = sr.uniform_int(g.layers_min, g.layers_max);
  scene.depths.clear();
  for (Index i = 0; i < n; ++i) scene.depths.push_back(sr.uniform(g.depth_min, g.depth_max));
  std::sort(scene.depths.begin(), scene.depths.end(), std::greater<>());
  const double fb_cap = static_cast<double>(g.width) / 4.0 * scene.depths.back();
  scene.fb = std::min(sr.uniform(g.fb_min, g.fb_max), std::floor(fb_cap));

  Rng rr = root.split("rain-params");
  RainParams rain = g.rain;
  rain.seed = root.split("rain").next_u64();
  rain.density = rr.uniform(g.density_min, g.density_max);

  const auto clean = synth_scene(scene);
  StereoSample s;
  s.id = std::move(id);
  s.clean_l = clean.left;
  s.clean_r = clean.right;
  s.rainy_l = synth_rain(clean.left, rain, View::Left).rainy;
  s.rainy_r = synth_rain(clean.right, rain, View::Right).rainy;
  s.scene = scene;
  s.rain = rain;
  return s;
}

// ---------------------------------------------------------------------------
// On-disk dataset: <dir>/manifest.jsonl plus one directory per sample.

inline constexpr std::uint64_t kTestSeedOffset = 1ULL << 32;

inline nlohmann::json manifest_record(const StereoSample& s, const std::string& split, const std::string& dir) {
  nlohmann::json j;
  j["id"] = s.id;
  j["split"] = split;
  j["rainy_l"] = dir + "/rainy_l.ppm";
  j["rainy_r"] = dir + "/rainy_r.ppm";
  j["clean_l"] = dir + "/clean_l.ppm";
  j["clean_r"] = dir + "/clean_r.ppm";
  j["scene.seed"] = s.scene.seed;
  j["scene.height"] = s.scene.height;
  j["scene.width"] = s.scene.width;
  j["scene.fb"] = s.scene.fb;
  j["scene.depths"] = s.scene.depths;
  j["rain.seed"] = s.rain.seed;
  j["rain.density"] = s.rain.density;
  j["rain.angle_min"] = s.rain.angle_min;
  j["rain.angle_max"] = s.rain.angle_max;
  j["rain.length_min"] = s.rain.length_min;
  j["rain.length_max"] = s.rain.length_max;
  j["rain.width_min"] = s.rain.width_min;
  j["rain.width_max"] = s.rain.width_max;
  j["rain.intensity_min"] = s.rain.intensity_min;
  j["rain.intensity_max"] = s.rain.intensity_max;
  j["rain.rho"] = s.rain.rho;
  j["rain.disparity_max"] = s.rain.disparity_max;
  return j;
}

/**
 * Writes n_train + n_test samples and manifest.jsonl under `out`. Train
 * samples use seeds base_seed + i, test samples base_seed + 2^32 + i. Refuses
 * a non-empty directory unless `force`. Returns the manifest path.
 */
inline std::filesystem::path build_dataset(const std::filesystem::path& out, Index n_train, Index n_test,
                                           std::uint64_t base_seed, const DataGenConfig& g, bool force = false) {
  namespace fs = std::filesystem;
  if (n_train < 0 || n_test < 0) throw ConfigError("sample counts must be >= 0");
  if (static_cast<std::uint64_t>(n_train) >= kTestSeedOffset || static_cast<std::uint64_t>(n_test) >= kTestSeedOffset)
    throw ConfigError("too many samples for disjoint train/test seed ranges");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw IoError("output directory " + out.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(out / "train");
    fs::remove_all(out / "test");
    fs::remove(out / "manifest.jsonl");
  }
  fs::create_directories(out);
  const auto manifest = out / "manifest.jsonl";
  std::ofstream mf(manifest);
  if (!mf) throw IoError("cannot write " + manifest.string());
  auto emit = [&](const std::string& split, Index i, std::uint64_t seed) {
    std::ostringstream id;
    id << split << '_' << std::setw(6) << std::setfill('0') << i;
    const std::string rel = split + "/" + id.str().substr(split.size() + 1);
    const auto s = make_sample(seed, g, id.str());
    fs::create_directories(out / rel);
    save_image(out / rel / "rainy_l.ppm", s.rainy_l);
    save_image(out / rel / "rainy_r.ppm", s.rainy_r);
    save_image(out / rel / "clean_l.ppm", s.clean_l);
    save_image(out / rel / "clean_r.ppm", s.clean_r);
    mf << manifest_record(s, split, rel).dump() << '\n';
  };
  for (Index i = 0; i < n_train; ++i) emit("train", i, base_seed + static_cast<std::uint64_t>(i));
  for (Index i = 0; i < n_test; ++i) emit("test", i, base_seed + kTestSeedOffset + static_cast<std::uint64_t>(i));
  if (!mf) throw IoError("failed writing " + manifest.string());
  return manifest;
}

/// Loads every sample of `split` ("train", "test", or "" for all) from a dataset directory.
inline std::vector<StereoSample> load_dataset(const std::filesystem::path& dir, const std::string& split) {
  const auto manifest = dir / "manifest.jsonl";
  if (!std::filesystem::exists(manifest)) throw IoError("no manifest.jsonl in " + dir.string());
  std::ifstream in(manifest);
  std::vector<StereoSample> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad manifest record: ") + e.what(), here);
    }
    if (!split.empty() && j.value("split", "") != split) continue;
    try {
      StereoSample s;
      s.id = j.at("id").get<std::string>();
      s.rainy_l = load_image(dir / j.at("rainy_l").get<std::string>());
      s.rainy_r = load_image(dir / j.at("rainy_r").get<std::string>());
      s.clean_l = load_image(dir / j.at("clean_l").get<std::string>());
      s.clean_r = load_image(dir / j.at("clean_r").get<std::string>());
      s.scene.seed = j.at("scene.seed").get<std::uint64_t>();
      s.scene.height = j.at("scene.height").get<Index>();
      s.scene.width = j.at("scene.width").get<Index>();
      s.scene.fb = j.at("scene.fb").get<double>();
      s.scene.depths = j.at("scene.depths").get<std::vector<double>>();
      s.rain.seed = j.at("rain.seed").get<std::uint64_t>();
      s.rain.density = j.at("rain.density").get<double>();
      s.rain.angle_min = j.at("rain.angle_min").get<double>();
      s.rain.angle_max = j.at("rain.angle_max").get<double>();
      s.rain.length_min = j.at("rain.length_min").get<double>();
      s.rain.length_max = j.at("rain.length_max").get<double>();
      s.rain.width_min = j.at("rain.width_min").get<double>();
      s.rain.width_max = j.at("rain.width_max").get<double>();
      s.rain.intensity_min = j.at("rain.intensity_min").get<double>();
      s.rain.intensity_max = j.at("rain.intensity_max").get<double>();
      s.rain.rho = j.at("rain.rho").get<double>();
      s.rain.disparity_max = j.at("rain.disparity_max").get<Index>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad manifest record: ") + e.what(), here);
    }
  }
  return out;
}

}  // namespace stereoirr
