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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "stereoirr/tensor.hpp"

namespace stereoirr {

/// Malformed or unsupported file content; `offset` is the byte position of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved RGB, row-major, float samples in [0, 1].
struct ImageRGB {
  Index height = 0;
  Index width = 0;
  std::vector<float> data;

  ImageRGB() = default;
  ImageRGB(Index h, Index w, float fill = 0.f) : height(h), width(w), data(static_cast<std::size_t>(h * w * 3), fill) {
    if (h < 1 || w < 1) throw ShapeError("image dimensions must be >= 1");
  }

  float& at(Index y, Index x, Index c) { return data[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  float at(Index y, Index x, Index c) const { return data[static_cast<std::size_t>((y * width + x) * 3 + c)]; }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

/// Rounds every sample to the nearest 8-bit level.
inline ImageRGB quantized(const ImageRGB& img) {
  ImageRGB out = img;
  for (auto& v : out.data) v = static_cast<float>(quantize(v)) / 255.f;
  return out;
}

inline std::vector<std::uint8_t> encode_ppm(const ImageRGB& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.data.size());
  for (float v : img.data) bytes.push_back(quantize(v));
  return bytes;
}

/// Binary PPM (P6) with maxval 255; '#' comments allowed in the header.
inline ImageRGB decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1LL << 30)) throw FormatError(std::string("PPM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PPM header: expected ") + what, start);
    return static_cast<Index>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a binary PPM (P6) file", 0);
  pos = 2;
  const Index w = read_int("width");
  const Index h = read_int("height");
  const std::size_t maxval_at = (skip_space(), pos);
  const Index maxval = read_int("maxval");
  if (w < 1 || h < 1) throw FormatError("PPM dimensions must be positive", maxval_at);
  if (maxval != 255) throw FormatError("unsupported PPM maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PPM header: missing separator", pos);
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() - pos < need)
    throw FormatError("truncated PPM payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - pos),
                      bytes.size());
  ImageRGB img(h, w);
  for (std::size_t i = 0; i < need; ++i) img.data[i] = static_cast<float>(bytes[pos + i]) / 255.f;
  return img;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline ImageRGB load_image(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

inline void save_image(const std::filesystem::path& path, const ImageRGB& img) { write_file(path, encode_ppm(img)); }

/// [1,3,H,W] tensor from an image.
template <class T>
Tensor<T> to_tensor(const ImageRGB& img) {
  Tensor<T> t({1, 3, img.height, img.width});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c));
  return t;
}

/// Image from batch item `b` of a [B,3,H,W] tensor, clamped to [0, 1].
template <class T>
ImageRGB to_image(const Tensor<T>& t, Index b = 0) {
  if (t.ndim() != 4 || t.dim(1) != 3) throw ShapeError("to_image: expected [B,3,H,W], got " + to_string(t.shape()));
  ImageRGB img(t.dim(2), t.dim(3));
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x)
        img.at(y, x, c) = std::clamp(static_cast<float>(t.at(b, c, y, x)), 0.f, 1.f);
  return img;
}

/// Stacks equally sized images into [N,3,H,W].
template <class T>
Tensor<T> stack_images(const std::vector<const ImageRGB*>& imgs) {
  if (imgs.empty()) throw ShapeError("stack_images: empty batch");
  const Index h = imgs[0]->height, w = imgs[0]->width;
  Tensor<T> t({static_cast<Index>(imgs.size()), 3, h, w});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    if (imgs[n]->height != h || imgs[n]->width != w) throw ShapeError("stack_images: images differ in size");
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) t.at(static_cast<Index>(n), c, y, x) = static_cast<T>(imgs[n]->at(y, x, c));
  }
  return t;
}

/// Grayscale rendering of one W x W attention slice (map [B,H,W,W]), scaled by its maximum.
template <class T>
ImageRGB attention_map_image(const Tensor<T>& map, Index b, Index row) {
  if (map.ndim() != 4 || map.dim(2) != map.dim(3))
    throw ShapeError("attention_map_image: expected [B,H,W,W], got " + to_string(map.shape()));
  const Index w = map.dim(3);
  const T* p = map.ptr() + (b * map.dim(1) + row) * w * w;
  T mx = 0;
  for (Index i = 0; i < w * w; ++i) mx = std::max(mx, p[i]);
  ImageRGB img(w, w);
  for (Index i = 0; i < w; ++i)
    for (Index j = 0; j < w; ++j)
      for (Index c = 0; c < 3; ++c) img.at(i, j, c) = mx > 0 ? static_cast<float>(p[i * w + j] / mx) : 0.f;
  return img;
}

}  // namespace stereoirr
