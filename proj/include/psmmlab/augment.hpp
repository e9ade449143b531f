#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "psmmlab/image.hpp"

namespace psmmlab::augment {

struct Options {
  std::size_t side = 32;          // output side after resize and crop
  std::size_t crop_padding = 4;   // zero border before the random crop
  double max_rotation_deg = 180.0;
  double flip_probability = 0.5;
  double color_jitter = 0.2;      // brightness and contrast offsets in [-j, j]
};

inline Options options_for_side(std::size_t side) {
  Options o;
  o.side = side;
  o.crop_padding = side >= 64 ? 8 : 4;
  return o;
}

struct Params {
  double rotation_deg = 0.0;
  bool flip = false;
  std::size_t crop_y = 0, crop_x = 0;  // offset into the padded image, in [0, 2*padding]
  std::array<double, 3> brightness{}, contrast{};

  // Leaves the resized image unchanged.
  static Params identity(const Options& o) {
    Params p;
    p.crop_y = p.crop_x = o.crop_padding;
    return p;
  }
};

inline Params sample_params(const Options& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> rot(-o.max_rotation_deg, o.max_rotation_deg);
  std::uniform_real_distribution<double> jit(-o.color_jitter, o.color_jitter);
  std::uniform_int_distribution<std::size_t> off(0, 2 * o.crop_padding);
  Params p;
  p.rotation_deg = rot(rng);
  p.flip = unit(rng) < o.flip_probability;
  p.crop_y = off(rng);
  p.crop_x = off(rng);
  for (auto& b : p.brightness) b = jit(rng);
  for (auto& c : p.contrast) c = jit(rng);
  return p;
}

// Nearest-neighbour rotation about the image centre; uncovered pixels are 0.
inline Image rotate(const Image& src, double degrees) {
  if (degrees == 0.0) return src;
  Image out(src.height, src.width, src.channels, 0.0);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (src.height - 1) / 2.0, cx = (src.width - 1) / 2.0;
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double sy = std::round(cs * dy - sn * dx + cy);
      const double sx = std::round(sn * dy + cs * dx + cx);
      if (sy < 0 || sx < 0 || sy > src.height - 1.0 || sx > src.width - 1.0) continue;
      for (std::size_t c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  return out;
}

inline Image hflip(const Image& src) {
  Image out(src.height, src.width, src.channels);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

// Crop of size h x w at (oy, ox) from `src` surrounded by `pad` zero pixels.
inline Image pad_crop(const Image& src, std::size_t pad, std::size_t oy, std::size_t ox, std::size_t h, std::size_t w) {
  Image out(h, w, src.channels, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const long sy = static_cast<long>(y + oy) - static_cast<long>(pad);
      const long sx = static_cast<long>(x + ox) - static_cast<long>(pad);
      if (sy < 0 || sx < 0 || sy >= static_cast<long>(src.height) || sx >= static_cast<long>(src.width)) continue;
      for (std::size_t c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  return out;
}

// x -> (x - 0.5) * (1 + contrast) + 0.5 + brightness, clamped to [0, 1].
inline Image color_jitter(const Image& src, const std::array<double, 3>& brightness,
                          const std::array<double, 3>& contrast) {
  Image out = src;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::size_t c = std::min<std::size_t>(i % src.channels, 2);
    out.pixels[i] = std::clamp((src.pixels[i] - 0.5) * (1.0 + contrast[c]) + 0.5 + brightness[c], 0.0, 1.0);
  }
  return out;
}

inline Image apply(const Image& img, const Params& p, const Options& o) {
  require(img.height == img.width, "augment: image must be square");
  require(p.crop_y <= 2 * o.crop_padding && p.crop_x <= 2 * o.crop_padding, "augment: crop offset out of range");
  Image out = resize(img, o.side, o.side);
  out = rotate(out, p.rotation_deg);
  if (p.flip) out = hflip(out);
  out = pad_crop(out, o.crop_padding, p.crop_y, p.crop_x, o.side, o.side);
  return color_jitter(out, p.brightness, p.contrast);
}

inline Image augment(const Image& img, std::uint64_t seed, const Options& o) {
  return apply(img, sample_params(o, seed), o);
}

}  // namespace psmmlab::augment
