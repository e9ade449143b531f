#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "psmmlab/error.hpp"
#include "psmmlab/tensor.hpp"

namespace psmmlab {

// H x W x C image of doubles, interleaved channels. Intensities are in [0, 1]
// when loaded from 8-bit files.
struct Image {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  std::size_t size() const noexcept { return pixels.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Frame sequence of one (subject, sample, modality).
struct Clip {
  std::vector<Image> frames;
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
}  // namespace detail

namespace detail {
// libpng reports errors by longjmp, so the setjmp frames below hold no
// objects with destructors. Each returns false on a libpng error.
inline bool png_write_file(std::FILE* fp, const Image& img, png_byte* row) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = img.width * img.channels;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < stride; ++i) row[i] = to_byte(img.pixels[y * stride + i]);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

// Decodes into `buf` (interleaved, 8-bit) and reports width, height and
// channel count.
inline bool png_read_file(std::FILE* fp, std::vector<png_byte>* buf, std::vector<png_bytep>* rows, std::size_t* w,
                          std::size_t* h, std::size_t* c) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  *w = png_get_image_width(png, info);
  *h = png_get_image_height(png, info);
  *c = png_get_channels(png, info);
  buf->resize(*w * *h * *c);
  rows->resize(*h);
  for (std::size_t y = 0; y < *h; ++y) (*rows)[y] = buf->data() + y * *w * *c;
  png_read_image(png, rows->data());
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}
}  // namespace detail

// 8-bit gray (C=1) or RGB (C=3) PNG. Output bytes depend only on the pixels.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, "write_png: only 1 or 3 channels supported");
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw InputError("cannot open for writing: " + path.string());
  std::vector<png_byte> row(img.width * img.channels);
  if (!detail::png_write_file(fp.get(), img, row.data())) throw InputError("libpng: failed writing " + path.string());
}

// Reads any 8-bit PNG; gray stays 1 channel, everything else becomes RGB.
inline Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw InputError("cannot open image: " + path.string());
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  std::size_t w = 0, h = 0, c = 0;
  if (!detail::png_read_file(fp.get(), &buf, &rows, &w, &h, &c))
    throw InputError("not a readable PNG: " + path.string());
  Image img(h, w, c == 1 ? 1 : 3);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < img.channels; ++k) img.pixels[i * img.channels + k] = buf[i * c + k] / 255.0;
  return img;
}

// Bilinear resampling with pixel-center alignment.
inline Image resize(const Image& src, std::size_t height, std::size_t width) {
  if (src.height == height && src.width == width) return src;
  Image out(height, width, src.channels);
  const double sy = static_cast<double>(src.height) / height, sx = static_cast<double>(src.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ay = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double ax = fx - x0;
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(y0, x0, c) * (1 - ax) + src.at(y0, x1, c) * ax;
        const double bot = src.at(y1, x0, c) * (1 - ax) + src.at(y1, x1, c) * ax;
        out.at(y, x, c) = top * (1 - ay) + bot * ay;
      }
    }
  }
  return out;
}

// Copies image `img` into slot n of an NCHW tensor.
inline void pack_nchw(const Image& img, Tensor& t, std::size_t n) {
  require(t.rank() == 4 && t.dim(1) == img.channels && t.dim(2) == img.height && t.dim(3) == img.width,
          "pack_nchw: image does not match tensor slot " + to_string(t.shape()));
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) t.at(n, c, y, x) = img.at(y, x, c);
}

}  // namespace psmmlab
