#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "bdce/image.hpp"

namespace bdce {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8- or 16-bit RGB/RGBA PNG into [0,1]. Alpha is discarded.
inline Image load_png(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open '" + path + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + path + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_handler,
                                           detail::png_warning_handler);
  if (!png) throw IoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot create info struct");
  }

  std::vector<unsigned char> pixels;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  std::string bad_type;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode '" + path + "': " + err);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  if (color_type != PNG_COLOR_TYPE_RGB && color_type != PNG_COLOR_TYPE_RGB_ALPHA) {
    bad_type = color_type == PNG_COLOR_TYPE_GRAY         ? "grayscale"
               : color_type == PNG_COLOR_TYPE_GRAY_ALPHA ? "grayscale+alpha"
               : color_type == PNG_COLOR_TYPE_PALETTE    ? "palette"
                                                         : "unknown";
  } else {
    if (bit_depth == 16) png_set_swap(png);  // host order is little-endian
    if (color_type == PNG_COLOR_TYPE_RGB_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    pixels.resize(row_bytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!bad_type.empty()) throw IoError("'" + path + "' has unsupported " + bad_type + " color type (RGB/RGBA required)");

  Image img = Image::chw(3, height, width);
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bit_depth == 16) {
    const auto* p = reinterpret_cast<const std::uint16_t*>(pixels.data());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) img[c * n + i] = static_cast<float>(p[3 * i + c]) / 65535.0f;
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) img[c * n + i] = static_cast<float>(pixels[3 * i + c]) / 255.0f;
  }
  return img;
}

/// Quantizes to 8 bits with round-half-up and writes an RGB PNG.
inline void save_png(const Image& img, const std::string& path) {
  require_image(img, "save_png");
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  const std::size_t h = img.height(), w = img.width(), n = h * w;
  std::vector<unsigned char> pixels(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(img[c * n + i]), 0.0, 1.0);
      pixels[3 * i + c] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
    }

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_handler,
                                            detail::png_warning_handler);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * 3 * w;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode '" + path + "': " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace bdce
