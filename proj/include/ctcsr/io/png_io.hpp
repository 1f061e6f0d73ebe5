// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cstdio>
#include <stdexcept>
#include <string>

#include "ctcsr/core/tensor.hpp"

namespace ctcsr {

// Images move through the pipeline as CHW float tensors in [0,1] with C=3.
// Files are RGB PNG, 8- or 16-bit; 16-bit is the pipeline's storage format so
// the degradation invariant is testable at full precision.

template <typename T>
Tensor<T> read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png: decode failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (bit_depth < 8) png_set_expand(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // stored big-endian
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  size_t stride = png_get_rowbytes(png, info);
  std::vector<unsigned char> rows(stride * h);
  std::vector<png_bytep> rowp(h);
  for (png_uint_32 y = 0; y < h; ++y) rowp[y] = rows.data() + y * stride;
  png_read_image(png, rowp.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor<T> out({3, static_cast<int>(h), static_cast<int>(w)});
  int64_t plane = int64_t(h) * w;
  if (bit_depth == 16) {
    const uint16_t* p = reinterpret_cast<const uint16_t*>(rows.data());
    for (int64_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<T>(p[i * 3 + c]) / T(65535);
  } else {
    const unsigned char* p = rows.data();
    for (int64_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<T>(p[i * 3 + c]) / T(255);
  }
  return out;
}

// Reads (height, width) from the header without decoding the image.
inline std::pair<int, int> png_dims(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png: bad header in " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  int h = static_cast<int>(png_get_image_height(png, info));
  int w = static_cast<int>(png_get_image_width(png, info));
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return {h, w};
}

template <typename T>
void write_png(const std::string& path, const Tensor<T>& img, int bit_depth = 16) {
  if (img.rank() != 3 || img.dim(0) != 3) throw std::runtime_error("png: expected (3,H,W) image");
  int h = img.dim(1), w = img.dim(2);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("png: cannot open for write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png: encode failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  int64_t plane = int64_t(h) * w;
  auto quant = [](T v, int maxval) {
    if (v < T(0)) v = T(0);
    if (v > T(1)) v = T(1);
    return static_cast<int>(v * static_cast<T>(maxval) + T(0.5));
  };
  if (bit_depth == 16) {
    std::vector<uint16_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          int v = quant(img[c * plane + int64_t(y) * w + x], 65535);
          row[static_cast<size_t>(x) * 3 + c] =
              static_cast<uint16_t>((v >> 8) | ((v & 0xff) << 8));  // big-endian
        }
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  } else {
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          row[static_cast<size_t>(x) * 3 + c] =
              static_cast<unsigned char>(quant(img[c * plane + int64_t(y) * w + x], 255));
      png_write_row(png, row.data());
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Quantize to the PNG bit depth without touching disk; used to keep in-memory
// pipelines bit-identical to a write/read round trip.
template <typename T>
Tensor<T> quantize_unit(const Tensor<T>& img, int maxval = 65535) {
  Tensor<T> out(img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) {
    T v = img[i];
    if (v < T(0)) v = T(0);
    if (v > T(1)) v = T(1);
    int q = static_cast<int>(v * static_cast<T>(maxval) + T(0.5));
    out[i] = static_cast<T>(q) / static_cast<T>(maxval);
  }
  return out;
}

}  // namespace ctcsr
