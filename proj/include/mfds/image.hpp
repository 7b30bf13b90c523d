#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "mfds/tensor.hpp"

namespace mfds {

// 8-bit image, interleaved row-major (h, w, channels); channels is 1 or 3.
struct ImageU8 {
  int h = 0, w = 0, channels = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h_, int w_, int c_, uint8_t fill = 0)
      : h(h_), w(w_), channels(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

  uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * w + x) * channels + c];
  }
  uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * w + x) * channels + c];
  }
  bool same_dims(const ImageU8& o) const { return h == o.h && w == o.w; }
};

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
}  // namespace detail

// Reads an 8-bit PNG; palette and 16-bit inputs are normalized to 8-bit,
// alpha is dropped, and anything RGB-like arrives as 3 channels.
inline ImageU8 read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "read_png: cannot open ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "read_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(cat_msg("read_png: failed to decode ", path));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info), depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  ImageU8 img(static_cast<int>(h), static_cast<int>(w), channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.data.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  check(img.channels == 1 || img.channels == 3, "write_png: unsupported channel count ",
        img.channels);
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "write_png: cannot open ", path, " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "write_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(cat_msg("write_png: failed to encode ", path));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * img.w * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mfds
