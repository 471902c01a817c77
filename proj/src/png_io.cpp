#include "pgfa/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace pgfa::io {
namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

void write_png_rgb8(const std::string& path, const ImageU8& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("png: cannot open for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) fail("png: allocation failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png: write error", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_rgb8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("png: cannot open", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) fail("png: allocation failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png: corrupt file", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  // Normalize to 8-bit RGB whatever the source format.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    png_read_row(png, img.rgb.data() + static_cast<size_t>(y) * img.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray16(const std::string& path, const LabelMap& map) {
  if (map.ndim() != 2) throw std::invalid_argument("png: mask must be 2-D");
  const int H = map.dim(0), W = map.dim(1);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("png: cannot open for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) fail("png: allocation failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png: write error", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(W) * 2);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int32_t v = map.at2(y, x);
      if (v < 0 || v > 65535) throw std::invalid_argument("png: instance id out of 16-bit range");
      row[static_cast<size_t>(x) * 2] = static_cast<uint8_t>((v >> 8) & 0xff);  // big endian
      row[static_cast<size_t>(x) * 2 + 1] = static_cast<uint8_t>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

LabelMap read_png_gray16(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("png: cannot open", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) fail("png: allocation failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png: corrupt file", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) fail("png: mask must be single-channel grayscale", path);
  if (depth < 16) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int H = static_cast<int>(png_get_image_height(png, info));
  const int W = static_cast<int>(png_get_image_width(png, info));
  LabelMap map({H, W});
  std::vector<uint8_t> row(static_cast<size_t>(W) * (depth == 16 ? 2 : 1));
  for (int y = 0; y < H; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < W; ++x) {
      map.at2(y, x) = depth == 16 ? static_cast<int32_t>(row[static_cast<size_t>(x) * 2]) << 8 |
                                        row[static_cast<size_t>(x) * 2 + 1]
                                  : row[static_cast<size_t>(x)];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return map;
}

ImageU8 to_u8(const Tensor<float>& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3) throw std::invalid_argument("to_u8: expects (3, H, W)");
  ImageU8 img;
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.rgb.resize(static_cast<size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = chw.at3(c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        img.rgb[(static_cast<size_t>(y) * img.width + x) * 3 + static_cast<size_t>(c)] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

Tensor<float> to_float(const ImageU8& img) {
  Tensor<float> t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at3(c, y, x) =
            static_cast<float>(img.rgb[(static_cast<size_t>(y) * img.width + x) * 3 +
                                       static_cast<size_t>(c)]) /
            255.0f;
  return t;
}

}  // namespace pgfa::io
