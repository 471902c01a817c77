#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgfa/tensor.hpp"

namespace pgfa::io {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct ImageU8 {
  int height = 0, width = 0;
  std::vector<uint8_t> rgb;
};

void write_png_rgb8(const std::string& path, const ImageU8& img);
ImageU8 read_png_rgb8(const std::string& path);

// 16-bit single-channel instance masks.
void write_png_gray16(const std::string& path, const LabelMap& map);
LabelMap read_png_gray16(const std::string& path);

// Conversions between (3, H, W) float tensors in [0, 1] and 8-bit RGB.
ImageU8 to_u8(const Tensor<float>& chw);
Tensor<float> to_float(const ImageU8& img);

}  // namespace pgfa::io
