#pragma once

#include <array>
#include <string>
#include <vector>

#include "pgfa/png_io.hpp"

// Minimal PNG line plots for training reports.
namespace pgfa::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::array<uint8_t, 3> color = {31, 119, 180};
};

struct Figure {
  std::string title, xlabel, ylabel;
  int width = 720, height = 480;
  std::vector<Series> series;
};

std::array<uint8_t, 3> default_color(size_t series_index);
void render_png(const Figure& fig, const std::string& path);

}  // namespace pgfa::plot
