#include "pgfa/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace pgfa::plot {
namespace {

// 5x7 bitmap glyphs, one row per byte (low 5 bits), covering what axis labels
// and legends need.
struct Glyph {
  char ch;
  uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
    {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1e}},
    {'c', {0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e}},
    {'d', {0x01, 0x01, 0x0d, 0x13, 0x11, 0x11, 0x0f}},
    {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
    {'g', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
    {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0c}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15}},
    {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
    {'p', {0x00, 0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'s', {0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e}},
    {'t', {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
    {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'w', {0x00, 0x00, 0x15, 0x15, 0x15, 0x15, 0x0a}},
    {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
    {'y', {0x00, 0x11, 0x11, 0x0f, 0x01, 0x11, 0x0e}},
    {'z', {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
  c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.ch == c) return &g;
  return nullptr;
}

struct Canvas {
  int w, h;
  std::vector<uint8_t> rgb;

  Canvas(int width, int height) : w(width), h(height), rgb(static_cast<size_t>(w) * h * 3, 255) {}

  void put(int x, int y, const std::array<uint8_t, 3>& c) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    uint8_t* p = rgb.data() + (static_cast<size_t>(y) * w + x) * 3;
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, const std::array<uint8_t, 3>& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      put(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(int x, int y, const std::string& s, const std::array<uint8_t, 3>& c) {
    int cx = x;
    for (char ch : s) {
      if (const Glyph* g = find_glyph(ch)) {
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if (g->rows[ry] & (1 << (4 - rx))) put(cx + rx, y + ry, c);
      }
      cx += 6;
    }
  }
};

std::string format_tick(double v) {
  char buf[32];
  const double a = std::abs(v);
  if (v == 0) return "0";
  if (a >= 0.01 && a < 10000) {
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  }
  return buf;
}

}  // namespace

std::array<uint8_t, 3> default_color(size_t i) {
  static const std::array<uint8_t, 3> palette[] = {
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
      {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
  };
  return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

void render_png(const Figure& fig, const std::string& path) {
  const int ml = 64, mr = 16, mt = 28, mb = 40;
  Canvas cv(fig.width, fig.height);
  const int px0 = ml, px1 = fig.width - mr, py0 = mt, py1 = fig.height - mb;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : fig.series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const std::array<uint8_t, 3> black{0, 0, 0}, grey{210, 210, 210};
  auto sx = [&](double x) {
    return px0 + static_cast<int>((x - xmin) / (xmax - xmin) * (px1 - px0));
  };
  auto sy = [&](double y) {
    return py1 - static_cast<int>((y - ymin) / (ymax - ymin) * (py1 - py0));
  };

  for (int t = 0; t <= 5; ++t) {  // grid + ticks
    const double xv = xmin + (xmax - xmin) * t / 5.0;
    const double yv = ymin + (ymax - ymin) * t / 5.0;
    cv.line(sx(xv), py0, sx(xv), py1, grey);
    cv.line(px0, sy(yv), px1, sy(yv), grey);
    cv.text(sx(xv) - 10, py1 + 6, format_tick(xv), black);
    cv.text(4, sy(yv) - 3, format_tick(yv), black);
  }
  cv.line(px0, py0, px0, py1, black);
  cv.line(px0, py1, px1, py1, black);
  cv.text(px0, 8, fig.title, black);
  cv.text((px0 + px1) / 2 - 3 * static_cast<int>(fig.xlabel.size()), fig.height - 12, fig.xlabel,
          black);
  cv.text(4, py0 - 14, fig.ylabel, black);

  int ly = py0 + 6;
  for (const auto& s : fig.series) {
    for (size_t i = 1; i < s.x.size(); ++i)
      cv.line(sx(s.x[i - 1]), sy(s.y[i - 1]), sx(s.x[i]), sy(s.y[i]), s.color);
    cv.line(px1 - 90, ly + 3, px1 - 74, ly + 3, s.color);
    cv.text(px1 - 70, ly, s.label, black);
    ly += 12;
  }

  io::ImageU8 img;
  img.width = cv.w;
  img.height = cv.h;
  img.rgb = std::move(cv.rgb);
  io::write_png_rgb8(path, img);
}

}  // namespace pgfa::plot
