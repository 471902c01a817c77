#include <algorithm>
#include <cmath>

#include "pgfa/data.hpp"

namespace pgfa::data {
namespace {

template <typename T>
Tensor<T> flip_h(const Tensor<T>& t) {  // flip along x
  Tensor<T> out(t.shape);
  const int C = t.ndim() == 3 ? t.dim(0) : 1;
  const int H = t.dim(t.ndim() - 2), W = t.dim(t.ndim() - 1);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out[(static_cast<int64_t>(c) * H + y) * W + x] =
            t[(static_cast<int64_t>(c) * H + y) * W + (W - 1 - x)];
  return out;
}

template <typename T>
Tensor<T> flip_v(const Tensor<T>& t) {
  Tensor<T> out(t.shape);
  const int C = t.ndim() == 3 ? t.dim(0) : 1;
  const int H = t.dim(t.ndim() - 2), W = t.dim(t.ndim() - 1);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out[(static_cast<int64_t>(c) * H + y) * W + x] =
            t[(static_cast<int64_t>(c) * H + (H - 1 - y)) * W + x];
  return out;
}

// 90 degrees counter-clockwise, k times. Square images keep their shape.
template <typename T>
Tensor<T> rot90(const Tensor<T>& t, int k) {
  k = ((k % 4) + 4) % 4;
  Tensor<T> cur = t;
  for (int r = 0; r < k; ++r) {
    const int C = cur.ndim() == 3 ? cur.dim(0) : 1;
    const int H = cur.dim(cur.ndim() - 2), W = cur.dim(cur.ndim() - 1);
    std::vector<int> sh = cur.shape;
    sh[cur.ndim() - 2] = W;
    sh[cur.ndim() - 1] = H;
    Tensor<T> out(sh);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out[(static_cast<int64_t>(c) * W + (W - 1 - x)) * H + y] =
              cur[(static_cast<int64_t>(c) * H + y) * W + x];
    cur = std::move(out);
  }
  return cur;
}

struct Affine {  // dst -> src mapping, row-major 2x3
  double m[6];

  std::pair<double, double> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }
};

// Inverse transform for sampling: maps output pixel centers back through
// (scale, rotate, shear, translate) about the image center.
Affine inverse_warp(const AugmentParams& p, int H, int W) {
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  const double th = p.angle_deg * M_PI / 180.0;
  // Forward: v = T(c + t) * R(th) * Sh(shear) * S(s) * T(-c); linear part
  // A = R * Sh * S with Sh = [[1, shear], [0, 1]], inverted analytically.
  const double s = p.scale;
  const double r00 = std::cos(th), r01 = -std::sin(th), r10 = std::sin(th), r11 = std::cos(th);
  const double A00 = r00 * s, A01 = (r00 * p.shear + r01) * s;
  const double A10 = r10 * s, A11 = (r10 * p.shear + r11) * s;
  const double det = A00 * A11 - A01 * A10;
  const double i00 = A11 / det, i01 = -A01 / det, i10 = -A10 / det, i11 = A00 / det;
  // src = A_inv * (dst - c - t) + c
  Affine inv;
  inv.m[0] = i00;
  inv.m[1] = i01;
  inv.m[2] = cx - i00 * (cx + p.tx) - i01 * (cy + p.ty);
  inv.m[3] = i10;
  inv.m[4] = i11;
  inv.m[5] = cy - i10 * (cx + p.tx) - i11 * (cy + p.ty);
  return inv;
}

Tensor<float> warp_image(const Tensor<float>& img, const Affine& inv) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      auto [sx, sy] = inv.apply(x, y);
      sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));  // clamp-to-edge
      sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < C; ++c) {
        const double v00 = img.at3(c, y0, x0), v01 = img.at3(c, y0, x1);
        const double v10 = img.at3(c, y1, x0), v11 = img.at3(c, y1, x1);
        const double top = v00 + fx * (v01 - v00), bot = v10 + fx * (v11 - v10);
        out.at3(c, y, x) = static_cast<float>(top + fy * (bot - top));
      }
    }
  return out;
}

LabelMap warp_map(const LabelMap& map, const Affine& inv) {
  const int H = map.dim(0), W = map.dim(1);
  LabelMap out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      auto [sx, sy] = inv.apply(x, y);
      const int xi = static_cast<int>(std::lround(sx)), yi = static_cast<int>(std::lround(sy));
      out.at2(y, x) = (xi >= 0 && xi < W && yi >= 0 && yi < H) ? map.at2(yi, xi) : 0;
    }
  return out;
}

}  // namespace

AugmentParams draw_augment(Rng& rng, const AugmentConfig& cfg) {
  AugmentParams p;
  if (cfg.flips) {
    p.hflip = rng.bernoulli(0.5);
    p.vflip = rng.bernoulli(0.5);
  }
  if (cfg.rot90) p.rot90_k = rng.uniform_int(0, 3);
  p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  if (cfg.free_angle_deg > 0) p.angle_deg = rng.uniform(-cfg.free_angle_deg, cfg.free_angle_deg);
  if (cfg.shear_max > 0) p.shear = rng.uniform(-cfg.shear_max, cfg.shear_max);
  if (cfg.translate_frac > 0) {
    p.tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac);
    p.ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac);
  }
  return p;
}

Sample apply_augment(const Sample& s, const AugmentParams& p, ClassMapMode cmode) {
  Sample out = s;
  if (p.hflip) {
    out.image = flip_h(out.image);
    if (out.is_labeled) out.instance_map = flip_h(out.instance_map);
  }
  if (p.vflip) {
    out.image = flip_v(out.image);
    if (out.is_labeled) out.instance_map = flip_v(out.instance_map);
  }
  if (p.rot90_k != 0) {
    out.image = rot90(out.image, p.rot90_k);
    if (out.is_labeled) out.instance_map = rot90(out.instance_map, p.rot90_k);
  }
  const bool needs_warp =
      p.scale != 1.0 || p.angle_deg != 0.0 || p.shear != 0.0 || p.tx != 0.0 || p.ty != 0.0;
  if (needs_warp) {
    const int H = out.image.dim(1), W = out.image.dim(2);
    const AugmentParams warp_only{false, false, 0, p.scale, p.angle_deg, p.shear,
                                  p.tx * W, p.ty * H};
    const Affine inv = inverse_warp(warp_only, H, W);
    out.image = warp_image(out.image, inv);
    if (out.is_labeled) out.instance_map = warp_map(out.instance_map, inv);
  }
  if (out.is_labeled) out.class_map = class_map_from_instances(out.instance_map, cmode);
  return out;
}

Sample augment(const Sample& s, Rng& rng, const AugmentConfig& cfg, ClassMapMode cmode) {
  return apply_augment(s, draw_augment(rng, cfg), cmode);
}

}  // namespace pgfa::data
