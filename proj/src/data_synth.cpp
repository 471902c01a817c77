#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pgfa/data.hpp"
#include "pgfa/png_io.hpp"

namespace pgfa::data {
namespace fs = std::filesystem;

namespace {

constexpr int kGeneratorVersion = 1;

struct Ellipse {
  double cx, cy, rx, ry, angle;

  bool contains(double x, double y) const {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * ca + dy * sa) / rx;
    const double v = (-dx * sa + dy * ca) / ry;
    return u * u + v * v <= 1.0;
  }

  std::vector<int64_t> rasterize(int H, int W) const {
    std::vector<int64_t> pix;
    const double rmax = std::max(rx, ry);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - rmax)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + rmax)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rmax)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + rmax)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (contains(x + 0.5, y + 0.5)) pix.push_back(static_cast<int64_t>(y) * W + x);
    return pix;
  }
};

// Smooth per-image background: H&E-like pale tint plus a few soft blotches and
// pixel noise, so foreground contrast stays subtle.
Tensor<float> render_background(int size, Rng& rng, double texture_noise) {
  Tensor<float> img({3, size, size});
  const float base[3] = {static_cast<float>(rng.uniform(0.82, 0.92)),
                         static_cast<float>(rng.uniform(0.72, 0.84)),
                         static_cast<float>(rng.uniform(0.84, 0.93))};
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < static_cast<int64_t>(size) * size; ++i)
      img[static_cast<int64_t>(c) * size * size + i] = base[c];

  const int nblotch = rng.uniform_int(2, 5);
  for (int b = 0; b < nblotch; ++b) {
    const double cx = rng.uniform(0, size), cy = rng.uniform(0, size);
    const double r = rng.uniform(size * 0.2, size * 0.5);
    const float dark = static_cast<float>(rng.uniform(0.02, 0.07));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double w = std::exp(-d2 / (2.0 * r * r));
        for (int c = 0; c < 3; ++c) img.at3(c, y, x) -= dark * static_cast<float>(w);
      }
  }
  for (auto& v : img.data) {
    v += static_cast<float>(rng.normal() * texture_noise);
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return img;
}

void paint_instance(Tensor<float>& img, const std::vector<int64_t>& pix, const float color[3],
                    Rng& rng, double noise, int W) {
  for (int64_t p : pix) {
    const int y = static_cast<int>(p / W), x = static_cast<int>(p % W);
    for (int c = 0; c < 3; ++c) {
      // Blend toward the nucleus color so the contrast stays subtle.
      const float v = 0.3f * img.at3(c, y, x) + 0.7f * color[c] +
                      static_cast<float>(rng.normal() * noise);
      img.at3(c, y, x) = std::clamp(v, 0.0f, 1.0f);
    }
  }
}

int64_t count_remaining(const LabelMap& map, int32_t id) {
  int64_t n = 0;
  for (int64_t i = 0; i < map.numel(); ++i) n += map[i] == id;
  return n;
}

// Places n ellipses allowing bounded overlap; later placements overwrite, and
// a placement is rejected if it would erase an earlier instance below a
// minimum visible size.
std::vector<Ellipse> place_instances(LabelMap& map, int n, double rmin, double rmax,
                                     double overlap_allowance, Rng& rng) {
  const int H = map.dim(0), W = map.dim(1);
  std::vector<Ellipse> placed;
  constexpr int64_t kMinVisible = 4;
  for (int k = 1; k <= n; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
      Ellipse e;
      e.rx = rng.uniform(rmin, rmax);
      e.ry = rng.uniform(rmin, rmax);
      e.angle = rng.uniform(0.0, M_PI);
      const double margin = std::max(e.rx, e.ry);
      e.cx = rng.uniform(margin, W - margin);
      e.cy = rng.uniform(margin, H - margin);
      const auto pix = e.rasterize(H, W);
      if (pix.size() < static_cast<size_t>(kMinVisible)) continue;
      int64_t taken = 0;
      for (int64_t p : pix) taken += map[p] != 0;
      if (static_cast<double>(taken) > overlap_allowance * static_cast<double>(pix.size()))
        continue;
      // Tentatively write, then verify nothing got swallowed.
      std::vector<std::pair<int64_t, int32_t>> saved;
      saved.reserve(pix.size());
      for (int64_t p : pix) {
        saved.emplace_back(p, map[p]);
        map[p] = k;
      }
      bool swallowed = false;
      std::vector<int32_t> touched;
      for (const auto& [p, old] : saved)
        if (old != 0 && std::find(touched.begin(), touched.end(), old) == touched.end())
          touched.push_back(old);
      for (int32_t id : touched)
        if (count_remaining(map, id) < kMinVisible) swallowed = true;
      if (swallowed) {
        for (auto it = saved.rbegin(); it != saved.rend(); ++it) map[it->first] = it->second;
        continue;
      }
      placed.push_back(e);
      ok = true;
    }
    if (!ok)
      throw std::runtime_error(
          "synth_generate: could not place requested instances; config too dense");
  }
  return placed;
}

void generate_nuclei_image(int size, int n, const SynthConfig& cfg, Rng& rng,
                           Tensor<float>& img, LabelMap& map) {
  img = render_background(size, rng, cfg.texture_noise);
  map = LabelMap({size, size});
  const auto ellipses = place_instances(map, n, cfg.radius_min, cfg.radius_max,
                                        cfg.overlap_allowance, rng);
  for (size_t k = 0; k < ellipses.size(); ++k) {
    // Nuclei render darker purple-blue with per-instance jitter.
    const float color[3] = {static_cast<float>(rng.uniform(0.30, 0.45)),
                            static_cast<float>(rng.uniform(0.18, 0.32)),
                            static_cast<float>(rng.uniform(0.42, 0.58))};
    std::vector<int64_t> pix;
    for (int64_t i = 0; i < map.numel(); ++i)
      if (map[i] == static_cast<int32_t>(k + 1)) pix.push_back(i);
    paint_instance(img, pix, color, rng, cfg.texture_noise, size);
  }
}

void generate_gland_image(int size, int n, const SynthConfig& cfg, Rng& rng, Tensor<float>& img,
                          LabelMap& map) {
  img = render_background(size, rng, cfg.texture_noise);
  map = LabelMap({size, size});
  const double rmin = size / 6.0, rmax = size / 3.5;
  const auto ellipses = place_instances(map, n, rmin, rmax, 0.05, rng);
  for (size_t k = 0; k < ellipses.size(); ++k) {
    Ellipse outer = ellipses[k];
    Ellipse lumen = outer;
    const double shrink = rng.uniform(0.45, 0.65);
    lumen.rx *= shrink;
    lumen.ry *= shrink;
    const float rim[3] = {static_cast<float>(rng.uniform(0.45, 0.6)),
                          static_cast<float>(rng.uniform(0.3, 0.45)),
                          static_cast<float>(rng.uniform(0.55, 0.7))};
    const float lum[3] = {static_cast<float>(rng.uniform(0.88, 0.97)),
                          static_cast<float>(rng.uniform(0.85, 0.95)),
                          static_cast<float>(rng.uniform(0.88, 0.97))};
    for (int64_t i = 0; i < map.numel(); ++i) {
      if (map[i] != static_cast<int32_t>(k + 1)) continue;
      const int y = static_cast<int>(i / size), x = static_cast<int>(i % size);
      const bool in_lumen = lumen.contains(x + 0.5, y + 0.5);
      const float* col = in_lumen ? lum : rim;
      for (int c = 0; c < 3; ++c)
        img.at3(c, y, x) = std::clamp(
            col[c] + static_cast<float>(rng.normal() * cfg.texture_noise), 0.0f, 1.0f);
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("synth: image_size too small");
  if (num_images < 1) throw std::invalid_argument("synth: num_images must be >= 1");
  if (min_instances < 1 || max_instances < min_instances)
    throw std::invalid_argument("synth: instance range must be positive and ordered");
  if (radius_min <= 0 || radius_max < radius_min)
    throw std::invalid_argument("synth: radius range must be positive and ordered");
  if (overlap_allowance < 0 || overlap_allowance >= 1)
    throw std::invalid_argument("synth: overlap_allowance must be in [0, 1)");
}

std::vector<std::string> synth_generate(const SynthConfig& cfg, const std::string& dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw std::runtime_error("synth_generate: cannot create " + dir + ": " + ec.message());

  Rng rng(cfg.seed);
  std::vector<std::string> ids;
  for (int i = 0; i < cfg.num_images; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    const std::string id = buf;
    Tensor<float> img;
    LabelMap map;
    if (cfg.mode == SynthConfig::Mode::kNuclei) {
      const int n = rng.uniform_int(cfg.min_instances, cfg.max_instances);
      generate_nuclei_image(cfg.image_size, n, cfg, rng, img, map);
    } else {
      const int lo = std::max(1, std::min(cfg.min_instances, 6));
      const int hi = std::max(lo, std::min(cfg.max_instances, 6));
      const int n = rng.uniform_int(lo, hi);
      generate_gland_image(cfg.image_size, n, cfg, rng, img, map);
    }
    io::write_png_rgb8((fs::path(dir) / "images" / (id + ".png")).string(), io::to_u8(img));
    io::write_png_gray16((fs::path(dir) / "masks" / (id + ".png")).string(), map);
    ids.push_back(id);
  }

  nlohmann::json meta;
  meta["mode"] = cfg.mode == SynthConfig::Mode::kNuclei ? "nuclei" : "gland";
  meta["seed"] = cfg.seed;
  meta["generator_version"] = kGeneratorVersion;
  meta["num_images"] = cfg.num_images;
  meta["image_size"] = cfg.image_size;
  std::ofstream os(fs::path(dir) / "meta.json");
  if (!os) throw std::runtime_error("synth_generate: cannot write meta.json in " + dir);
  os << meta.dump(2) << '\n';
  return ids;
}

}  // namespace pgfa::data
