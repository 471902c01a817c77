#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "pgfa/data.hpp"
#include "pgfa/png_io.hpp"

namespace pgfa::data {
namespace fs = std::filesystem;

Tensor<int32_t> class_map_from_instances(const LabelMap& map, ClassMapMode mode) {
  const int H = map.dim(0), W = map.dim(1);
  Tensor<int32_t> cls({H, W});
  for (int64_t i = 0; i < map.numel(); ++i) cls[i] = map[i] > 0 ? 1 : 0;
  if (mode == ClassMapMode::kBoundaryAware) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int32_t id = map.at2(y, x);
        if (id == 0) continue;
        const bool edge =
            (y == 0 || map.at2(y - 1, x) != id) || (y == H - 1 || map.at2(y + 1, x) != id) ||
            (x == 0 || map.at2(y, x - 1) != id) || (x == W - 1 || map.at2(y, x + 1) != id);
        if (edge) cls.at2(y, x) = 2;
      }
  }
  return cls;
}

Dataset Dataset::load(const std::string& dir) {
  Dataset ds;
  ds.dir_ = dir;
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images))
    throw std::runtime_error("dataset: missing images/ directory under " + dir);

  const fs::path meta_path = fs::path(dir) / "meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream is(meta_path);
    nlohmann::json meta;
    try {
      is >> meta;
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset: corrupt meta.json in " + dir + ": " + e.what());
    }
    if (meta.contains("mode")) ds.mode_ = meta["mode"].get<std::string>();
  }

  std::map<std::string, Entry> by_id;
  for (const auto& de : fs::directory_iterator(images)) {
    if (!de.is_regular_file()) continue;
    if (de.path().extension() != ".png") {
      std::cerr << "dataset: ignoring unrelated file " << de.path() << "\n";
      continue;
    }
    Entry e;
    e.id = de.path().stem().string();
    e.image_path = de.path().string();
    by_id[e.id] = std::move(e);
  }
  if (by_id.empty()) throw std::runtime_error("dataset: no images found under " + dir);

  if (fs::is_directory(masks)) {
    for (const auto& de : fs::directory_iterator(masks)) {
      if (!de.is_regular_file()) continue;
      if (de.path().extension() != ".png") {
        std::cerr << "dataset: ignoring unrelated file " << de.path() << "\n";
        continue;
      }
      const std::string id = de.path().stem().string();
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw std::runtime_error("dataset: mask without matching image: " + de.path().string());
      it->second.mask_path = de.path().string();
    }
  }
  for (auto& [id, e] : by_id) ds.entries_.push_back(std::move(e));  // sorted by id
  return ds;
}

Sample Dataset::get(size_t i, ClassMapMode cmode) const {
  if (i >= entries_.size()) throw std::out_of_range("dataset: index out of range");
  const Entry& e = entries_[i];
  Sample s;
  s.id = e.id;
  s.image = io::to_float(io::read_png_rgb8(e.image_path));
  if (!e.mask_path.empty()) {
    s.instance_map = io::read_png_gray16(e.mask_path);
    if (s.instance_map.dim(0) != s.image.dim(1) || s.instance_map.dim(1) != s.image.dim(2))
      throw std::runtime_error("dataset: image/mask size mismatch for id " + e.id);
    s.class_map = class_map_from_instances(s.instance_map, cmode);
    s.is_labeled = true;
  }
  return s;
}

Sample Dataset::get_labeled(size_t i, ClassMapMode cmode) const {
  Sample s = get(i, cmode);
  if (!s.is_labeled)
    throw std::runtime_error("dataset: missing mask for labeled image id " + s.id);
  return s;
}

std::vector<Sample> extract_patches(const Sample& s, int patch, int stride) {
  const int H = s.image.dim(1), W = s.image.dim(2);
  if (patch > H || patch > W)
    throw std::invalid_argument("extract_patches: patch " + std::to_string(patch) +
                                " exceeds image " + std::to_string(H) + "x" + std::to_string(W));
  if (stride < 1) throw std::invalid_argument("extract_patches: stride must be >= 1");

  auto starts = [&](int extent) {
    std::vector<int> v;
    for (int o = 0;; o += stride) {
      if (o + patch >= extent) {
        v.push_back(extent - patch);  // snap the last window to the edge
        break;
      }
      v.push_back(o);
    }
    return v;
  };

  std::vector<Sample> out;
  for (int oy : starts(H))
    for (int ox : starts(W)) {
      Sample p;
      p.id = s.id + "_y" + std::to_string(oy) + "x" + std::to_string(ox);
      p.is_labeled = s.is_labeled;
      p.image = Tensor<float>({3, patch, patch});
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x) p.image.at3(c, y, x) = s.image.at3(c, oy + y, ox + x);
      if (s.is_labeled) {
        LabelMap crop({patch, patch});
        std::map<int32_t, int32_t> relabel;
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x) {
            const int32_t id = s.instance_map.at2(oy + y, ox + x);
            if (id == 0) continue;
            auto [it, inserted] = relabel.emplace(id, static_cast<int32_t>(relabel.size() + 1));
            crop.at2(y, x) = it->second;
          }
        p.instance_map = std::move(crop);
        p.class_map = class_map_from_instances(p.instance_map, ClassMapMode::kBinary);
      }
      out.push_back(std::move(p));
    }
  return out;
}

Tensor<float> normalize(const Tensor<float>& image, const float mean[3], const float stddev[3]) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("normalize: expects (3, H, W)");
  for (int c = 0; c < 3; ++c)
    if (stddev[c] <= 0) throw std::invalid_argument("normalize: std must be positive");
  Tensor<float> out(image.shape);
  const int64_t HW = static_cast<int64_t>(image.dim(1)) * image.dim(2);
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < HW; ++i)
      out[c * HW + i] = (image[c * HW + i] - mean[c]) / stddev[c];
  return out;
}

Tensor<float> denormalize(const Tensor<float>& image, const float mean[3], const float stddev[3]) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("denormalize: expects (3, H, W)");
  Tensor<float> out(image.shape);
  const int64_t HW = static_cast<int64_t>(image.dim(1)) * image.dim(2);
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < HW; ++i) out[c * HW + i] = image[c * HW + i] * stddev[c] + mean[c];
  return out;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_labeled(size_t dataset_size,
                                                                  double fraction,
                                                                  uint64_t seed) {
  if (dataset_size == 0) throw std::invalid_argument("split_labeled: empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("split_labeled: fraction must be in (0, 1]");
  std::vector<size_t> idx(dataset_size);
  for (size_t i = 0; i < dataset_size; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = dataset_size - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i)));
    std::swap(idx[i], idx[j]);
  }
  size_t n = static_cast<size_t>(std::llround(fraction * static_cast<double>(dataset_size)));
  if (n < 1) n = 1;
  if (n > dataset_size) n = dataset_size;
  std::vector<size_t> labeled(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<size_t> unlabeled(idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end());
  std::sort(labeled.begin(), labeled.end());
  std::sort(unlabeled.begin(), unlabeled.end());
  return {labeled, unlabeled};
}

}  // namespace pgfa::data
