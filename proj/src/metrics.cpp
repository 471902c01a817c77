#include "pgfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace pgfa::metrics {
namespace {

double image_diagonal(const LabelMap& m) {
  return std::sqrt(static_cast<double>(m.dim(0)) * m.dim(0) +
                   static_cast<double>(m.dim(1)) * m.dim(1));
}

// Boundary = mask pixel with a 4-neighbor outside the mask (erosion
// difference). Image borders count as outside.
std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& mask) {
  const int H = mask.dim(0), W = mask.dim(1);
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (mask.at2(y, x) == 0) continue;
      const bool inner = y > 0 && mask.at2(y - 1, x) != 0 && y + 1 < H && mask.at2(y + 1, x) != 0 &&
                         x > 0 && mask.at2(y, x - 1) != 0 && x + 1 < W && mask.at2(y, x + 1) != 0;
      if (!inner) out.emplace_back(y, x);
    }
  return out;
}

double percentile_interp(std::vector<double>& v, double pct) {
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

double directed_percentile_dist(const std::vector<std::pair<int, int>>& from,
                                const std::vector<std::pair<int, int>>& to, double pct) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const auto& [ay, ax] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [by, bx] : to) {
      const double dy = ay - by, dx = ax - bx;
      best = std::min(best, dy * dy + dx * dx);
    }
    dists.push_back(std::sqrt(best));
  }
  return percentile_interp(dists, pct);
}

// Hausdorff between two binary masks given as pixel-index sets of one
// instance each, reusing precomputed boundaries.
double pair_hausdorff(const std::vector<std::pair<int, int>>& ba,
                      const std::vector<std::pair<int, int>>& bb, double pct) {
  return std::max(directed_percentile_dist(ba, bb, pct), directed_percentile_dist(bb, ba, pct));
}

LabelMap mask_from_pixels(const std::vector<int64_t>& pix, int H, int W) {
  LabelMap m({H, W});
  for (int64_t p : pix) m[p] = 1;
  return m;
}

struct Overlap {
  // intersection counts keyed by (gt index, pred index)
  std::map<std::pair<int, int>, int64_t> inter;
  std::vector<int64_t> gt_size, pred_size;
};

Overlap compute_overlap(const InstanceSet& gt, const InstanceSet& pred) {
  Overlap ov;
  ov.gt_size.resize(gt.ids.size());
  ov.pred_size.resize(pred.ids.size());
  for (size_t i = 0; i < gt.ids.size(); ++i) ov.gt_size[i] = static_cast<int64_t>(gt.pixels[i].size());
  for (size_t j = 0; j < pred.ids.size(); ++j)
    ov.pred_size[j] = static_cast<int64_t>(pred.pixels[j].size());

  std::unordered_map<int32_t, int> pred_index;
  for (size_t j = 0; j < pred.ids.size(); ++j) pred_index[pred.ids[j]] = static_cast<int>(j);
  for (size_t i = 0; i < gt.ids.size(); ++i) {
    for (int64_t p : gt.pixels[i]) {
      const int32_t pid = pred.map[p];
      if (pid <= 0) continue;
      auto it = pred_index.find(pid);
      if (it == pred_index.end()) continue;
      ++ov.inter[{static_cast<int>(i), it->second}];
    }
  }
  return ov;
}

}  // namespace

InstanceSet InstanceSet::from_map(const LabelMap& map) {
  if (map.ndim() != 2) throw std::invalid_argument("InstanceSet: map must be 2-D");
  InstanceSet s;
  s.map = map;
  std::map<int32_t, std::vector<int64_t>> bins;
  for (int64_t i = 0; i < map.numel(); ++i) {
    const int32_t id = map[i];
    if (id < 0) throw std::invalid_argument("InstanceSet: negative instance id");
    if (id > 0) bins[id].push_back(i);
  }
  for (auto& [id, pix] : bins) {
    s.ids.push_back(id);
    s.pixels.push_back(std::move(pix));
  }
  return s;
}

LabelMap instances_from_semantic(const Tensor<float>& probs, PostprocessMode mode) {
  if (probs.ndim() != 3) throw std::invalid_argument("instances_from_semantic: expects (C, H, W)");
  const int C = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  Tensor<int32_t> arg({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      float bv = probs.at3(0, y, x);
      for (int c = 1; c < C; ++c)
        if (probs.at3(c, y, x) > bv) {
          bv = probs.at3(c, y, x);
          best = c;
        }
      arg.at2(y, x) = best;
    }

  auto components8 = [&](auto&& is_seed) {
    LabelMap lab({H, W});
    int32_t next = 0;
    std::vector<int64_t> stack;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!is_seed(y, x) || lab.at2(y, x) != 0) continue;
        ++next;
        stack.push_back(static_cast<int64_t>(y) * W + x);
        lab.at2(y, x) = next;
        while (!stack.empty()) {
          const int64_t p = stack.back();
          stack.pop_back();
          const int py = static_cast<int>(p / W), px = static_cast<int>(p % W);
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dy == 0 && dx == 0) continue;
              const int ny = py + dy, nx = px + dx;
              if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
              if (!is_seed(ny, nx) || lab.at2(ny, nx) != 0) continue;
              lab.at2(ny, nx) = next;
              stack.push_back(static_cast<int64_t>(ny) * W + nx);
            }
        }
      }
    return lab;
  };

  if (mode == PostprocessMode::kBinaryCC)
    return components8([&](int y, int x) { return arg.at2(y, x) > 0; });

  if (C < 3)
    throw std::invalid_argument("instances_from_semantic: boundary_aware needs 3 classes");
  LabelMap lab = components8([&](int y, int x) { return arg.at2(y, x) == 1; });
  // One dilation pass over the predicted foreground; contested pixels take the
  // lowest neighboring id.
  LabelMap out = lab;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (lab.at2(y, x) != 0 || arg.at2(y, x) == 0) continue;
      int32_t best = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          const int32_t id = lab.at2(ny, nx);
          if (id > 0 && (best == 0 || id < best)) best = id;
        }
      out.at2(y, x) = best;
    }
  return out;
}

double pixel_dice(const LabelMap& pred, const LabelMap& gt) {
  check_same_shape(pred, gt, "pixel_dice");
  int64_t inter = 0, a = 0, b = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    a += p;
    b += g;
    inter += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double pixel_iou(const LabelMap& pred, const LabelMap& gt) {
  check_same_shape(pred, gt, "pixel_iou");
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double aji(const InstanceSet& gt, const InstanceSet& pred) {
  check_same_shape(gt.map, pred.map, "aji");
  if (gt.empty() && pred.empty()) return 1.0;
  const Overlap ov = compute_overlap(gt, pred);
  std::vector<bool> used(pred.ids.size(), false);
  long double C = 0, U = 0;
  for (size_t i = 0; i < gt.ids.size(); ++i) {
    int best = -1;
    double best_iou = -1.0;
    int64_t best_inter = 0;
    for (size_t j = 0; j < pred.ids.size(); ++j) {
      if (used[j]) continue;
      auto it = ov.inter.find({static_cast<int>(i), static_cast<int>(j)});
      if (it == ov.inter.end()) continue;
      const int64_t inter = it->second;
      const double iou = static_cast<double>(inter) /
                         static_cast<double>(ov.gt_size[i] + ov.pred_size[j] - inter);
      if (iou > best_iou) {  // ties keep the lower prediction id (first hit)
        best_iou = iou;
        best = static_cast<int>(j);
        best_inter = inter;
      }
    }
    if (best >= 0) {
      used[static_cast<size_t>(best)] = true;
      C += static_cast<long double>(best_inter);
      U += static_cast<long double>(ov.gt_size[i] + ov.pred_size[static_cast<size_t>(best)] -
                                    best_inter);
    } else {
      U += static_cast<long double>(ov.gt_size[i]);
    }
  }
  for (size_t j = 0; j < pred.ids.size(); ++j)
    if (!used[j]) U += static_cast<long double>(ov.pred_size[j]);
  if (U == 0) return 1.0;
  return static_cast<double>(C / U);
}

double hausdorff95(const LabelMap& pred, const LabelMap& gt, double percentile) {
  check_same_shape(pred, gt, "hausdorff95");
  const auto bp = boundary_pixels(pred);
  const auto bg = boundary_pixels(gt);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return image_diagonal(pred);
  return pair_hausdorff(bp, bg, percentile);
}

double detection_f1(const InstanceSet& gt, const InstanceSet& pred, double iou_thresh) {
  check_same_shape(gt.map, pred.map, "detection_f1");
  if (gt.empty() && pred.empty()) return 1.0;
  const Overlap ov = compute_overlap(gt, pred);
  struct Cand {
    double iou;
    int gi, pj;
  };
  std::vector<Cand> cands;
  for (const auto& [key, inter] : ov.inter) {
    const auto [gi, pj] = key;
    const double iou = static_cast<double>(inter) /
                       static_cast<double>(ov.gt_size[static_cast<size_t>(gi)] +
                                           ov.pred_size[static_cast<size_t>(pj)] - inter);
    if (iou > iou_thresh) cands.push_back({iou, gi, pj});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.gi != b.gi) return a.gi < b.gi;
    return a.pj < b.pj;
  });
  std::vector<bool> gt_used(gt.ids.size(), false), pred_used(pred.ids.size(), false);
  int64_t tp = 0;
  for (const auto& c : cands) {
    if (gt_used[static_cast<size_t>(c.gi)] || pred_used[static_cast<size_t>(c.pj)]) continue;
    gt_used[static_cast<size_t>(c.gi)] = true;
    pred_used[static_cast<size_t>(c.pj)] = true;
    ++tp;
  }
  const int64_t fn = static_cast<int64_t>(gt.ids.size()) - tp;
  const int64_t fp = static_cast<int64_t>(pred.ids.size()) - tp;
  if (2 * tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

namespace {

// Index of the counterpart with the largest pixel overlap, or -1.
int max_overlap_counterpart(const Overlap& ov, bool from_gt, int idx) {
  int best = -1;
  int64_t best_inter = 0;
  for (const auto& [key, inter] : ov.inter) {
    const int a = from_gt ? key.first : key.second;
    const int b = from_gt ? key.second : key.first;
    if (a != idx) continue;
    if (inter > best_inter || (inter == best_inter && (best < 0 || b < best))) {
      best_inter = inter;
      best = b;
    }
  }
  return best;
}

double dice_of_sets(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                    int64_t inter) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a.size() + b.size());
}

}  // namespace

double object_dice(const InstanceSet& gt, const InstanceSet& pred) {
  check_same_shape(gt.map, pred.map, "object_dice");
  if (gt.empty() && pred.empty()) return 1.0;
  const Overlap ov = compute_overlap(gt, pred);
  const auto total = [](const InstanceSet& s) {
    int64_t n = 0;
    for (const auto& p : s.pixels) n += static_cast<int64_t>(p.size());
    return n;
  };
  const double gt_total = static_cast<double>(total(gt));
  const double pred_total = static_cast<double>(total(pred));

  double gt_side = 0.0;
  for (size_t i = 0; i < gt.ids.size(); ++i) {
    const int j = max_overlap_counterpart(ov, true, static_cast<int>(i));
    const int64_t inter = j >= 0 ? ov.inter.at({static_cast<int>(i), j}) : 0;
    const double d = j >= 0 ? dice_of_sets(gt.pixels[i], pred.pixels[static_cast<size_t>(j)], inter)
                            : 0.0;
    gt_side += static_cast<double>(gt.pixels[i].size()) / gt_total * d;
  }
  double pred_side = 0.0;
  for (size_t j = 0; j < pred.ids.size(); ++j) {
    const int i = max_overlap_counterpart(ov, false, static_cast<int>(j));
    const int64_t inter = i >= 0 ? ov.inter.at({i, static_cast<int>(j)}) : 0;
    const double d = i >= 0 ? dice_of_sets(pred.pixels[j], gt.pixels[static_cast<size_t>(i)], inter)
                            : 0.0;
    pred_side += static_cast<double>(pred.pixels[j].size()) / pred_total * d;
  }
  if (gt.empty()) return 0.5 * pred_side;   // pred_side terms are all zero overlap anyway
  if (pred.empty()) return 0.5 * gt_side;
  return 0.5 * (gt_side + pred_side);
}

double object_hausdorff(const InstanceSet& gt, const InstanceSet& pred, double percentile) {
  check_same_shape(gt.map, pred.map, "object_hausdorff");
  if (gt.empty() && pred.empty()) return 0.0;
  const Overlap ov = compute_overlap(gt, pred);
  const int H = gt.map.dim(0), W = gt.map.dim(1);
  const double penalty = image_diagonal(gt.map);
  const auto total = [](const InstanceSet& s) {
    int64_t n = 0;
    for (const auto& p : s.pixels) n += static_cast<int64_t>(p.size());
    return n;
  };

  std::vector<std::vector<std::pair<int, int>>> gt_b(gt.ids.size()), pred_b(pred.ids.size());
  for (size_t i = 0; i < gt.ids.size(); ++i)
    gt_b[i] = boundary_pixels(mask_from_pixels(gt.pixels[i], H, W));
  for (size_t j = 0; j < pred.ids.size(); ++j)
    pred_b[j] = boundary_pixels(mask_from_pixels(pred.pixels[j], H, W));

  double out = 0.0;
  if (!gt.empty()) {
    const double gt_total = static_cast<double>(total(gt));
    double side = 0.0;
    for (size_t i = 0; i < gt.ids.size(); ++i) {
      const int j = max_overlap_counterpart(ov, true, static_cast<int>(i));
      const double d =
          j >= 0 ? pair_hausdorff(gt_b[i], pred_b[static_cast<size_t>(j)], percentile) : penalty;
      side += static_cast<double>(gt.pixels[i].size()) / gt_total * d;
    }
    out += 0.5 * side;
  } else {
    out += 0.5 * penalty;
  }
  if (!pred.empty()) {
    const double pred_total = static_cast<double>(total(pred));
    double side = 0.0;
    for (size_t j = 0; j < pred.ids.size(); ++j) {
      const int i = max_overlap_counterpart(ov, false, static_cast<int>(j));
      const double d =
          i >= 0 ? pair_hausdorff(pred_b[j], gt_b[static_cast<size_t>(i)], percentile) : penalty;
      side += static_cast<double>(pred.pixels[j].size()) / pred_total * d;
    }
    out += 0.5 * side;
  } else {
    out += 0.5 * penalty;
  }
  return out;
}

MetricsReport evaluate(const std::vector<LabelMap>& pred_maps,
                       const std::vector<LabelMap>& gt_maps, EvalMode mode) {
  if (pred_maps.size() != gt_maps.size())
    throw std::invalid_argument("evaluate: got " + std::to_string(pred_maps.size()) +
                                " predictions for " + std::to_string(gt_maps.size()) +
                                " ground-truth maps");
  MetricsReport rep;
  rep.mode = mode;
  rep.fields = mode == EvalMode::kNuclei
                   ? std::vector<std::string>{"f1", "dice", "iou", "aji", "hd95", "f1_pixel"}
                   : std::vector<std::string>{"f1", "dice_obj", "haus_obj", "hd95_obj"};
  for (size_t i = 0; i < pred_maps.size(); ++i) {
    const InstanceSet gt = InstanceSet::from_map(gt_maps[i]);
    const InstanceSet pred = InstanceSet::from_map(pred_maps[i]);
    std::map<std::string, double> row;
    row["f1"] = detection_f1(gt, pred);
    if (mode == EvalMode::kNuclei) {
      row["dice"] = pixel_dice(pred_maps[i], gt_maps[i]);
      row["iou"] = pixel_iou(pred_maps[i], gt_maps[i]);
      row["aji"] = aji(gt, pred);
      row["hd95"] = hausdorff95(pred_maps[i], gt_maps[i]);
      const double d = row["dice"];
      row["f1_pixel"] = d;  // pixel F1 of the foreground class equals Dice
    } else {
      row["dice_obj"] = object_dice(gt, pred);
      row["haus_obj"] = object_hausdorff(gt, pred, 100.0);
      row["hd95_obj"] = object_hausdorff(gt, pred, 95.0);
    }
    rep.per_image.push_back(std::move(row));
  }
  for (const auto& f : rep.fields) {
    double s = 0.0;
    for (const auto& row : rep.per_image) s += row.at(f);
    rep.mean[f] = rep.per_image.empty() ? 0.0 : s / static_cast<double>(rep.per_image.size());
  }
  return rep;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode == EvalMode::kNuclei ? "nuclei" : "gland";
  j["fields"] = fields;
  j["per_image"] = per_image;
  j["mean"] = mean;
  return j.dump(2);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "image";
  for (const auto& f : fields) os << ',' << f;
  os << '\n';
  for (size_t i = 0; i < per_image.size(); ++i) {
    os << i;
    for (const auto& f : fields) os << ',' << per_image[i].at(f);
    os << '\n';
  }
  os << "mean";
  for (const auto& f : fields) os << ',' << mean.at(f);
  os << '\n';
  return os.str();
}

}  // namespace pgfa::metrics
