#pragma once

#include <map>
#include <string>
#include <vector>

#include "pgfa/tensor.hpp"

// Instance-segmentation evaluation: pixel Dice/IoU, AJI, 95HD, detection F1,
// and the object-level Dice/Hausdorff pair used for gland-style data. Each
// metric has an independently written brute-force oracle in the test tree.
namespace pgfa::metrics {

struct InstanceSet {
  LabelMap map;                                 // (H, W)
  std::vector<int32_t> ids;                     // sorted positive ids present
  std::vector<std::vector<int64_t>> pixels;     // linear indices, parallel to ids

  static InstanceSet from_map(const LabelMap& map);
  bool empty() const { return ids.empty(); }
};

enum class EvalMode { kNuclei, kGland };
enum class PostprocessMode { kBinaryCC, kBoundaryAware };

// Argmax semantics over class probabilities -> instance map.
//  - kBinaryCC: foreground = argmax > 0, 8-connected components.
//  - kBoundaryAware: 3-class argmax (bg / inside / boundary); components of
//    "inside" dilated by one pixel within the predicted foreground.
LabelMap instances_from_semantic(const Tensor<float>& probs_chw, PostprocessMode mode);

double pixel_dice(const LabelMap& pred_mask, const LabelMap& gt_mask);
double pixel_iou(const LabelMap& pred_mask, const LabelMap& gt_mask);

// Aggregated Jaccard index. GT instances are processed in ascending id; each
// picks the unused overlapping prediction with the highest IoU (ties broken by
// the lower prediction id). Unmatched pixels on either side inflate the union.
double aji(const InstanceSet& gt, const InstanceSet& pred);

// Symmetric 95th-percentile Hausdorff distance between 4-connectivity
// boundary pixel sets; percentile by linear interpolation. An empty mask is
// penalized with the image diagonal.
double hausdorff95(const LabelMap& pred_mask, const LabelMap& gt_mask, double percentile = 95.0);

// One-to-one greedy matching by descending IoU; a pair counts as TP when its
// IoU exceeds iou_thresh.
double detection_f1(const InstanceSet& gt, const InstanceSet& pred, double iou_thresh = 0.5);

// Object-level Dice: area-weighted Dice against the maximally overlapping
// counterpart, averaged over both directions.
double object_dice(const InstanceSet& gt, const InstanceSet& pred);

// Same pairing scheme with a per-pair (95%) Hausdorff distance; objects with
// no counterpart incur the image-diagonal penalty.
double object_hausdorff(const InstanceSet& gt, const InstanceSet& pred, double percentile = 95.0);

struct MetricsReport {
  EvalMode mode = EvalMode::kNuclei;
  std::vector<std::string> fields;                       // column order
  std::vector<std::map<std::string, double>> per_image;  // one row per image
  std::map<std::string, double> mean;

  std::string to_json() const;
  std::string to_csv() const;
};

MetricsReport evaluate(const std::vector<LabelMap>& pred_maps,
                       const std::vector<LabelMap>& gt_maps, EvalMode mode);

}  // namespace pgfa::metrics
