#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pgfa/rng.hpp"
#include "pgfa/tensor.hpp"

// Synthetic histopathology-style data plus the directory loader, patch
// extraction, augmentation, and labeled/unlabeled splitting.
//
// Dataset directory layout:
//   images/<id>.png  8-bit RGB
//   masks/<id>.png   16-bit single-channel instance ids (0 = background)
//   meta.json        {mode, seed, generator_version, ...}
namespace pgfa::data {

enum class ClassMapMode { kBinary, kBoundaryAware };

struct Sample {
  Tensor<float> image;         // (3, H, W) in [0, 1]
  LabelMap instance_map;       // (H, W); empty for unlabeled samples
  Tensor<int32_t> class_map;   // (H, W); derived from instance_map
  bool is_labeled = false;
  std::string id;
};

// Background class 0, foreground 1; boundary-aware mode adds class 2 on
// instance pixels that touch (4-neighborhood) a different id or background.
Tensor<int32_t> class_map_from_instances(const LabelMap& map, ClassMapMode mode);

struct SynthConfig {
  enum class Mode { kNuclei, kGland };
  Mode mode = Mode::kNuclei;
  int image_size = 64;
  int num_images = 16;
  int min_instances = 8, max_instances = 16;   // nuclei mode; gland uses fewer
  double radius_min = 3.0, radius_max = 6.0;
  double texture_noise = 0.03;
  double overlap_allowance = 0.25;  // max fraction of a new instance's pixels already taken
  uint64_t seed = 7;

  void validate() const;
};

// Writes a fully reproducible dataset directory; returns image ids.
std::vector<std::string> synth_generate(const SynthConfig& cfg, const std::string& dir);

class Dataset {
 public:
  static Dataset load(const std::string& dir);

  size_t size() const { return entries_.size(); }
  const std::string& id(size_t i) const { return entries_[i].id; }
  bool has_mask(size_t i) const { return !entries_[i].mask_path.empty(); }
  std::string mode() const { return mode_; }

  // Loads image (and mask when present) from disk.
  Sample get(size_t i, ClassMapMode cmode = ClassMapMode::kBinary) const;
  // Same, but requires the sample to carry a mask.
  Sample get_labeled(size_t i, ClassMapMode cmode = ClassMapMode::kBinary) const;

 private:
  struct Entry {
    std::string id, image_path, mask_path;
  };
  std::vector<Entry> entries_;
  std::string dir_, mode_;
};

// Row-major sliding-window crops; the last window in each direction snaps to
// the image edge so the union of footprints covers every pixel. Instance ids
// are relabeled per patch to consecutive values starting at 1.
std::vector<Sample> extract_patches(const Sample& s, int patch, int stride);

struct AugmentConfig {
  bool flips = true;
  bool rot90 = true;
  double scale_min = 0.8, scale_max = 1.2;
  double free_angle_deg = 0.0;  // 0 disables free-angle rotation
  double shear_max = 0.05;
  double translate_frac = 0.05;
};

// A concrete draw of augmentation parameters; identity() leaves samples
// unchanged, which the tests rely on.
struct AugmentParams {
  bool hflip = false, vflip = false;
  int rot90_k = 0;
  double scale = 1.0;
  double angle_deg = 0.0;
  double shear = 0.0;
  double tx = 0.0, ty = 0.0;  // fraction of width/height

  static AugmentParams identity() { return {}; }
  bool is_identity() const {
    return !hflip && !vflip && rot90_k == 0 && scale == 1.0 && angle_deg == 0.0 && shear == 0.0 &&
           tx == 0.0 && ty == 0.0;
  }
};

AugmentParams draw_augment(Rng& rng, const AugmentConfig& cfg);
// Applies the same geometric transform to the image (bilinear) and the maps
// (nearest neighbor). Flips and 90-degree rotations are exact pixel
// permutations; scale/rotation/shear go through one affine warp.
Sample apply_augment(const Sample& s, const AugmentParams& p,
                     ClassMapMode cmode = ClassMapMode::kBinary);
Sample augment(const Sample& s, Rng& rng, const AugmentConfig& cfg,
               ClassMapMode cmode = ClassMapMode::kBinary);

inline constexpr float kImagenetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImagenetStd[3] = {0.229f, 0.224f, 0.225f};

Tensor<float> normalize(const Tensor<float>& image, const float mean[3], const float stddev[3]);
Tensor<float> denormalize(const Tensor<float>& image, const float mean[3], const float stddev[3]);

// Image-level split: round(fraction * M) labeled (at least 1), deterministic
// in the seed; returns (labeled indices, unlabeled indices).
std::pair<std::vector<size_t>, std::vector<size_t>> split_labeled(size_t dataset_size,
                                                                  double fraction, uint64_t seed);

}  // namespace pgfa::data
