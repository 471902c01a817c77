#pragma once

#include <string>
#include <vector>

#include "pgfa/data.hpp"
#include "pgfa/model.hpp"
#include "pgfa/trainer.hpp"

// Run configuration: a flat-section key-value file (INI style: [section],
// key = value, # comments) plus command-line overrides of the same
// "section.key=value" form. File values override defaults; overrides win over
// file values. Defaults follow the published training settings.
namespace pgfa::config {

struct DataOptions {
  std::string mode = "nuclei";  // nuclei | gland
  data::ClassMapMode class_map = data::ClassMapMode::kBinary;
  double labeled_fraction = 1.0;
  uint64_t split_seed = 0;  // 0 = use train.seed
  std::string val_dir;      // optional held-out dataset directory
  double val_fraction = 0.0;  // carve validation out of the training set
  int patch = 0;            // 0 = no patch extraction
  int patch_stride = 0;     // 0 = patch size
};

struct Paths {
  std::string data, out, checkpoint, log;
};

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  data::SynthConfig synth;
  DataOptions data;
  Paths paths;

  // Applies mode-dependent defaults (rampup_k, metric mode, synth mode,
  // boundary-aware class count) and validates everything.
  void finalize(const std::vector<std::string>& explicit_keys);
};

// path may be empty (defaults only). overrides entries look like
// "train.seed=7". Unknown keys raise an error that lists the valid keys.
RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

std::vector<std::string> known_keys();

}  // namespace pgfa::config
