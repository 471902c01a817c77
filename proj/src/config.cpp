#include "pgfa/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pgfa::config {
namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

int to_int(const std::string& v) {
  size_t pos = 0;
  const int x = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected integer, got '" + v + "'");
  return x;
}

uint64_t to_u64(const std::string& v) {
  size_t pos = 0;
  const uint64_t x = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected integer, got '" + v + "'");
  return x;
}

double to_double(const std::string& v) {
  size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected boolean, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_int(tok));
  if (out.empty()) throw std::invalid_argument("expected comma-separated integers, got '" + v + "'");
  return out;
}

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = {
      {"model.in_channels", [](RunConfig& c, const std::string& v) { c.model.in_channels = to_int(v); }},
      {"model.num_classes", [](RunConfig& c, const std::string& v) { c.model.num_classes = to_int(v); }},
      {"model.base_width", [](RunConfig& c, const std::string& v) { c.model.base_width = to_int(v); }},
      {"model.stage_widths", [](RunConfig& c, const std::string& v) { c.model.stage_widths = to_int_list(v); }},
      {"model.dilations",
       [](RunConfig& c, const std::string& v) {
         const auto l = to_int_list(v);
         if (l.size() != 2) throw std::invalid_argument("dilations needs exactly 2 values");
         c.model.dilations = {l[0], l[1]};
       }},
      {"model.num_stages", [](RunConfig& c, const std::string& v) { c.model.num_stages = to_int(v); }},
      {"model.num_shallow_blocks",
       [](RunConfig& c, const std::string& v) { c.model.num_shallow_blocks = to_int(v); }},
      {"model.aspp_rates", [](RunConfig& c, const std::string& v) { c.model.aspp_rates = to_int_list(v); }},
      {"model.upsample",
       [](RunConfig& c, const std::string& v) {
         if (v == "bilinear")
           c.model.upsample_mode = model::UpsampleMode::kBilinear;
         else if (v == "nearest")
           c.model.upsample_mode = model::UpsampleMode::kNearest;
         else
           throw std::invalid_argument("upsample must be bilinear or nearest");
       }},
      {"model.mgfe", [](RunConfig& c, const std::string& v) { c.model.enable_mgfe = to_bool(v); }},
      {"model.multiscale",
       [](RunConfig& c, const std::string& v) { c.model.enable_multiscale = to_bool(v); }},
      {"model.multistage",
       [](RunConfig& c, const std::string& v) { c.model.enable_multistage = to_bool(v); }},

      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.total_epochs = to_int(v); }},
      {"train.steps_per_epoch",
       [](RunConfig& c, const std::string& v) { c.train.steps_per_epoch = to_int(v); }},
      {"train.base_lr", [](RunConfig& c, const std::string& v) { c.train.base_lr = to_double(v); }},
      {"train.lr_power", [](RunConfig& c, const std::string& v) { c.train.lr_power = to_double(v); }},
      {"train.ema_decay", [](RunConfig& c, const std::string& v) { c.train.ema_decay = to_double(v); }},
      {"train.rampup_k", [](RunConfig& c, const std::string& v) { c.train.rampup_k = to_double(v); }},
      {"train.lambda_dice",
       [](RunConfig& c, const std::string& v) { c.train.weights.lambda_dice = static_cast<float>(to_double(v)); }},
      {"train.lambda_vcc",
       [](RunConfig& c, const std::string& v) { c.train.weights.lambda_vcc = static_cast<float>(to_double(v)); }},
      {"train.lambda_intra",
       [](RunConfig& c, const std::string& v) { c.train.weights.lambda_intra = static_cast<float>(to_double(v)); }},
      {"train.batch_labeled",
       [](RunConfig& c, const std::string& v) { c.train.batch_labeled = to_int(v); }},
      {"train.batch_unlabeled",
       [](RunConfig& c, const std::string& v) { c.train.batch_unlabeled = to_int(v); }},
      {"train.noise_std", [](RunConfig& c, const std::string& v) { c.train.noise_std = to_double(v); }},
      {"train.noise_relative",
       [](RunConfig& c, const std::string& v) { c.train.noise_relative = to_bool(v); }},
      {"train.noise_to_teacher",
       [](RunConfig& c, const std::string& v) { c.train.noise_to_teacher = to_bool(v); }},
      {"train.inter", [](RunConfig& c, const std::string& v) { c.train.enable_inter = to_bool(v); }},
      {"train.intra", [](RunConfig& c, const std::string& v) { c.train.enable_intra = to_bool(v); }},
      {"train.shape", [](RunConfig& c, const std::string& v) { c.train.enable_shape = to_bool(v); }},
      {"train.augment", [](RunConfig& c, const std::string& v) { c.train.augment = to_bool(v); }},
      {"train.free_angle_deg",
       [](RunConfig& c, const std::string& v) { c.train.aug.free_angle_deg = to_double(v); }},
      {"train.uncertainty_scope",
       [](RunConfig& c, const std::string& v) {
         if (v == "pixel")
           c.train.uncertainty_scope = train::UncertaintyScope::kPixel;
         else if (v == "image")
           c.train.uncertainty_scope = train::UncertaintyScope::kImage;
         else
           throw std::invalid_argument("uncertainty_scope must be pixel or image");
       }},
      {"train.val_interval",
       [](RunConfig& c, const std::string& v) { c.train.val_interval = to_int(v); }},
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); }},

      {"data.mode",
       [](RunConfig& c, const std::string& v) {
         if (v != "nuclei" && v != "gland")
           throw std::invalid_argument("mode must be nuclei or gland");
         c.data.mode = v;
       }},
      {"data.class_map",
       [](RunConfig& c, const std::string& v) {
         if (v == "binary")
           c.data.class_map = data::ClassMapMode::kBinary;
         else if (v == "boundary_aware")
           c.data.class_map = data::ClassMapMode::kBoundaryAware;
         else
           throw std::invalid_argument("class_map must be binary or boundary_aware");
       }},
      {"data.labeled_fraction",
       [](RunConfig& c, const std::string& v) { c.data.labeled_fraction = to_double(v); }},
      {"data.split_seed", [](RunConfig& c, const std::string& v) { c.data.split_seed = to_u64(v); }},
      {"data.val_dir", [](RunConfig& c, const std::string& v) { c.data.val_dir = v; }},
      {"data.val_fraction",
       [](RunConfig& c, const std::string& v) { c.data.val_fraction = to_double(v); }},
      {"data.patch", [](RunConfig& c, const std::string& v) { c.data.patch = to_int(v); }},
      {"data.patch_stride",
       [](RunConfig& c, const std::string& v) { c.data.patch_stride = to_int(v); }},

      {"synth.image_size", [](RunConfig& c, const std::string& v) { c.synth.image_size = to_int(v); }},
      {"synth.num_images", [](RunConfig& c, const std::string& v) { c.synth.num_images = to_int(v); }},
      {"synth.min_instances",
       [](RunConfig& c, const std::string& v) { c.synth.min_instances = to_int(v); }},
      {"synth.max_instances",
       [](RunConfig& c, const std::string& v) { c.synth.max_instances = to_int(v); }},
      {"synth.radius_min", [](RunConfig& c, const std::string& v) { c.synth.radius_min = to_double(v); }},
      {"synth.radius_max", [](RunConfig& c, const std::string& v) { c.synth.radius_max = to_double(v); }},
      {"synth.texture_noise",
       [](RunConfig& c, const std::string& v) { c.synth.texture_noise = to_double(v); }},
      {"synth.overlap_allowance",
       [](RunConfig& c, const std::string& v) { c.synth.overlap_allowance = to_double(v); }},
      {"synth.seed", [](RunConfig& c, const std::string& v) { c.synth.seed = to_u64(v); }},

      {"paths.data", [](RunConfig& c, const std::string& v) { c.paths.data = v; }},
      {"paths.out", [](RunConfig& c, const std::string& v) { c.paths.out = v; }},
      {"paths.checkpoint", [](RunConfig& c, const std::string& v) { c.paths.checkpoint = v; }},
      {"paths.log", [](RunConfig& c, const std::string& v) { c.paths.log = v; }},
  };
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void unknown_key(const std::string& key) {
  std::string msg = "unknown config key '" + key + "'; valid keys are:";
  for (const auto& k : known_keys()) msg += "\n  " + k;
  throw std::invalid_argument(msg);
}

void apply(RunConfig& cfg, const std::string& key, const std::string& value,
           std::vector<std::string>& explicit_keys) {
  const auto it = schema().find(key);
  if (it == schema().end()) unknown_key(key);
  try {
    it->second(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("config key '" + key + "': value out of range: " + value);
  }
  explicit_keys.push_back(key);
}

}  // namespace

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [k, fn] : schema()) out.push_back(k);
  return out;
}

void RunConfig::finalize(const std::vector<std::string>& explicit_keys) {
  auto is_explicit = [&](const char* k) {
    return std::find(explicit_keys.begin(), explicit_keys.end(), k) != explicit_keys.end();
  };
  const bool gland = data.mode == "gland";
  if (!is_explicit("train.rampup_k")) train.rampup_k = gland ? 5.0 : 0.1;
  train.eval_mode = gland ? metrics::EvalMode::kGland : metrics::EvalMode::kNuclei;
  synth.mode = gland ? data::SynthConfig::Mode::kGland : data::SynthConfig::Mode::kNuclei;
  train.class_map_mode = data.class_map;
  if (data.class_map == data::ClassMapMode::kBoundaryAware && !is_explicit("model.num_classes"))
    model.num_classes = 3;
  if (data.class_map == data::ClassMapMode::kBoundaryAware && model.num_classes < 3)
    throw std::invalid_argument("config: boundary_aware class map needs num_classes >= 3");
  if (data.split_seed == 0) data.split_seed = train.seed;
  if (data.patch_stride == 0) data.patch_stride = data.patch;
  if (!(data.labeled_fraction > 0.0 && data.labeled_fraction <= 1.0))
    throw std::invalid_argument("config: data.labeled_fraction must be in (0, 1]");
  if (data.val_fraction < 0.0 || data.val_fraction >= 1.0)
    throw std::invalid_argument("config: data.val_fraction must be in [0, 1)");
  model.validate();
  train.validate();
  synth.validate();
}

RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::vector<std::string> explicit_keys;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                      ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                    ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (section.empty())
        throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                    ": key outside any [section]");
      apply(cfg, section + "." + key, value, explicit_keys);
    }
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must look like section.key=value: " + ov);
    apply(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), explicit_keys);
  }
  cfg.finalize(explicit_keys);
  return cfg;
}

}  // namespace pgfa::config
