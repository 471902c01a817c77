#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfa/nn.hpp"

// PG-FANet: a shared stride-2 convolution block feeding S structurally
// identical stages (four residual blocks, the last two dilated, then ASPP and
// a 1x1 classifier). Stage s>1 sees the shared CB features re-weighted by the
// previous stage's softmax pseudo-mask (MGFE); shallow and deep features from
// every stage are projected, upsampled, and summed (MMFA) and fused with the
// last stage's logits into the final prediction.
namespace pgfa::model {

using ag::Var;

enum class UpsampleMode { kBilinear, kNearest };

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 2;
  int base_width = 16;
  std::vector<int> stage_widths = {16, 32, 64, 64};
  std::pair<int, int> dilations = {2, 4};
  int num_stages = 2;         // S
  int num_shallow_blocks = 3; // I
  std::vector<int> aspp_rates = {6, 12, 18};
  UpsampleMode upsample_mode = UpsampleMode::kBilinear;
  bool enable_mgfe = true;
  bool enable_multiscale = true;
  bool enable_multistage = true;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument("invalid model config: " + field + " " + why);
    };
    if (in_channels < 1) fail("in_channels", "must be >= 1");
    if (num_classes < 2) fail("num_classes", "must be >= 2");
    if (base_width < 1) fail("base_width", "must be positive");
    if (stage_widths.size() != 4) fail("stage_widths", "must list 4 widths (RB1..RB4)");
    for (int w : stage_widths)
      if (w < 1) fail("stage_widths", "must all be positive");
    if (dilations.first < 1 || dilations.second < 1) fail("dilations", "must be positive");
    if (num_stages < 1) fail("num_stages", "must be >= 1");
    if (num_shallow_blocks < 1 || num_shallow_blocks > 3)
      fail("num_shallow_blocks", "must be in [1, 3] (at most one below the block count)");
    if (aspp_rates.empty()) fail("aspp_rates", "must be non-empty");
    for (int r : aspp_rates)
      if (r < 1) fail("aspp_rates", "must all be positive");
  }

  // CB and RB2 each halve the resolution.
  int downsample_factor() const { return 4; }
};

struct NoiseSpec {
  double stddev = 0.1;
  bool relative = true;  // scale by the feature tensor's own std
};

template <typename T>
struct StageTaps {
  Var<T> cb_out;                 // stage entry features at CB resolution
  std::vector<Var<T>> rb_outs;   // outputs of RB1..RB4
  Var<T> stage_logits;           // (B, C, H, W) at input resolution
};

template <typename T>
struct ModelOutput {
  Var<T> stage1_logits;
  Var<T> stage2_logits;  // last stage; equals stage1_logits when S == 1
  Var<T> final_logits;   // stage2 fused with aggregated features
  std::vector<StageTaps<T>> taps;
};

template <typename T>
class PGFANet {
 public:
  PGFANet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
    register_all();
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }
  int64_t param_count() const { return store_.param_count(); }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  // Teacher copies run with frozen BN statistics.
  void set_update_bn_stats(bool on) { update_bn_ = on; }

  // Runs one stage. Stage 0 consumes raw images and applies the shared CB;
  // later stages consume entry features already at CB resolution.
  StageTaps<T> stage_forward(int stage, const Var<T>& input) const {
    check_stage(stage);
    Var<T> entry = stage == 0 ? cb_(input, training_, update_bn_) : input;
    return trunk_forward(stage, entry, entry);
  }

  // Mask-guided feature enhancement for the given stage (>= 1): the previous
  // stage's softmax pseudo-mask is resized to the CB grid, concatenated, and
  // reduced back to the CB width by a 1x1 convolution.
  Var<T> mgfe_fuse(int stage, const Var<T>& cb_features, const Var<T>& prev_stage_logits) const {
    if (!cfg_.enable_mgfe) return cb_features;
    check_stage(stage);
    if (stage < 1) throw std::invalid_argument("mgfe_fuse: stage must be >= 1");
    if (cb_features->value.dim(0) != prev_stage_logits->value.dim(0))
      throw std::invalid_argument("mgfe_fuse: batch size mismatch");
    if (prev_stage_logits->value.dim(1) != cfg_.num_classes)
      throw std::invalid_argument("mgfe_fuse: pseudo-mask must have num_classes channels");
    Var<T> pm = ag::softmax_channels(prev_stage_logits);
    pm = resize(pm, cb_features->value.dim(2), cb_features->value.dim(3));
    Var<T> cat = ag::concat_channels<T>({cb_features, pm});
    return mgfe_reduce_[static_cast<size_t>(stage - 1)](cat);
  }

  // Eq.-(3)-style shallow aggregation: project each of the first I RB outputs
  // of every stage to the aggregation width, BN+PReLU, upsample to the input
  // grid, and sum.
  Var<T> multiscale_aggregate(const std::vector<StageTaps<T>>& taps) const {
    if (!cfg_.enable_multiscale)
      throw std::logic_error("multiscale_aggregate: module disabled in config");
    if (taps.empty()) throw std::invalid_argument("multiscale_aggregate: no stage taps");
    const auto [ho, wo] = output_size(taps);
    Var<T> acc;
    for (size_t s = 0; s < taps.size(); ++s) {
      if (static_cast<int>(taps[s].rb_outs.size()) < cfg_.num_shallow_blocks)
        throw std::invalid_argument("multiscale_aggregate: stage has fewer RB outputs than I");
      for (int i = 0; i < cfg_.num_shallow_blocks; ++i) {
        const auto& proj = ms_proj_[s * static_cast<size_t>(cfg_.num_shallow_blocks) +
                                    static_cast<size_t>(i)];
        Var<T> term = resize(proj(taps[s].rb_outs[static_cast<size_t>(i)], training_, update_bn_),
                             ho, wo);
        acc = acc ? ag::add(acc, term) : term;
      }
    }
    return acc;
  }

  // Eq.-(4)-style deep aggregation: adds each stage's projected RB4 features
  // to the fused multi-scale map.
  Var<T> multistage_aggregate(const Var<T>& x_m_fused,
                              const std::vector<StageTaps<T>>& taps) const {
    if (!cfg_.enable_multistage)
      throw std::logic_error("multistage_aggregate: module disabled in config");
    if (taps.empty()) throw std::invalid_argument("multistage_aggregate: no stage taps");
    const auto [ho, wo] = output_size(taps);
    if (x_m_fused->value.dim(2) != ho || x_m_fused->value.dim(3) != wo)
      throw std::invalid_argument("multistage_aggregate: fused map is " +
                                  x_m_fused->value.shape_str() + ", expected spatial " +
                                  std::to_string(ho) + "x" + std::to_string(wo));
    Var<T> acc = x_m_fused;
    for (size_t s = 0; s < taps.size(); ++s) {
      Var<T> term = resize(deep_proj_[s](taps[s].rb_outs.back(), training_, update_bn_), ho, wo);
      acc = ag::add(acc, term);
    }
    return acc;
  }

  ModelOutput<T> forward(const Tensor<T>& images, const NoiseSpec* noise = nullptr,
                         Rng* noise_rng = nullptr) const {
    if (images.ndim() != 4 || images.dim(1) != cfg_.in_channels)
      throw std::invalid_argument("forward: expected (B, " + std::to_string(cfg_.in_channels) +
                                  ", H, W) input, got " + images.shape_str());
    const int H = images.dim(2), W = images.dim(3);
    const int f = cfg_.downsample_factor();
    if (H % f != 0 || W % f != 0)
      throw std::invalid_argument("forward: spatial size " + std::to_string(H) + "x" +
                                  std::to_string(W) + " must be divisible by " +
                                  std::to_string(f));

    ModelOutput<T> out;
    Var<T> x = ag::constant(images);
    Var<T> cb = cb_(x, training_, update_bn_);
    Var<T> prev_logits;
    for (int s = 0; s < cfg_.num_stages; ++s) {
      Var<T> entry = cb;
      if (s > 0 && cfg_.enable_mgfe) entry = mgfe_fuse(s, cb, prev_logits);
      Var<T> noisy = entry;
      if (noise && noise->stddev > 0.0 && noise_rng) noisy = perturb(entry, *noise, *noise_rng);
      out.taps.push_back(trunk_forward(s, entry, noisy));
      prev_logits = out.taps.back().stage_logits;
    }
    out.stage1_logits = out.taps.front().stage_logits;
    out.stage2_logits = out.taps.back().stage_logits;

    Var<T> agg;
    if (cfg_.enable_multiscale) agg = multiscale_aggregate(out.taps);
    if (cfg_.enable_multistage) {
      if (!agg) {
        Tensor<T> z({images.dim(0), agg_width(), H, W});
        agg = ag::constant(std::move(z));
      }
      agg = multistage_aggregate(agg, out.taps);
    }
    out.final_logits = agg ? ag::add(out.stage2_logits, fuse_head_(agg)) : out.stage2_logits;
    return out;
  }

 private:
  struct Stage {
    nn::BasicBlock<T> rb[4];
    nn::ConvBnAct<T> aspp_1x1;
    std::vector<nn::ConvBnAct<T>> aspp_dil;
    nn::ConvBnAct<T> aspp_pool;
    nn::ConvBnAct<T> aspp_merge;
    nn::Conv2d<T> head;
  };

  int agg_width() const { return cfg_.base_width; }
  int aspp_width() const { return std::max(4, cfg_.stage_widths[3] / 2); }

  void check_stage(int s) const {
    if (s < 0 || s >= cfg_.num_stages)
      throw std::invalid_argument("stage index " + std::to_string(s) + " out of range [0, " +
                                  std::to_string(cfg_.num_stages) + ")");
  }

  Var<T> resize(const Var<T>& x, int h, int w) const {
    return cfg_.upsample_mode == UpsampleMode::kBilinear ? ag::upsample_bilinear(x, h, w)
                                                         : ag::upsample_nearest(x, h, w);
  }

  std::pair<int, int> output_size(const std::vector<StageTaps<T>>& taps) const {
    const auto& s = taps.front().stage_logits->value.shape;
    return {s[2], s[3]};
  }

  // Additive Gaussian noise on the stage entry features.
  Var<T> perturb(const Var<T>& x, const NoiseSpec& spec, Rng& rng) const {
    double sd = spec.stddev;
    if (spec.relative) {
      const int64_t n = x->value.numel();
      const double sum = kern::ew<T>().reduce_sum(n, x->value.ptr());
      const double sumsq = kern::ew<T>().reduce_sumsq(n, x->value.ptr());
      const double mean = sum / static_cast<double>(n);
      const double var = sumsq / static_cast<double>(n) - mean * mean;
      sd *= std::sqrt(var > 0 ? var : 0);
    }
    if (sd <= 0.0) return x;
    Tensor<T> noise(x->value.shape);
    for (auto& v : noise.data) v = static_cast<T>(rng.normal() * sd);
    return ag::add(x, ag::constant(std::move(noise)));
  }

  // RB1..RB4 -> ASPP -> classifier, upsampled to the stage input resolution.
  // `entry` is recorded as the tap; `active` is what actually propagates
  // (they differ only when feature noise is injected).
  StageTaps<T> trunk_forward(int s, const Var<T>& entry, const Var<T>& active) const {
    const Stage& st = stages_[static_cast<size_t>(s)];
    StageTaps<T> taps;
    taps.cb_out = entry;
    Var<T> h = active;
    for (int i = 0; i < 4; ++i) {
      h = st.rb[i](h, training_, update_bn_);
      taps.rb_outs.push_back(h);
    }
    std::vector<Var<T>> branches;
    branches.push_back(st.aspp_1x1(h, training_, update_bn_));
    for (const auto& br : st.aspp_dil) branches.push_back(br(h, training_, update_bn_));
    Var<T> pooled = st.aspp_pool(ag::global_avg_pool(h), training_, update_bn_);
    branches.push_back(ag::upsample_nearest(pooled, h->value.dim(2), h->value.dim(3)));
    Var<T> merged = st.aspp_merge(ag::concat_channels(branches), training_, update_bn_);
    Var<T> logits = st.head(merged);
    const int ho = entry->value.dim(2) * 2, wo = entry->value.dim(3) * 2;
    taps.stage_logits = resize(logits, ho, wo);
    return taps;
  }

  void build(Rng& rng) {
    cb_.build(cfg_.in_channels, cfg_.base_width, 3, 2, 1, 1, nn::Act::kRelu, rng);
    stages_.resize(static_cast<size_t>(cfg_.num_stages));
    const auto& w = cfg_.stage_widths;
    for (int s = 0; s < cfg_.num_stages; ++s) {
      Stage& st = stages_[static_cast<size_t>(s)];
      st.rb[0].build(cfg_.base_width, w[0], 1, 1, rng);
      st.rb[1].build(w[0], w[1], 2, 1, rng);
      st.rb[2].build(w[1], w[2], 1, cfg_.dilations.first, rng);
      st.rb[3].build(w[2], w[3], 1, cfg_.dilations.second, rng);
      const int wa = aspp_width();
      st.aspp_1x1.build(w[3], wa, 1, 1, 0, 1, nn::Act::kRelu, rng);
      for (int r : cfg_.aspp_rates) {
        nn::ConvBnAct<T> br;
        br.build(w[3], wa, 3, 1, r, r, nn::Act::kRelu, rng);
        st.aspp_dil.push_back(std::move(br));
      }
      st.aspp_pool.build(w[3], wa, 1, 1, 0, 1, nn::Act::kRelu, rng);
      st.aspp_merge.build(wa * (2 + static_cast<int>(cfg_.aspp_rates.size())), w[3], 1, 1, 0, 1,
                          nn::Act::kRelu, rng);
      st.head.build(w[3], cfg_.num_classes, 1, 1, 0, 1, /*bias=*/true, rng);
    }
    if (cfg_.enable_mgfe) {
      for (int s = 1; s < cfg_.num_stages; ++s) {
        nn::Conv2d<T> red;
        red.build(cfg_.base_width + cfg_.num_classes, cfg_.base_width, 1, 1, 0, 1, true, rng);
        mgfe_reduce_.push_back(std::move(red));
      }
    }
    if (cfg_.enable_multiscale) {
      for (int s = 0; s < cfg_.num_stages; ++s)
        for (int i = 0; i < cfg_.num_shallow_blocks; ++i) {
          nn::ConvBnAct<T> p;
          p.build(w[static_cast<size_t>(i)], agg_width(), 1, 1, 0, 1, nn::Act::kPRelu, rng);
          ms_proj_.push_back(std::move(p));
        }
    }
    if (cfg_.enable_multistage) {
      for (int s = 0; s < cfg_.num_stages; ++s) {
        nn::ConvBnAct<T> p;
        p.build(w[3], agg_width(), 1, 1, 0, 1, nn::Act::kPRelu, rng);
        deep_proj_.push_back(std::move(p));
      }
    }
    if (cfg_.enable_multiscale || cfg_.enable_multistage)
      fuse_head_.build(agg_width(), cfg_.num_classes, 1, 1, 0, 1, true, rng);
  }

  void register_all() {
    cb_.reg(store_, "cb");
    for (int s = 0; s < cfg_.num_stages; ++s) {
      const std::string p = "stage" + std::to_string(s + 1);
      const Stage& st = stages_[static_cast<size_t>(s)];
      for (int i = 0; i < 4; ++i) st.rb[i].reg(store_, p + ".rb" + std::to_string(i + 1));
      st.aspp_1x1.reg(store_, p + ".aspp.b0");
      for (size_t r = 0; r < st.aspp_dil.size(); ++r)
        st.aspp_dil[r].reg(store_, p + ".aspp.b" + std::to_string(r + 1));
      st.aspp_pool.reg(store_, p + ".aspp.pool");
      st.aspp_merge.reg(store_, p + ".aspp.merge");
      st.head.reg(store_, p + ".head");
    }
    for (size_t i = 0; i < mgfe_reduce_.size(); ++i)
      mgfe_reduce_[i].reg(store_, "mgfe" + std::to_string(i + 2) + ".reduce");
    for (size_t i = 0; i < ms_proj_.size(); ++i) {
      const int s = static_cast<int>(i) / cfg_.num_shallow_blocks;
      const int b = static_cast<int>(i) % cfg_.num_shallow_blocks;
      ms_proj_[i].reg(store_, "mmfa.ms.s" + std::to_string(s + 1) + ".rb" + std::to_string(b + 1));
    }
    for (size_t i = 0; i < deep_proj_.size(); ++i)
      deep_proj_[i].reg(store_, "mmfa.deep.s" + std::to_string(i + 1));
    if (cfg_.enable_multiscale || cfg_.enable_multistage) fuse_head_.reg(store_, "mmfa.fuse");
  }

  ModelConfig cfg_;
  bool training_ = true;
  bool update_bn_ = true;
  nn::ConvBnAct<T> cb_;
  std::vector<Stage> stages_;
  std::vector<nn::Conv2d<T>> mgfe_reduce_;
  std::vector<nn::ConvBnAct<T>> ms_proj_;
  std::vector<nn::ConvBnAct<T>> deep_proj_;
  nn::Conv2d<T> fuse_head_;
  nn::ParamStore<T> store_;
};

}  // namespace pgfa::model
