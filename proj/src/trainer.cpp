#include "pgfa/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pgfa/checkpoint.hpp"
#include "pgfa/uncertainty.hpp"

namespace pgfa::train {
namespace fs = std::filesystem;

std::string model_config_to_json(const model::ModelConfig& cfg) {
  nlohmann::json j;
  j["in_channels"] = cfg.in_channels;
  j["num_classes"] = cfg.num_classes;
  j["base_width"] = cfg.base_width;
  j["stage_widths"] = cfg.stage_widths;
  j["dilations"] = {cfg.dilations.first, cfg.dilations.second};
  j["num_stages"] = cfg.num_stages;
  j["num_shallow_blocks"] = cfg.num_shallow_blocks;
  j["aspp_rates"] = cfg.aspp_rates;
  j["upsample"] = cfg.upsample_mode == model::UpsampleMode::kBilinear ? "bilinear" : "nearest";
  j["mgfe"] = cfg.enable_mgfe;
  j["multiscale"] = cfg.enable_multiscale;
  j["multistage"] = cfg.enable_multistage;
  return j.dump();
}

void model_config_from_json_text(const std::string& text, model::ModelConfig& cfg) {
  const nlohmann::json j = nlohmann::json::parse(text);
  cfg.in_channels = j.value("in_channels", cfg.in_channels);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.base_width = j.value("base_width", cfg.base_width);
  if (j.contains("stage_widths")) cfg.stage_widths = j["stage_widths"].get<std::vector<int>>();
  if (j.contains("dilations")) {
    const auto d = j["dilations"].get<std::vector<int>>();
    cfg.dilations = {d.at(0), d.at(1)};
  }
  cfg.num_stages = j.value("num_stages", cfg.num_stages);
  cfg.num_shallow_blocks = j.value("num_shallow_blocks", cfg.num_shallow_blocks);
  if (j.contains("aspp_rates")) cfg.aspp_rates = j["aspp_rates"].get<std::vector<int>>();
  if (j.contains("upsample"))
    cfg.upsample_mode = j["upsample"] == "nearest" ? model::UpsampleMode::kNearest
                                                   : model::UpsampleMode::kBilinear;
  cfg.enable_mgfe = j.value("mgfe", cfg.enable_mgfe);
  cfg.enable_multiscale = j.value("multiscale", cfg.enable_multiscale);
  cfg.enable_multistage = j.value("multistage", cfg.enable_multistage);
}

void TrainConfig::validate() const {
  if (total_epochs < 1) throw std::invalid_argument("train config: total_epochs must be >= 1");
  if (base_lr <= 0) throw std::invalid_argument("train config: base_lr must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0))
    throw std::invalid_argument("train config: ema_decay must be in [0, 1)");
  if (batch_labeled < 1) throw std::invalid_argument("train config: batch_labeled must be >= 1");
  if (batch_unlabeled < 0)
    throw std::invalid_argument("train config: batch_unlabeled must be >= 0");
  if (rampup_k < 0) throw std::invalid_argument("train config: rampup_k must be >= 0");
  if (noise_std < 0) throw std::invalid_argument("train config: noise_std must be >= 0");
  weights.validate();
}

std::string StepReport::to_json() const {
  nlohmann::json j;
  j["type"] = "step";
  j["epoch"] = epoch;
  j["step"] = step;
  j["l_seg"] = l_seg;
  j["l_inter"] = l_inter;
  j["l_intra"] = l_intra;
  j["lambda"] = lambda_t;
  j["lr"] = lr;
  j["total"] = total;
  return j.dump();
}

Trainer::Trainer(const model::ModelConfig& mcfg, const TrainConfig& tcfg)
    : mcfg_(mcfg),
      tcfg_(tcfg),
      data_rng_(Rng(tcfg.seed).fork(1)),
      aug_rng_(Rng(tcfg.seed).fork(2)),
      noise_rng_(Rng(tcfg.seed).fork(3)) {
  tcfg_.validate();
  student_ = std::make_unique<model::PGFANet<float>>(mcfg_, tcfg_.seed);
  teacher_ = std::make_unique<model::PGFANet<float>>(mcfg_, tcfg_.seed);  // same init
  teacher_->set_update_bn_stats(false);
  opt_ = std::make_unique<Adam<float>>(student_->store());
}

void Trainer::set_data(std::vector<data::Sample> labeled, std::vector<data::Sample> unlabeled) {
  if (labeled.empty()) throw std::invalid_argument("trainer: labeled set must not be empty");
  labeled_ = std::move(labeled);
  unlabeled_ = std::move(unlabeled);
  steps_per_epoch_ =
      tcfg_.steps_per_epoch > 0
          ? tcfg_.steps_per_epoch
          : static_cast<int>((labeled_.size() + tcfg_.batch_labeled - 1) /
                             static_cast<size_t>(tcfg_.batch_labeled));
  total_steps_ = static_cast<int64_t>(steps_per_epoch_) * tcfg_.total_epochs;
}

void Trainer::set_validation(std::vector<data::Sample> validation) {
  validation_ = std::move(validation);
}

std::vector<data::Sample*> Trainer::next_from(std::vector<data::Sample>& pool,
                                              std::vector<size_t>& order, size_t& cursor,
                                              int count) {
  std::vector<data::Sample*> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(&pool[order[cursor % order.size()]]);
    ++cursor;
  }
  return out;
}

void Trainer::begin_epoch_if_needed() {
  if (state_.global_step % steps_per_epoch_ != 0) return;
  auto shuffle = [&](std::vector<size_t>& order, size_t n) {
    order.resize(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    for (size_t i = n - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(data_rng_.uniform_int(0, static_cast<int>(i)));
      std::swap(order[i], order[j]);
    }
  };
  shuffle(labeled_order_, labeled_.size());
  labeled_cursor_ = 0;
  const bool consistency = tcfg_.enable_inter || tcfg_.enable_intra;
  if (consistency && !unlabeled_.empty()) {
    shuffle(unlabeled_order_, unlabeled_.size());
    unlabeled_cursor_ = 0;
  }
}

Trainer::Batch Trainer::make_batch(const std::vector<data::Sample*>& samples, bool labeled,
                                   Rng& aug_rng) {
  const int B = static_cast<int>(samples.size());
  const int H = samples[0]->image.dim(1), W = samples[0]->image.dim(2);
  Batch batch;
  batch.images = Tensor<float>({B, 3, H, W});
  if (labeled) batch.class_labels = Tensor<int32_t>({B, H, W});
  for (int b = 0; b < B; ++b) {
    data::Sample s = *samples[b];
    if (tcfg_.augment) s = data::augment(s, aug_rng, tcfg_.aug, tcfg_.class_map_mode);
    const Tensor<float> norm = data::normalize(s.image, data::kImagenetMean, data::kImagenetStd);
    std::copy(norm.data.begin(), norm.data.end(),
              batch.images.data.begin() + static_cast<int64_t>(b) * 3 * H * W);
    if (labeled) {
      if (!s.is_labeled) throw std::invalid_argument("trainer: unlabeled sample in labeled batch");
      std::copy(s.class_map.data.begin(), s.class_map.data.end(),
                batch.class_labels.data.begin() + static_cast<int64_t>(b) * H * W);
      batch.instance_maps.push_back(s.instance_map);
    }
  }
  return batch;
}

StepReport Trainer::train_step() {
  if (labeled_.empty()) throw std::logic_error("trainer: no data; call set_data first");
  begin_epoch_if_needed();
  const int epoch = static_cast<int>(state_.global_step / steps_per_epoch_) + 1;
  const double lambda_t =
      rampup_weight(static_cast<double>(epoch), static_cast<double>(tcfg_.total_epochs),
                    tcfg_.rampup_k);
  const double lr = poly_lr(state_.global_step, total_steps_, tcfg_.base_lr, tcfg_.lr_power);

  student_->set_training(true);
  teacher_->set_training(true);

  // (1) supervised pass on labeled data
  const auto labeled_ptrs =
      next_from(labeled_, labeled_order_, labeled_cursor_, tcfg_.batch_labeled);
  Batch lb = make_batch(labeled_ptrs, /*labeled=*/true, aug_rng_);
  const model::ModelOutput<float> out_l = student_->forward(lb.images);

  // CE + Dice supervise both stage predictions (the refined stage's prediction
  // is the fused final map); the variance term applies to the final stage only.
  ag::Var<float> l_sup;
  {
    ag::Var<float> ce1 = losses::cross_entropy(out_l.stage1_logits, lb.class_labels);
    ag::Var<float> d1 = losses::dice_loss(out_l.stage1_logits, lb.class_labels);
    l_sup = ag::add(ce1, ag::scale(d1, tcfg_.weights.lambda_dice));
    if (out_l.final_logits != out_l.stage1_logits) {
      ag::Var<float> ce2 = losses::cross_entropy(out_l.final_logits, lb.class_labels);
      ag::Var<float> d2 = losses::dice_loss(out_l.final_logits, lb.class_labels);
      l_sup = ag::add(l_sup, ag::add(ce2, ag::scale(d2, tcfg_.weights.lambda_dice)));
    }
    if (tcfg_.weights.lambda_vcc > 0) {
      losses::InstanceBatch<float> ib{ag::softmax_channels(out_l.final_logits), lb.instance_maps,
                                      lb.class_labels, {}};
      l_sup = ag::add(l_sup, ag::scale(losses::vcc_loss(ib), tcfg_.weights.lambda_vcc));
    }
  }

  // (2)-(4) consistency pass on labeled + unlabeled images
  const bool intra_possible = mcfg_.num_stages >= 2;
  const bool want_inter = tcfg_.enable_inter;
  const bool want_intra = tcfg_.enable_intra && intra_possible;
  ag::Var<float> l_inter, l_intra;
  if (want_inter || want_intra) {
    std::vector<data::Sample*> union_ptrs = labeled_ptrs;
    if (!unlabeled_.empty() && tcfg_.batch_unlabeled > 0) {
      const auto unl =
          next_from(unlabeled_, unlabeled_order_, unlabeled_cursor_, tcfg_.batch_unlabeled);
      union_ptrs.insert(union_ptrs.end(), unl.begin(), unl.end());
    }
    Batch ub = make_batch(union_ptrs, /*labeled=*/false, aug_rng_);
    const model::NoiseSpec noise{tcfg_.noise_std, tcfg_.noise_relative};
    const model::ModelOutput<float> out_s =
        student_->forward(ub.images, tcfg_.noise_std > 0 ? &noise : nullptr, &noise_rng_);

    model::ModelOutput<float> out_t;
    {
      ag::NoGradGuard ng;
      out_t = teacher_->forward(ub.images,
                                tcfg_.noise_to_teacher && tcfg_.noise_std > 0 ? &noise : nullptr,
                                &noise_rng_);
    }

    if (want_intra) l_intra = losses::intra_loss(out_s.stage1_logits, out_s.stage2_logits);
    if (want_inter) {
      ag::Var<float> q_stu = ag::softmax_channels(out_s.stage2_logits);
      const Tensor<float> q_tea =
          uncert::detail::softmax_channels_plain(out_t.stage2_logits->value);
      Tensor<float> u = uncert::entropy_uncertainty(q_tea);
      if (tcfg_.uncertainty_scope == UncertaintyScope::kImage) {
        const int B = u.dim(0);
        const int64_t HW = static_cast<int64_t>(u.dim(2)) * u.dim(3);
        for (int b = 0; b < B; ++b) {
          double s = 0.0;
          for (int64_t i = 0; i < HW; ++i) s += u[b * HW + i];
          const float avg = static_cast<float>(s / static_cast<double>(HW));
          for (int64_t i = 0; i < HW; ++i) u[b * HW + i] = avg;
        }
      }
      const Tensor<float> q_rect = uncert::rectify_teacher(q_tea, q_stu->value, u);
      Tensor<float> w;
      if (tcfg_.enable_shape) {
        w = uncert::shape_attention(out_s.stage2_logits->value, out_t.stage2_logits->value);
      } else {
        w = Tensor<float>({u.dim(0), 1, u.dim(2), u.dim(3)}, 1.0f);
      }
      l_inter = losses::inter_loss(q_stu, ag::constant(q_rect), w);
    }
  }

  // (5) combined objective
  ag::Var<float> total_var = l_sup;
  {
    ag::Var<float> cons;
    if (l_inter) cons = l_inter;
    if (l_intra) {
      ag::Var<float> it = ag::scale(l_intra, tcfg_.weights.lambda_intra);
      cons = cons ? ag::add(cons, it) : it;
    }
    if (cons) total_var = ag::add(total_var, ag::scale(cons, static_cast<float>(lambda_t)));
  }
  if (!std::isfinite(static_cast<double>(total_var->value[0])))
    throw std::runtime_error("trainer: non-finite loss at step " +
                             std::to_string(state_.global_step) +
                             " (l_seg=" + std::to_string(l_sup->value[0]) + ")");

  // (6) optimize student, EMA the teacher
  student_->store().zero_grad();
  ag::backward(total_var);
  opt_->step(student_->store(), static_cast<float>(lr));
  ema_update(teacher_->store(), student_->store(), static_cast<float>(tcfg_.ema_decay));

  // (7) counters and report
  ++state_.global_step;
  state_.epoch = static_cast<int>(state_.global_step / steps_per_epoch_);

  StepReport rep;
  rep.epoch = epoch;
  rep.step = state_.global_step;
  rep.l_seg = static_cast<double>(l_sup->value[0]);
  rep.l_inter = l_inter ? static_cast<double>(l_inter->value[0]) : 0.0;
  rep.l_intra = l_intra ? static_cast<double>(l_intra->value[0]) : 0.0;
  rep.lambda_t = lambda_t;
  rep.lr = lr;
  rep.total = rep.l_seg +
              rep.lambda_t * (rep.l_inter +
                              static_cast<double>(tcfg_.weights.lambda_intra) * rep.l_intra);
  return rep;
}

Tensor<float> Trainer::predict_probs(const data::Sample& sample, bool use_teacher) {
  model::PGFANet<float>& net = use_teacher ? *teacher_ : *student_;
  const bool was_training = net.training();
  net.set_training(false);
  ag::NoGradGuard ng;
  const int H = sample.image.dim(1), W = sample.image.dim(2);
  Tensor<float> img({1, 3, H, W});
  const Tensor<float> norm =
      data::normalize(sample.image, data::kImagenetMean, data::kImagenetStd);
  std::copy(norm.data.begin(), norm.data.end(), img.data.begin());
  const model::ModelOutput<float> out = net.forward(img);
  net.set_training(was_training);
  const Tensor<float> probs4 = uncert::detail::softmax_channels_plain(out.final_logits->value);
  Tensor<float> probs({probs4.dim(1), H, W});
  std::copy(probs4.data.begin(), probs4.data.end(), probs.data.begin());
  return probs;
}

metrics::MetricsReport Trainer::evaluate_samples(const std::vector<data::Sample>& samples,
                                                 bool use_teacher) {
  std::vector<LabelMap> preds, gts;
  const metrics::PostprocessMode pmode = tcfg_.class_map_mode == data::ClassMapMode::kBinary
                                             ? metrics::PostprocessMode::kBinaryCC
                                             : metrics::PostprocessMode::kBoundaryAware;
  for (const auto& s : samples) {
    if (!s.is_labeled) throw std::invalid_argument("evaluate: sample without ground truth");
    preds.push_back(metrics::instances_from_semantic(predict_probs(s, use_teacher), pmode));
    gts.push_back(s.instance_map);
  }
  return metrics::evaluate(preds, gts, tcfg_.eval_mode);
}

double Trainer::validation_score(const metrics::MetricsReport& rep) const {
  return tcfg_.eval_mode == metrics::EvalMode::kNuclei ? rep.mean.at("dice")
                                                       : rep.mean.at("dice_obj");
}

std::string Trainer::config_hash() const {
  nlohmann::json j;
  j["num_classes"] = mcfg_.num_classes;
  j["base_width"] = mcfg_.base_width;
  j["stage_widths"] = mcfg_.stage_widths;
  j["num_stages"] = mcfg_.num_stages;
  j["mgfe"] = mcfg_.enable_mgfe;
  j["multiscale"] = mcfg_.enable_multiscale;
  j["multistage"] = mcfg_.enable_multistage;
  j["epochs"] = tcfg_.total_epochs;
  j["base_lr"] = tcfg_.base_lr;
  j["ema"] = tcfg_.ema_decay;
  j["k"] = tcfg_.rampup_k;
  j["inter"] = tcfg_.enable_inter;
  j["intra"] = tcfg_.enable_intra;
  j["shape"] = tcfg_.enable_shape;
  j["seed"] = tcfg_.seed;
  std::ostringstream os;
  os << std::hex << std::hash<std::string>{}(j.dump());
  return os.str();
}

void Trainer::save_checkpoint(const std::string& path, double score) const {
  std::vector<NamedArray> arrays;
  auto dump = [&](const nn::ParamStore<float>& st, const std::string& prefix) {
    for (const auto& [name, p] : st.params) arrays.push_back({prefix + name, p->value});
    for (const auto& [name, b] : st.buffers) arrays.push_back({prefix + name, *b});
  };
  dump(student_->store(), "student.");
  dump(teacher_->store(), "teacher.");
  save_arrays(path, arrays);

  nlohmann::json meta;
  meta["epoch"] = state_.epoch;
  meta["global_step"] = state_.global_step;
  meta["config_hash"] = config_hash();
  meta["metric_snapshot"] = score;
  meta["model"] = nlohmann::json::parse(model_config_to_json(mcfg_));
  meta["eval_mode"] = tcfg_.eval_mode == metrics::EvalMode::kGland ? "gland" : "nuclei";
  meta["class_map"] = tcfg_.class_map_mode == data::ClassMapMode::kBoundaryAware
                          ? "boundary_aware"
                          : "binary";
  std::ofstream os(path + ".json");
  if (!os) throw std::runtime_error("checkpoint: cannot write sidecar for " + path);
  os << meta.dump(2) << '\n';
}

void Trainer::load_checkpoint(const std::string& path) {
  const auto arrays = load_array_map(path);
  auto fill = [&](nn::ParamStore<float>& st, const std::string& prefix) {
    for (auto& [name, p] : st.params) {
      const auto it = arrays.find(prefix + name);
      if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + prefix + name);
      check_same_shape(p->value, it->second, "load_checkpoint");
      p->value = it->second;
    }
    for (auto& [name, b] : st.buffers) {
      const auto it = arrays.find(prefix + name);
      if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + prefix + name);
      check_same_shape(*b, it->second, "load_checkpoint");
      *b = it->second;
    }
  };
  fill(student_->store(), "student.");
  fill(teacher_->store(), "teacher.");
}

Trainer::Result Trainer::train(const std::string& out_dir) {
  if (labeled_.empty()) throw std::logic_error("trainer: no data; call set_data first");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "checkpoints", ec);
  if (ec) throw std::runtime_error("trainer: cannot create " + out_dir + ": " + ec.message());

  Result res;
  res.log_path = (fs::path(out_dir) / "train_log.ndjson").string();
  res.final_checkpoint = (fs::path(out_dir) / "checkpoints" / "final.ckpt").string();
  res.best_checkpoint = (fs::path(out_dir) / "checkpoints" / "best.ckpt").string();
  std::ofstream log(res.log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("trainer: cannot open log " + res.log_path);

  const int val_every = tcfg_.val_interval > 0 ? tcfg_.val_interval
                                               : std::max(1, tcfg_.total_epochs / 10);
  res.best_score = -1.0;
  for (int e = 1; e <= tcfg_.total_epochs; ++e) {
    for (int s = 0; s < steps_per_epoch_; ++s) log << train_step().to_json() << '\n';
    if (!validation_.empty() && (e % val_every == 0 || e == tcfg_.total_epochs)) {
      const metrics::MetricsReport rep = evaluate_samples(validation_);
      const double score = validation_score(rep);
      nlohmann::json j;
      j["type"] = "val";
      j["epoch"] = e;
      j["lambda"] = rampup_weight(e, tcfg_.total_epochs, tcfg_.rampup_k);
      for (const auto& [k, v] : rep.mean) j[k] = v;
      log << j.dump() << '\n';
      if (score > res.best_score) {
        res.best_score = score;
        res.best_epoch = e;
        save_checkpoint(res.best_checkpoint, score);
      }
    }
    log.flush();
  }
  save_checkpoint(res.final_checkpoint, res.best_score);
  if (res.best_score < 0) {  // no validation set: final doubles as best
    save_checkpoint(res.best_checkpoint, 0.0);
    res.best_score = 0.0;
  }
  return res;
}

}  // namespace pgfa::train
