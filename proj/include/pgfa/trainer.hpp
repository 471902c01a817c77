#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pgfa/data.hpp"
#include "pgfa/losses.hpp"
#include "pgfa/metrics.hpp"
#include "pgfa/model.hpp"
#include "pgfa/optim.hpp"
#include "pgfa/schedules.hpp"

// Mean-teacher training loop.
//
// Deterministic RNG protocol (fixed so runs with equal config + seed produce
// identical StepReport streams, and so disabled features consume no draws):
//   - model init: Rng(seed), both student and teacher (identical copies)
//   - data_rng = Rng(seed).fork(1): labeled shuffle at each epoch boundary,
//     then the unlabeled shuffle (only when the consistency phase is active)
//   - aug_rng = Rng(seed).fork(2): one draw per sample, labeled batch first,
//     then the unlabeled batch; nothing when augmentation is off
//   - noise_rng = Rng(seed).fork(3): per-stage feature noise for the student
//     consistency forward, then for the teacher when noise_to_teacher is set
namespace pgfa::train {

enum class UncertaintyScope { kPixel, kImage };

struct TrainConfig {
  int total_epochs = 300;
  int steps_per_epoch = 0;  // 0 = ceil(labeled / batch_labeled)
  double base_lr = 2.5e-4;
  double lr_power = 0.9;
  double ema_decay = 0.99;
  double rampup_k = 0.1;  // 0.1 nuclei mode, 5.0 gland mode
  losses::LossWeights<float> weights;
  int batch_labeled = 4;
  int batch_unlabeled = 4;  // 0 = fully-supervised mode
  double noise_std = 0.1;
  bool noise_relative = true;
  bool noise_to_teacher = false;
  bool enable_inter = true;
  bool enable_intra = true;
  bool enable_shape = true;
  bool augment = true;
  data::AugmentConfig aug;
  data::ClassMapMode class_map_mode = data::ClassMapMode::kBinary;
  UncertaintyScope uncertainty_scope = UncertaintyScope::kPixel;
  metrics::EvalMode eval_mode = metrics::EvalMode::kNuclei;
  int val_interval = 0;  // epochs; 0 = max(1, total_epochs / 10)
  uint64_t seed = 1;

  void validate() const;
};

struct StepReport {
  int epoch = 0;  // 1-based
  int64_t step = 0;
  double l_seg = 0.0;
  double l_inter = 0.0;
  double l_intra = 0.0;
  double lambda_t = 0.0;
  double lr = 0.0;
  double total = 0.0;  // l_seg + lambda_t * (l_inter + lambda_intra * l_intra)

  std::string to_json() const;
  bool operator==(const StepReport&) const = default;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  int64_t global_step = 0;
};

// Model-config round trip for checkpoint sidecars (JSON text in/out so the
// header stays independent of the JSON library).
std::string model_config_to_json(const model::ModelConfig& cfg);
void model_config_from_json_text(const std::string& text, model::ModelConfig& cfg);

class Trainer {
 public:
  Trainer(const model::ModelConfig& mcfg, const TrainConfig& tcfg);

  // Samples must already be at the training resolution.
  void set_data(std::vector<data::Sample> labeled, std::vector<data::Sample> unlabeled);
  void set_validation(std::vector<data::Sample> validation);

  StepReport train_step();

  struct Result {
    std::string final_checkpoint, best_checkpoint, log_path;
    double best_score = 0.0;  // validation Dice (nuclei) or object Dice (gland)
    int best_epoch = 0;
  };
  Result train(const std::string& out_dir);

  metrics::MetricsReport evaluate_samples(const std::vector<data::Sample>& samples,
                                          bool use_teacher = false);
  // Inference softmax probabilities of the final prediction for one image.
  Tensor<float> predict_probs(const data::Sample& sample, bool use_teacher = false);

  model::PGFANet<float>& student() { return *student_; }
  model::PGFANet<float>& teacher() { return *teacher_; }
  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return tcfg_; }
  const model::ModelConfig& model_config() const { return mcfg_; }

  void save_checkpoint(const std::string& path, double score) const;
  void load_checkpoint(const std::string& path);
  std::string config_hash() const;

 private:
  struct Batch {
    Tensor<float> images;             // normalized (B, 3, H, W)
    Tensor<int32_t> class_labels;     // (B, H, W)
    std::vector<LabelMap> instance_maps;
  };
  Batch make_batch(const std::vector<data::Sample*>& samples, bool labeled, Rng& aug_rng);
  std::vector<data::Sample*> next_from(std::vector<data::Sample>& pool,
                                       std::vector<size_t>& order, size_t& cursor, int count);
  void begin_epoch_if_needed();
  double validation_score(const metrics::MetricsReport& rep) const;

  model::ModelConfig mcfg_;
  TrainConfig tcfg_;
  std::unique_ptr<model::PGFANet<float>> student_, teacher_;
  std::unique_ptr<Adam<float>> opt_;
  TrainState state_;
  Rng data_rng_, aug_rng_, noise_rng_;
  std::vector<data::Sample> labeled_, unlabeled_, validation_;
  std::vector<size_t> labeled_order_, unlabeled_order_;
  size_t labeled_cursor_ = 0, unlabeled_cursor_ = 0;
  int steps_per_epoch_ = 0;
  int64_t total_steps_ = 0;
};

}  // namespace pgfa::train
