#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfa/ops.hpp"

// Training losses. All return scalar (1-element) variables and are
// differentiable with respect to their tensor inputs; expected targets
// (labels, teacher predictions, weight maps) enter as constants.
namespace pgfa::losses {

using ag::Var;

template <typename T>
struct LossWeights {
  T lambda_dice = T(1);
  T lambda_vcc = T(1);
  T lambda_intra = T(1);

  void validate() const {
    if (!(lambda_dice >= T(0)) || !(lambda_vcc >= T(0)) || !(lambda_intra >= T(0)) ||
        !std::isfinite(static_cast<double>(lambda_dice)) ||
        !std::isfinite(static_cast<double>(lambda_vcc)) ||
        !std::isfinite(static_cast<double>(lambda_intra)))
      throw std::invalid_argument("loss weights must be finite and non-negative");
  }
};

// One labeled minibatch seen by the instance-variance loss: softmax
// probabilities of the final prediction plus per-image instance maps and the
// per-pixel class labels. instance_ids may be left empty to derive the id set
// from each map.
template <typename T>
struct InstanceBatch {
  Var<T> probs;                                  // (B, C, H, W)
  std::vector<LabelMap> instance_maps;           // each (H, W)
  Tensor<int32_t> class_labels;                  // (B, H, W)
  std::vector<std::vector<int32_t>> instance_ids;  // optional, per image
};

namespace detail {

template <typename T>
void check_logits_labels(const Tensor<T>& logits, const Tensor<int32_t>& labels,
                         const char* what) {
  if (logits.ndim() != 4) throw std::invalid_argument(std::string(what) + ": logits must be 4-D");
  if (labels.ndim() != 3 || labels.dim(0) != logits.dim(0) || labels.dim(1) != logits.dim(2) ||
      labels.dim(2) != logits.dim(3))
    throw std::invalid_argument(std::string(what) + ": label shape " + labels.shape_str() +
                                " does not match logits " + logits.shape_str());
  const int C = logits.dim(1);
  for (int64_t i = 0; i < labels.numel(); ++i)
    if (labels[i] < 0 || labels[i] >= C)
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(labels[i]) +
                                  " out of range [0, " + std::to_string(C) + ")");
}

template <typename T>
Tensor<T> softmax_plain(const Tensor<T>& logits) {
  const int B = logits.dim(0), C = logits.dim(1);
  const int64_t HW = static_cast<int64_t>(logits.dim(2)) * logits.dim(3);
  Tensor<T> p(logits.shape);
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T mx = logits[(static_cast<int64_t>(b) * C) * HW + i];
      for (int c = 1; c < C; ++c)
        mx = std::max(mx, logits[(static_cast<int64_t>(b) * C + c) * HW + i]);
      T denom = T(0);
      for (int c = 0; c < C; ++c) {
        const T e = std::exp(logits[(static_cast<int64_t>(b) * C + c) * HW + i] - mx);
        p[(static_cast<int64_t>(b) * C + c) * HW + i] = e;
        denom += e;
      }
      for (int c = 0; c < C; ++c) p[(static_cast<int64_t>(b) * C + c) * HW + i] /= denom;
    }
  return p;
}

}  // namespace detail

// Mean over pixels of -log softmax(logits) at the true class.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const Tensor<int32_t>& labels) {
  detail::check_logits_labels(logits->value, labels, "cross_entropy");
  const int B = logits->value.dim(0), C = logits->value.dim(1);
  const int64_t HW = static_cast<int64_t>(logits->value.dim(2)) * logits->value.dim(3);
  const int64_t NP = static_cast<int64_t>(B) * HW;

  auto probs = std::make_shared<Tensor<T>>(detail::softmax_plain(logits->value));
  auto lab = std::make_shared<Tensor<int32_t>>(labels);
  double acc = 0.0;
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      const int c = labels[static_cast<int64_t>(b) * HW + i];
      const double p = static_cast<double>((*probs)[(static_cast<int64_t>(b) * C + c) * HW + i]);
      acc -= std::log(p > 1e-300 ? p : 1e-300);
    }
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(NP));
  return ag::make_op<T>(std::move(out), {logits}, [logits, probs, lab, B, C, HW, NP](ag::Node<T>& n) {
    if (!logits->requires_grad) return;
    const T g = n.grad[0] / static_cast<T>(NP);
    T* gx = logits->ensure_grad().ptr();
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        const int y = (*lab)[static_cast<int64_t>(b) * HW + i];
        for (int c = 0; c < C; ++c) {
          const int64_t k = (static_cast<int64_t>(b) * C + c) * HW + i;
          gx[k] += g * ((*probs)[k] - (c == y ? T(1) : T(0)));
        }
      }
  });
}

// 1 - soft Dice of softmax probabilities against one-hot labels, averaged over
// the non-background classes. Per-class sums run over the whole batch.
template <typename T>
Var<T> dice_loss(const Var<T>& logits, const Tensor<int32_t>& labels, T eps = T(1e-5)) {
  detail::check_logits_labels(logits->value, labels, "dice_loss");
  const int B = logits->value.dim(0), C = logits->value.dim(1);
  const int64_t HW = static_cast<int64_t>(logits->value.dim(2)) * logits->value.dim(3);
  if (C < 2) throw std::invalid_argument("dice_loss: needs at least 2 classes");

  auto probs = std::make_shared<Tensor<T>>(detail::softmax_plain(logits->value));
  auto lab = std::make_shared<Tensor<int32_t>>(labels);
  const int nfg = C - 1;
  std::vector<double> num(static_cast<size_t>(C), 0.0), den(static_cast<size_t>(C), 0.0);
  for (int c = 1; c < C; ++c) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        const double p = static_cast<double>((*probs)[(static_cast<int64_t>(b) * C + c) * HW + i]);
        const bool g = labels[static_cast<int64_t>(b) * HW + i] == c;
        psum += p;
        if (g) {
          gsum += 1.0;
          inter += p;
        }
      }
    num[static_cast<size_t>(c)] = 2.0 * inter + static_cast<double>(eps);
    den[static_cast<size_t>(c)] = psum + gsum + static_cast<double>(eps);
  }
  double dice_sum = 0.0;
  for (int c = 1; c < C; ++c) dice_sum += num[static_cast<size_t>(c)] / den[static_cast<size_t>(c)];
  Tensor<T> out({1});
  out[0] = static_cast<T>(1.0 - dice_sum / nfg);

  auto nums = std::make_shared<std::vector<double>>(std::move(num));
  auto dens = std::make_shared<std::vector<double>>(std::move(den));
  return ag::make_op<T>(std::move(out), {logits},
                        [logits, probs, lab, nums, dens, B, C, HW, nfg](ag::Node<T>& n) {
    if (!logits->requires_grad) return;
    const double g = static_cast<double>(n.grad[0]);
    // dL/dp then chain through softmax per pixel.
    T* gx = logits->ensure_grad().ptr();
    std::vector<double> dLdp(static_cast<size_t>(C));
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        const int y = (*lab)[static_cast<int64_t>(b) * HW + i];
        for (int c = 0; c < C; ++c) {
          if (c == 0) {
            dLdp[0] = 0.0;
            continue;
          }
          const double nc = (*nums)[static_cast<size_t>(c)], dc = (*dens)[static_cast<size_t>(c)];
          const double gc = (y == c) ? 1.0 : 0.0;
          // d dice_c / dp = (2*g*den - num) / den^2; loss has -1/nfg factor
          dLdp[static_cast<size_t>(c)] = -g / nfg * (2.0 * gc * dc - nc) / (dc * dc);
        }
        double dot = 0.0;
        for (int c = 0; c < C; ++c)
          dot += dLdp[static_cast<size_t>(c)] *
                 static_cast<double>((*probs)[(static_cast<int64_t>(b) * C + c) * HW + i]);
        for (int c = 0; c < C; ++c) {
          const int64_t k = (static_cast<int64_t>(b) * C + c) * HW + i;
          gx[k] += static_cast<T>(static_cast<double>((*probs)[k]) *
                                  (dLdp[static_cast<size_t>(c)] - dot));
        }
      }
  });
}

// Variance-constrained cross loss: mean over instances of the within-instance
// variance of the correct-class probability. Returns 0 when the batch holds no
// instances.
template <typename T>
Var<T> vcc_loss(const InstanceBatch<T>& batch) {
  const auto& probs = batch.probs->value;
  if (probs.ndim() != 4) throw std::invalid_argument("vcc_loss: probs must be 4-D");
  const int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  if (static_cast<int>(batch.instance_maps.size()) != B)
    throw std::invalid_argument("vcc_loss: need one instance map per image");
  if (batch.class_labels.ndim() != 3 || batch.class_labels.dim(0) != B ||
      batch.class_labels.dim(1) != H || batch.class_labels.dim(2) != W)
    throw std::invalid_argument("vcc_loss: class_labels shape mismatch");

  struct Inst {
    int image;
    std::vector<int64_t> pix;  // linear (y*W + x)
    double mean = 0.0;
  };
  std::vector<Inst> insts;
  for (int b = 0; b < B; ++b) {
    const LabelMap& map = batch.instance_maps[static_cast<size_t>(b)];
    if (map.ndim() != 2 || map.dim(0) != H || map.dim(1) != W)
      throw std::invalid_argument("vcc_loss: instance map shape mismatch");
    std::map<int32_t, Inst> per_id;
    for (int64_t i = 0; i < map.numel(); ++i) {
      const int32_t id = map[i];
      if (id < 0) throw std::invalid_argument("vcc_loss: negative instance id");
      if (id == 0) continue;
      auto& in = per_id[id];
      in.image = b;
      in.pix.push_back(i);
    }
    if (!batch.instance_ids.empty()) {
      for (int32_t id : batch.instance_ids[static_cast<size_t>(b)])
        if (per_id.find(id) == per_id.end())
          throw std::invalid_argument("vcc_loss: malformed map, declared instance " +
                                      std::to_string(id) + " has zero pixels");
    }
    for (auto& [id, in] : per_id) insts.push_back(std::move(in));
  }

  const int64_t D = static_cast<int64_t>(insts.size());
  Tensor<T> out({1});
  if (D == 0) {
    out[0] = T(0);
    return ag::make_op<T>(std::move(out), {batch.probs}, [](ag::Node<T>&) {});
  }

  const int64_t HW = static_cast<int64_t>(H) * W;
  auto correct_prob = [&](const Inst& in, int64_t pix) {
    const int c = batch.class_labels[static_cast<int64_t>(in.image) * HW + pix];
    return static_cast<double>(probs[(static_cast<int64_t>(in.image) * C + c) * HW + pix]);
  };
  double total = 0.0;
  for (auto& in : insts) {
    double s = 0.0;
    for (int64_t p : in.pix) s += correct_prob(in, p);
    in.mean = s / static_cast<double>(in.pix.size());
    double var = 0.0;
    for (int64_t p : in.pix) {
      const double d = in.mean - correct_prob(in, p);
      var += d * d;
    }
    total += var / static_cast<double>(in.pix.size());
  }
  out[0] = static_cast<T>(total / static_cast<double>(D));

  auto probs_var = batch.probs;
  auto labels = std::make_shared<Tensor<int32_t>>(batch.class_labels);
  auto insts_sh = std::make_shared<std::vector<Inst>>(std::move(insts));
  return ag::make_op<T>(std::move(out), {batch.probs},
                        [probs_var, labels, insts_sh, C, HW, D](ag::Node<T>& n) {
    if (!probs_var->requires_grad) return;
    const double g = static_cast<double>(n.grad[0]);
    T* gp = probs_var->ensure_grad().ptr();
    for (const auto& in : *insts_sh) {
      const double scale = g * 2.0 / (static_cast<double>(D) * static_cast<double>(in.pix.size()));
      for (int64_t p : in.pix) {
        const int c = (*labels)[static_cast<int64_t>(in.image) * HW + p];
        const int64_t k = (static_cast<int64_t>(in.image) * C + c) * HW + p;
        gp[k] += static_cast<T>(scale * (static_cast<double>(probs_var->value[k]) - in.mean));
      }
    }
  });
}

template <typename T>
struct SegLossBreakdown {
  T ce = T(0);
  T dice = T(0);
  T vcc = T(0);
  T total = T(0);
};

// L_seg = L_ce + lambda_dice * L_Dice + lambda_vcc * L_vcc for one logits map.
template <typename T>
std::pair<Var<T>, SegLossBreakdown<T>> seg_loss(const Var<T>& logits,
                                                const Tensor<int32_t>& labels,
                                                const InstanceBatch<T>& batch,
                                                const LossWeights<T>& w) {
  w.validate();
  Var<T> ce = cross_entropy(logits, labels);
  Var<T> dice = dice_loss(logits, labels);
  Var<T> vcc = vcc_loss(batch);
  Var<T> total = ag::add(ce, ag::add(ag::scale(dice, w.lambda_dice), ag::scale(vcc, w.lambda_vcc)));
  SegLossBreakdown<T> bd{ce->value[0], dice->value[0], vcc->value[0], total->value[0]};
  return {total, bd};
}

// Plain or weighted MSE; used for both consistency terms.
template <typename T>
Var<T> mse_consistency(const Var<T>& a, const Var<T>& b, const Tensor<T>* weight = nullptr) {
  return ag::mse(a, b, weight);
}

// Intra-consistency: MSE between the two stage predictions of one model.
template <typename T>
Var<T> intra_loss(const Var<T>& stage1_logits, const Var<T>& stage2_logits) {
  return ag::mse<T>(stage1_logits, stage2_logits, nullptr);
}

// Shape-weighted inter consistency. The teacher side must already be detached;
// shape_weight is validated against its [1, 2] invariant.
template <typename T>
Var<T> inter_loss(const Var<T>& student, const Var<T>& rectified_teacher,
                  const Tensor<T>& shape_weight) {
  for (int64_t i = 0; i < shape_weight.numel(); ++i)
    if (!(shape_weight[i] >= T(1) && shape_weight[i] <= T(2)))
      throw std::invalid_argument("inter_loss: shape weight outside [1, 2]");
  Var<T> target = rectified_teacher->requires_grad ? ag::detach(rectified_teacher)
                                                   : rectified_teacher;
  return ag::mse<T>(student, target, &shape_weight);
}

}  // namespace pgfa::losses
