#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pgfa/kernels.hpp"
#include "pgfa/nn.hpp"

namespace pgfa::train {

// Adam with bias correction; moment buffers are keyed by registry position,
// so the store layout must not change between steps.
template <typename T>
class Adam {
 public:
  explicit Adam(const nn::ParamStore<T>& ps, T beta1 = T(0.9), T beta2 = T(0.999),
                T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, p] : ps.params) {
      slots_.push_back({Tensor<T>(p->value.shape), Tensor<T>(p->value.shape)});
    }
  }

  void step(nn::ParamStore<T>& ps, T lr) {
    if (ps.params.size() != slots_.size())
      throw std::logic_error("adam: parameter store changed size");
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
    for (size_t i = 0; i < slots_.size(); ++i) {
      auto& p = ps.params[i].second;
      auto& s = slots_[i];
      const int64_t n = p->value.numel();
      if (p->grad.numel() != n) p->ensure_grad();  // params outside the graph see zero grad
      kern::ew<T>().adam_step(n, p->value.ptr(), p->grad.ptr(), s.m.ptr(), s.v.ptr(), lr,
                              beta1_, beta2_, eps_, bc1, bc2);
    }
  }

  int64_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
  T beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// teacher <- alpha * teacher + (1 - alpha) * student, applied to every
// parameter and every buffer (BN statistics shadow along with the weights).
// The student is never written.
template <typename T>
void ema_update(nn::ParamStore<T>& teacher, const nn::ParamStore<T>& student, T alpha) {
  if (teacher.params.size() != student.params.size() ||
      teacher.buffers.size() != student.buffers.size())
    throw std::invalid_argument("ema_update: stores differ in layout");
  for (size_t i = 0; i < teacher.params.size(); ++i) {
    auto& t = teacher.params[i].second->value;
    const auto& s = student.params[i].second->value;
    check_same_shape(t, s, "ema_update");
    kern::ew<T>().ema(t.numel(), alpha, t.ptr(), s.ptr());
  }
  for (size_t i = 0; i < teacher.buffers.size(); ++i) {
    auto& t = *teacher.buffers[i].second;
    const auto& s = *student.buffers[i].second;
    check_same_shape(t, s, "ema_update(buffer)");
    kern::ew<T>().ema(t.numel(), alpha, t.ptr(), s.ptr());
  }
}

}  // namespace pgfa::train
