#pragma once

#include <cmath>
#include <stdexcept>

namespace pgfa::train {

// Gaussian ramp-up of the consistency weight: k * exp(-5 (1 - t/T)^2).
// t past T clamps to k (training past schedule).
inline double rampup_weight(double t, double total, double k) {
  if (total <= 0) throw std::invalid_argument("rampup_weight: total must be positive");
  if (t < 0) throw std::invalid_argument("rampup_weight: t must be non-negative");
  if (t >= total) return k;
  const double r = 1.0 - t / total;
  return k * std::exp(-5.0 * r * r);
}

// Polynomial decay: base_lr * (1 - iter/total_iter)^power.
inline double poly_lr(int64_t iter, int64_t total_iter, double base_lr, double power) {
  if (total_iter <= 0) throw std::invalid_argument("poly_lr: total_iter must be positive");
  if (iter < 0 || iter > total_iter) throw std::invalid_argument("poly_lr: iter out of range");
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total_iter);
  return base_lr * std::pow(frac, power);
}

}  // namespace pgfa::train
