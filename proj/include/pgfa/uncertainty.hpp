#pragma once

#include <cmath>
#include <stdexcept>

#include "pgfa/tensor.hpp"

// Teacher-uncertainty estimation and rectification. These are pure tensor
// functions; the trainer feeds their outputs into the consistency losses as
// constants, so no gradients ever flow through rectification or weighting.
namespace pgfa::uncert {

namespace detail {

template <typename T>
void check_distribution(const Tensor<T>& probs, const char* what) {
  if (probs.ndim() != 4) throw std::invalid_argument(std::string(what) + ": expects (B, C, H, W)");
  const int B = probs.dim(0), C = probs.dim(1);
  const int64_t HW = static_cast<int64_t>(probs.dim(2)) * probs.dim(3);
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        const double q = static_cast<double>(probs[(static_cast<int64_t>(b) * C + c) * HW + i]);
        if (q < 0.0)
          throw std::invalid_argument(std::string(what) + ": negative probability");
        sum += q;
      }
      if (std::abs(sum - 1.0) > 1e-4)
        throw std::invalid_argument(std::string(what) + ": probabilities sum to " +
                                    std::to_string(sum));
    }
}

template <typename T>
Tensor<T> softmax_channels_plain(const Tensor<T>& logits) {
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

// Per-pixel normalized entropy of a class distribution: (-sum q log q) / log C,
// in [0, 1]. The log C normalization keeps the value usable as a convex
// mixing coefficient for any class count.
template <typename T>
Tensor<T> entropy_uncertainty(const Tensor<T>& probs) {
  detail::check_distribution(probs, "entropy_uncertainty");
  const int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  const int64_t HW = static_cast<int64_t>(H) * W;
  const double inv_logc = 1.0 / std::log(static_cast<double>(C));
  Tensor<T> u({B, 1, H, W});
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      double h = 0.0;
      for (int c = 0; c < C; ++c) {
        const double q = static_cast<double>(probs[(static_cast<int64_t>(b) * C + c) * HW + i]);
        if (q > 0.0) h -= q * std::log(q);
      }
      double v = h * inv_logc;
      if (v < 0.0) v = 0.0;
      if (v > 1.0) v = 1.0;
      u[static_cast<int64_t>(b) * HW + i] = static_cast<T>(v);
    }
  return u;
}

// q_tea' = (1 - u') q_tea + u' q_stu, with u' (B, 1, H, W) broadcast over
// channels. Output rows remain valid distributions.
template <typename T>
Tensor<T> rectify_teacher(const Tensor<T>& q_tea, const Tensor<T>& q_stu, const Tensor<T>& u) {
  check_same_shape(q_tea, q_stu, "rectify_teacher");
  detail::check_distribution(q_tea, "rectify_teacher(teacher)");
  detail::check_distribution(q_stu, "rectify_teacher(student)");
  const int B = q_tea.dim(0), C = q_tea.dim(1), H = q_tea.dim(2), W = q_tea.dim(3);
  if (u.ndim() != 4 || u.dim(0) != B || u.dim(1) != 1 || u.dim(2) != H || u.dim(3) != W)
    throw std::invalid_argument("rectify_teacher: uncertainty must be (B, 1, H, W)");
  const int64_t HW = static_cast<int64_t>(H) * W;
  for (int64_t i = 0; i < u.numel(); ++i)
    if (!(u[i] >= T(0) && u[i] <= T(1)))
      throw std::invalid_argument("rectify_teacher: uncertainty outside [0, 1]");
  Tensor<T> out(q_tea.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i) {
        const T uv = u[static_cast<int64_t>(b) * HW + i];
        const int64_t k = (static_cast<int64_t>(b) * C + c) * HW + i;
        out[k] = (T(1) - uv) * q_tea[k] + uv * q_stu[k];
      }
  return out;
}

// Per-image min-max normalization to [0, 1]; a constant map maps to all zeros.
template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& map) {
  if (map.ndim() != 4 || map.dim(1) != 1)
    throw std::invalid_argument("minmax_normalize: expects (B, 1, H, W)");
  for (int64_t i = 0; i < map.numel(); ++i)
    if (!std::isfinite(static_cast<double>(map[i])))
      throw std::invalid_argument("minmax_normalize: non-finite input");
  const int B = map.dim(0);
  const int64_t HW = static_cast<int64_t>(map.dim(2)) * map.dim(3);
  Tensor<T> out(map.shape);
  for (int b = 0; b < B; ++b) {
    T lo = map[static_cast<int64_t>(b) * HW];
    T hi = lo;
    for (int64_t i = 0; i < HW; ++i) {
      const T v = map[static_cast<int64_t>(b) * HW + i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const T range = hi - lo;
    for (int64_t i = 0; i < HW; ++i)
      out[static_cast<int64_t>(b) * HW + i] =
          range > T(0) ? (map[static_cast<int64_t>(b) * HW + i] - lo) / range : T(0);
  }
  return out;
}

// Shape-attention weight map, in [1, 2]:
//   u = clamp(||softmax(stu) - softmax(tea)||_2 / sqrt(2), eps, 1)  per pixel
//   U = -u log u
//   weight = 1 + minmax(U)  per image
// The sqrt(2) factor is the largest possible L2 distance between two
// distributions, so u stays in (0, 1] and -u log u is well defined.
template <typename T>
Tensor<T> shape_attention(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits) {
  check_same_shape(student_logits, teacher_logits, "shape_attention");
  if (student_logits.ndim() != 4)
    throw std::invalid_argument("shape_attention: expects (B, C, H, W)");
  const Tensor<T> ps = detail::softmax_channels_plain(student_logits);
  const Tensor<T> pt = detail::softmax_channels_plain(teacher_logits);
  const int B = ps.dim(0), C = ps.dim(1), H = ps.dim(2), W = ps.dim(3);
  const int64_t HW = static_cast<int64_t>(H) * W;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Tensor<T> ushape({B, 1, H, W});
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      double ss = 0.0;
      for (int c = 0; c < C; ++c) {
        const int64_t k = (static_cast<int64_t>(b) * C + c) * HW + i;
        const double d = static_cast<double>(ps[k]) - static_cast<double>(pt[k]);
        ss += d * d;
      }
      double u = std::sqrt(ss) * inv_sqrt2;
      if (u < 1e-7) u = 1e-7;
      if (u > 1.0) u = 1.0;
      ushape[static_cast<int64_t>(b) * HW + i] = static_cast<T>(-u * std::log(u));
    }
  Tensor<T> sigma = minmax_normalize(ushape);
  for (int64_t i = 0; i < sigma.numel(); ++i) sigma[i] += T(1);
  return sigma;
}

}  // namespace pgfa::uncert
