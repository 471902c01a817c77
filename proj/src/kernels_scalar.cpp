#include <cmath>

#include "pgfa/kernels.hpp"

// Reference kernels. Kept branch-free and simple; these define the semantics
// the SIMD variants must reproduce.
namespace pgfa::kern::detail {
namespace {

template <typename T>
void gemm_nn_s(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int i = 0; i < M; ++i) {
    T* c = C + static_cast<int64_t>(i) * N;
    const T* a = A + static_cast<int64_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<int64_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void gemm_nt_s(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<int64_t>(i) * K;
    T* c = C + static_cast<int64_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<int64_t>(j) * K;
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

template <typename T>
void gemm_tn_s(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<int64_t>(k) * M;
    const T* b = B + static_cast<int64_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + static_cast<int64_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void axpy_s(int64_t n, T a, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void axpby_s(int64_t n, T a, const T* x, T b, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = a * x[i] + b * y[i];
}

template <typename T>
void vadd_s(int64_t n, const T* x, const T* y, T* z) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

template <typename T>
void vmul_s(int64_t n, const T* x, const T* y, T* z) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

template <typename T>
void vscale_s(int64_t n, T a, T* x) {
  for (int64_t i = 0; i < n; ++i) x[i] *= a;
}

template <typename T>
double reduce_sum_s(int64_t n, const T* x) {
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  return acc;
}

template <typename T>
double reduce_sumsq_s(int64_t n, const T* x) {
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  return acc;
}

template <typename T>
void adam_step_s(int64_t n, T* p, const T* g, T* m, T* v, T lr, T beta1, T beta2, T eps,
                 T bc1, T bc2) {
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
void ema_s(int64_t n, T alpha, T* shadow, const T* src) {
  for (int64_t i = 0; i < n; ++i) shadow[i] = alpha * shadow[i] + (T(1) - alpha) * src[i];
}

template <typename T>
constexpr Gemm<T> make_gemm() {
  return Gemm<T>{&gemm_nn_s<T>, &gemm_nt_s<T>, &gemm_tn_s<T>};
}

template <typename T>
constexpr Elementwise<T> make_ew() {
  return Elementwise<T>{&axpy_s<T>,       &axpby_s<T>,      &vadd_s<T>,
                        &vmul_s<T>,       &vscale_s<T>,     &reduce_sum_s<T>,
                        &reduce_sumsq_s<T>, &adam_step_s<T>, &ema_s<T>};
}

}  // namespace

constinit Gemm<float> gemm_f32_scalar = make_gemm<float>();
constinit Gemm<double> gemm_f64_scalar = make_gemm<double>();
constinit Elementwise<float> ew_f32_scalar = make_ew<float>();
constinit Elementwise<double> ew_f64_scalar = make_ew<double>();

}  // namespace pgfa::kern::detail
