// AVX2+FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; it must not be entered unless cpu_has_avx2() reported
// support (the dispatcher in kernels.cpp guarantees that).
#include <cmath>
#include <immintrin.h>

#include "pgfa/kernels.hpp"

namespace pgfa::kern::detail {
namespace {

// ---------------------------------------------------------------- float ----

inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

void gemm_nn_v(int M, int N, int K, const float* A, const float* B, float* C) {
  const int N8 = N & ~7;
  for (int i = 0; i < M; ++i) {
    float* c = C + static_cast<int64_t>(i) * N;
    const float* a = A + static_cast<int64_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const __m256 av = _mm256_set1_ps(a[k]);
      const float* b = B + static_cast<int64_t>(k) * N;
      int j = 0;
      for (; j < N8; j += 8) {
        __m256 cv = _mm256_loadu_ps(c + j);
        cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + j), cv);
        _mm256_storeu_ps(c + j, cv);
      }
      const float as = a[k];
      for (; j < N; ++j) c[j] += as * b[j];
    }
  }
}

void gemm_nt_v(int M, int N, int K, const float* A, const float* B, float* C) {
  const int K8 = K & ~7;
  for (int i = 0; i < M; ++i) {
    const float* a = A + static_cast<int64_t>(i) * K;
    float* c = C + static_cast<int64_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const float* b = B + static_cast<int64_t>(j) * K;
      __m256 acc = _mm256_setzero_ps();
      int k = 0;
      for (; k < K8; k += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc);
      float s = hsum256(acc);
      for (; k < K; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

void gemm_tn_v(int M, int N, int K, const float* A, const float* B, float* C) {
  const int N8 = N & ~7;
  for (int k = 0; k < K; ++k) {
    const float* a = A + static_cast<int64_t>(k) * M;
    const float* b = B + static_cast<int64_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const __m256 av = _mm256_set1_ps(a[i]);
      float* c = C + static_cast<int64_t>(i) * N;
      int j = 0;
      for (; j < N8; j += 8) {
        __m256 cv = _mm256_loadu_ps(c + j);
        cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + j), cv);
        _mm256_storeu_ps(c + j, cv);
      }
      const float as = a[i];
      for (; j < N; ++j) c[j] += as * b[j];
    }
  }
}

void axpy_v(int64_t n, float a, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpby_v(int64_t n, float a, const float* x, float b, float* y) {
  const __m256 av = _mm256_set1_ps(a), bv = _mm256_set1_ps(b);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_mul_ps(bv, _mm256_loadu_ps(y + i));
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv));
  }
  for (; i < n; ++i) y[i] = a * x[i] + b * y[i];
}

void vadd_v(int64_t n, const float* x, const float* y, float* z) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(z + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void vmul_v(int64_t n, const float* x, const float* y, float* z) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(z + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

void vscale_v(int64_t n, float a, float* x) {
  const __m256 av = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

double reduce_sum_v(int64_t n, const float* x) {
  // Accumulates in double lanes so the result matches the scalar reference.
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_cvtps_pd(_mm_loadu_ps(x + i)));
  alignas(32) double tmp[4];
  _mm256_store_pd(tmp, acc);
  double s = ((tmp[0] + tmp[1]) + tmp[2]) + tmp[3];
  for (; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

double reduce_sumsq_v(int64_t n, const float* x) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xv = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
    acc = _mm256_fmadd_pd(xv, xv, acc);
  }
  alignas(32) double tmp[4];
  _mm256_store_pd(tmp, acc);
  double s = ((tmp[0] + tmp[1]) + tmp[2]) + tmp[3];
  for (; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  return s;
}

void adam_step_v(int64_t n, float* p, const float* g, float* m, float* v, float lr,
                 float beta1, float beta2, float eps, float bc1, float bc2) {
  const __m256 b1 = _mm256_set1_ps(beta1), b2 = _mm256_set1_ps(beta2);
  const __m256 ob1 = _mm256_set1_ps(1.0f - beta1), ob2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 lrv = _mm256_set1_ps(lr), epsv = _mm256_set1_ps(eps);
  const __m256 ibc1 = _mm256_set1_ps(1.0f / bc1), ibc2 = _mm256_set1_ps(1.0f / bc2);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_fmadd_ps(ob1, gv, _mm256_mul_ps(b1, _mm256_loadu_ps(m + i)));
    __m256 vv = _mm256_fmadd_ps(ob2, _mm256_mul_ps(gv, gv), _mm256_mul_ps(b2, _mm256_loadu_ps(v + i)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_mul_ps(mv, ibc1);
    const __m256 vhat = _mm256_mul_ps(vv, ibc2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mhat = m[i] * (1.0f / bc1);
    const float vhat = v[i] * (1.0f / bc2);
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void ema_v(int64_t n, float alpha, float* shadow, const float* src) {
  const __m256 av = _mm256_set1_ps(alpha), oav = _mm256_set1_ps(1.0f - alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 sv = _mm256_mul_ps(av, _mm256_loadu_ps(shadow + i));
    _mm256_storeu_ps(shadow + i, _mm256_fmadd_ps(oav, _mm256_loadu_ps(src + i), sv));
  }
  for (; i < n; ++i) shadow[i] = alpha * shadow[i] + (1.0f - alpha) * src[i];
}

// --------------------------------------------------------------- double ----

inline double hsum256d(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void gemm_nn_vd(int M, int N, int K, const double* A, const double* B, double* C) {
  const int N4 = N & ~3;
  for (int i = 0; i < M; ++i) {
    double* c = C + static_cast<int64_t>(i) * N;
    const double* a = A + static_cast<int64_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const __m256d av = _mm256_set1_pd(a[k]);
      const double* b = B + static_cast<int64_t>(k) * N;
      int j = 0;
      for (; j < N4; j += 4) {
        __m256d cv = _mm256_loadu_pd(c + j);
        cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j), cv);
        _mm256_storeu_pd(c + j, cv);
      }
      const double as = a[k];
      for (; j < N; ++j) c[j] += as * b[j];
    }
  }
}

void gemm_nt_vd(int M, int N, int K, const double* A, const double* B, double* C) {
  const int K4 = K & ~3;
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<int64_t>(i) * K;
    double* c = C + static_cast<int64_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const double* b = B + static_cast<int64_t>(j) * K;
      __m256d acc = _mm256_setzero_pd();
      int k = 0;
      for (; k < K4; k += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc);
      double s = hsum256d(acc);
      for (; k < K; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

void gemm_tn_vd(int M, int N, int K, const double* A, const double* B, double* C) {
  const int N4 = N & ~3;
  for (int k = 0; k < K; ++k) {
    const double* a = A + static_cast<int64_t>(k) * M;
    const double* b = B + static_cast<int64_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const __m256d av = _mm256_set1_pd(a[i]);
      double* c = C + static_cast<int64_t>(i) * N;
      int j = 0;
      for (; j < N4; j += 4) {
        __m256d cv = _mm256_loadu_pd(c + j);
        cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j), cv);
        _mm256_storeu_pd(c + j, cv);
      }
      const double as = a[i];
      for (; j < N; ++j) c[j] += as * b[j];
    }
  }
}

void axpy_vd(int64_t n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpby_vd(int64_t n, double a, const double* x, double b, double* y) {
  const __m256d av = _mm256_set1_pd(a), bv = _mm256_set1_pd(b);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_mul_pd(bv, _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv));
  }
  for (; i < n; ++i) y[i] = a * x[i] + b * y[i];
}

void vadd_vd(int64_t n, const double* x, const double* y, double* z) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void vmul_vd(int64_t n, const double* x, const double* y, double* z) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

void vscale_vd(int64_t n, double a, double* x) {
  const __m256d av = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

double reduce_sum_vd(int64_t n, const double* x) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double reduce_sumsq_vd(int64_t n, const double* x) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

void adam_step_vd(int64_t n, double* p, const double* g, double* m, double* v, double lr,
                  double beta1, double beta2, double eps, double bc1, double bc2) {
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

void ema_vd(int64_t n, double alpha, double* shadow, const double* src) {
  const __m256d av = _mm256_set1_pd(alpha), oav = _mm256_set1_pd(1.0 - alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d sv = _mm256_mul_pd(av, _mm256_loadu_pd(shadow + i));
    _mm256_storeu_pd(shadow + i, _mm256_fmadd_pd(oav, _mm256_loadu_pd(src + i), sv));
  }
  for (; i < n; ++i) shadow[i] = alpha * shadow[i] + (1.0 - alpha) * src[i];
}

}  // namespace

constinit Gemm<float> gemm_f32_avx2 = {&gemm_nn_v, &gemm_nt_v, &gemm_tn_v};
constinit Gemm<double> gemm_f64_avx2 = {&gemm_nn_vd, &gemm_nt_vd, &gemm_tn_vd};
constinit Elementwise<float> ew_f32_avx2 = {&axpy_v,  &axpby_v,      &vadd_v,         &vmul_v, &vscale_v,
                                  &reduce_sum_v, &reduce_sumsq_v, &adam_step_v, &ema_v};
constinit Elementwise<double> ew_f64_avx2 = {&axpy_vd, &axpby_vd,      &vadd_vd,         &vmul_vd, &vscale_vd,
                                   &reduce_sum_vd, &reduce_sumsq_vd, &adam_step_vd, &ema_vd};

}  // namespace pgfa::kern::detail
