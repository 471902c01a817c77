#pragma once

#include <cstdint>

// Data-parallel inner loops used by the tensor ops. Every routine has a plain
// scalar reference implementation and an AVX2+FMA variant; the active table is
// picked once at runtime (cpuid, overridable via set_backend or the PGFA_SIMD
// environment variable: "scalar", "avx2", or "auto"). The two variants are
// equivalence-tested against each other in tests/test_kernels.cpp.
namespace pgfa::kern {

enum class Backend { kAuto, kScalar, kAvx2 };

bool cpu_has_avx2();
void set_backend(Backend b);
Backend resolved_backend();
const char* backend_name();

// GEMM, row-major contiguous, always accumulating: C += op(A) * op(B).
//   nn: A (M x K), B (K x N)
//   nt: A (M x K), B (N x K)   -> C[i,j] += dot(A[i,:], B[j,:])
//   tn: A (K x M), B (K x N)   -> C[i,j] += sum_k A[k,i] * B[k,j]
template <typename T>
struct Gemm {
  void (*nn)(int M, int N, int K, const T* A, const T* B, T* C);
  void (*nt)(int M, int N, int K, const T* A, const T* B, T* C);
  void (*tn)(int M, int N, int K, const T* A, const T* B, T* C);
};

template <typename T>
struct Elementwise {
  void (*axpy)(int64_t n, T a, const T* x, T* y);                  // y += a*x
  void (*axpby)(int64_t n, T a, const T* x, T b, T* y);            // y = a*x + b*y
  void (*vadd)(int64_t n, const T* x, const T* y, T* z);           // z = x + y
  void (*vmul)(int64_t n, const T* x, const T* y, T* z);           // z = x * y
  void (*vscale)(int64_t n, T a, T* x);                            // x *= a
  double (*reduce_sum)(int64_t n, const T* x);
  double (*reduce_sumsq)(int64_t n, const T* x);
  // Fused Adam update; bc1/bc2 are the bias-correction denominators.
  void (*adam_step)(int64_t n, T* p, const T* g, T* m, T* v, T lr, T beta1, T beta2,
                    T eps, T bc1, T bc2);
  void (*ema)(int64_t n, T alpha, T* shadow, const T* src);        // shadow = a*shadow + (1-a)*src
};

template <typename T>
const Gemm<T>& gemm();
template <typename T>
const Elementwise<T>& ew();

namespace detail {
extern Gemm<float> gemm_f32_scalar, gemm_f32_avx2;
extern Gemm<double> gemm_f64_scalar, gemm_f64_avx2;
extern Elementwise<float> ew_f32_scalar, ew_f32_avx2;
extern Elementwise<double> ew_f64_scalar, ew_f64_avx2;
}  // namespace detail

}  // namespace pgfa::kern
