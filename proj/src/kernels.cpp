#include "pgfa/kernels.hpp"

#include <cstdlib>
#include <cstring>

#if defined(__x86_64__) || defined(_M_X64)
#include <cpuid.h>
#endif

namespace pgfa::kern {
namespace {

Backend g_requested = Backend::kAuto;

Backend env_backend() {
  const char* env = std::getenv("PGFA_SIMD");
  if (!env) return Backend::kAuto;
  if (std::strcmp(env, "scalar") == 0) return Backend::kScalar;
  if (std::strcmp(env, "avx2") == 0) return Backend::kAvx2;
  return Backend::kAuto;
}

Backend resolve() {
  Backend b = g_requested;
  if (b == Backend::kAuto) b = env_backend();
  if (b == Backend::kAuto) b = cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
  if (b == Backend::kAvx2 && !cpu_has_avx2()) b = Backend::kScalar;
  return b;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  static const bool has = [] {
    unsigned eax, ebx, ecx, edx;
    if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
    const bool avx2 = (ebx & (1u << 5)) != 0;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
    const bool fma = (ecx & (1u << 12)) != 0;
    return avx2 && fma;
  }();
  return has;
#else
  return false;
#endif
}

void set_backend(Backend b) { g_requested = b; }

Backend resolved_backend() { return resolve(); }

const char* backend_name() {
  return resolve() == Backend::kAvx2 ? "avx2" : "scalar";
}

template <>
const Gemm<float>& gemm<float>() {
  return resolve() == Backend::kAvx2 ? detail::gemm_f32_avx2 : detail::gemm_f32_scalar;
}
template <>
const Gemm<double>& gemm<double>() {
  return resolve() == Backend::kAvx2 ? detail::gemm_f64_avx2 : detail::gemm_f64_scalar;
}
template <>
const Elementwise<float>& ew<float>() {
  return resolve() == Backend::kAvx2 ? detail::ew_f32_avx2 : detail::ew_f32_scalar;
}
template <>
const Elementwise<double>& ew<double>() {
  return resolve() == Backend::kAvx2 ? detail::ew_f64_avx2 : detail::ew_f64_scalar;
}

}  // namespace pgfa::kern
