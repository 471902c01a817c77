// Fallback for hosts without AVX2 toolchain support: the "avx2" tables alias
// the scalar reference kernels (which are constant-initialized, so this
// cross-TU copy is well defined). cpu_has_avx2() reports false on such hosts,
// so these are never selected by the auto backend anyway.
#include "pgfa/kernels.hpp"

namespace pgfa::kern::detail {

Gemm<float> gemm_f32_avx2 = gemm_f32_scalar;
Gemm<double> gemm_f64_avx2 = gemm_f64_scalar;
Elementwise<float> ew_f32_avx2 = ew_f32_scalar;
Elementwise<double> ew_f64_avx2 = ew_f64_scalar;

}  // namespace pgfa::kern::detail
