#include <cmath>
#include <vector>

#include "doctest.h"
#include "pgfa/kernels.hpp"
#include "pgfa/rng.hpp"

using namespace pgfa;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, int64_t n) {
  std::vector<T> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(static_cast<double>(a[i])),
                                   std::abs(static_cast<double>(b[i])), 1.0});
    CHECK(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) / denom < tol);
  }
}

struct BackendGuard {
  ~BackendGuard() { kern::set_backend(kern::Backend::kAuto); }
};

// Runs fn under both backends and returns (scalar result, simd result).
template <typename Fn>
auto both_backends(Fn&& fn) {
  BackendGuard guard;
  kern::set_backend(kern::Backend::kScalar);
  auto scalar = fn();
  kern::set_backend(kern::Backend::kAvx2);
  auto simd = fn();
  return std::make_pair(scalar, simd);
}

}  // namespace

TEST_CASE("backend dispatch resolves and can be forced") {
  BackendGuard guard;
  kern::set_backend(kern::Backend::kScalar);
  CHECK(kern::resolved_backend() == kern::Backend::kScalar);
  kern::set_backend(kern::Backend::kAuto);
  if (kern::cpu_has_avx2()) CHECK(kern::resolved_backend() == kern::Backend::kAvx2);
}

TEST_CASE_TEMPLATE("gemm variants agree between scalar and simd kernels", T, float, double) {
  Rng rng(11);
  // Deliberately awkward sizes to exercise the vector remainders.
  const int sizes[][3] = {{1, 1, 1}, {3, 7, 5}, {8, 16, 9}, {13, 33, 17}, {32, 64, 48}};
  const double tol = std::is_same_v<T, float> ? 2e-5 : 1e-12;
  for (const auto& s : sizes) {
    const int M = s[0], N = s[1], K = s[2];
    const auto A = random_vec<T>(rng, static_cast<int64_t>(M) * K);
    const auto B = random_vec<T>(rng, static_cast<int64_t>(K) * N);
    const auto At = random_vec<T>(rng, static_cast<int64_t>(K) * M);
    const auto Bt = random_vec<T>(rng, static_cast<int64_t>(N) * K);
    const auto C0 = random_vec<T>(rng, static_cast<int64_t>(M) * N);

    auto [nn_s, nn_v] = both_backends([&] {
      auto C = C0;
      kern::gemm<T>().nn(M, N, K, A.data(), B.data(), C.data());
      return C;
    });
    expect_close(nn_s, nn_v, tol);

    auto [nt_s, nt_v] = both_backends([&] {
      auto C = C0;
      kern::gemm<T>().nt(M, N, K, A.data(), Bt.data(), C.data());
      return C;
    });
    expect_close(nt_s, nt_v, tol);

    auto [tn_s, tn_v] = both_backends([&] {
      auto C = C0;
      kern::gemm<T>().tn(M, N, K, At.data(), B.data(), C.data());
      return C;
    });
    expect_close(tn_s, tn_v, tol);
  }
}

TEST_CASE("gemm_nn matches a hand-rolled reference") {
  // 2x2: A = [[1,2],[3,4]], B = [[5,6],[7,8]] -> A*B = [[19,22],[43,50]]
  const std::vector<float> A = {1, 2, 3, 4}, B = {5, 6, 7, 8};
  std::vector<float> C = {0, 0, 0, 0};
  kern::gemm<float>().nn(2, 2, 2, A.data(), B.data(), C.data());
  CHECK(C[0] == doctest::Approx(19));
  CHECK(C[1] == doctest::Approx(22));
  CHECK(C[2] == doctest::Approx(43));
  CHECK(C[3] == doctest::Approx(50));
}

TEST_CASE_TEMPLATE("elementwise kernels agree between backends", T, float, double) {
  Rng rng(13);
  for (int64_t n : {1, 7, 8, 31, 256, 1000}) {
    const auto x = random_vec<T>(rng, n);
    const auto y0 = random_vec<T>(rng, n);
    const double tol = std::is_same_v<T, float> ? 2e-6 : 1e-14;

    auto [axpy_s, axpy_v] = both_backends([&] {
      auto y = y0;
      kern::ew<T>().axpy(n, T(0.37), x.data(), y.data());
      return y;
    });
    expect_close(axpy_s, axpy_v, tol);

    auto [axpby_s, axpby_v] = both_backends([&] {
      auto y = y0;
      kern::ew<T>().axpby(n, T(1.5), x.data(), T(-0.25), y.data());
      return y;
    });
    expect_close(axpby_s, axpby_v, tol);

    auto [sum_s, sum_v] = both_backends(
        [&] { return std::vector<double>{kern::ew<T>().reduce_sum(n, x.data())}; });
    expect_close(sum_s, sum_v, 1e-12);

    auto [ssq_s, ssq_v] = both_backends(
        [&] { return std::vector<double>{kern::ew<T>().reduce_sumsq(n, x.data())}; });
    expect_close(ssq_s, ssq_v, 1e-12);

    auto [ema_s, ema_v] = both_backends([&] {
      auto y = y0;
      kern::ew<T>().ema(n, T(0.99), y.data(), x.data());
      return y;
    });
    expect_close(ema_s, ema_v, tol);
  }
}

TEST_CASE_TEMPLATE("adam kernel agrees between backends", T, float, double) {
  Rng rng(17);
  const int64_t n = 259;
  const auto g = random_vec<T>(rng, n);
  const auto p0 = random_vec<T>(rng, n);
  auto run = [&] {
    auto p = p0;
    std::vector<T> m(static_cast<size_t>(n), T(0)), v(static_cast<size_t>(n), T(0));
    for (int step = 1; step <= 3; ++step) {
      const T bc1 = T(1) - static_cast<T>(std::pow(0.9, step));
      const T bc2 = T(1) - static_cast<T>(std::pow(0.999, step));
      kern::ew<T>().adam_step(n, p.data(), g.data(), m.data(), v.data(), T(1e-3), T(0.9),
                              T(0.999), T(1e-8), bc1, bc2);
    }
    return p;
  };
  auto [s, v] = both_backends(run);
  expect_close(s, v, std::is_same_v<T, float> ? 5e-6 : 1e-13);
}
