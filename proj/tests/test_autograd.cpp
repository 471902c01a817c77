#include <cmath>
#include <functional>

#include "doctest.h"
#include "pgfa/gradcheck.hpp"
#include "pgfa/ops.hpp"
#include "pgfa/rng.hpp"

using namespace pgfa;
using ag::Var;

namespace {

// Finite-difference check for a scalar-valued function of several tensors.
template <typename Fn>
double fd_check(Fn&& fn, std::vector<Tensor<double>*> inputs) {
  return gradcheck::check_loss(std::forward<Fn>(fn), std::move(inputs));
}

Tensor<double> randn(Rng& rng, std::vector<int> shape) {
  return Tensor<double>::randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("backward accumulates through shared subexpressions") {
  // f(x) = sum(x * x) + sum(x) -> df/dx = 2x + 1
  Rng rng(3);
  Tensor<double> x = randn(rng, {2, 3, 2, 2});
  auto vx = ag::leaf(x);
  auto f = ag::add(ag::sum_all(ag::mul(vx, vx)), ag::sum_all(vx));
  ag::backward(f);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(vx->grad[i] == doctest::Approx(2 * x[i] + 1).epsilon(1e-12));
}

TEST_CASE("no-grad mode builds no graph") {
  Rng rng(4);
  auto w = ag::leaf(randn(rng, {1, 1, 1, 1}));
  ag::NoGradGuard ng;
  auto y = ag::scale(w, 2.0);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(5);
  for (const auto& [stride, pad, dil] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 2, 2}}) {
    Tensor<double> x = randn(rng, {2, 3, 6, 6});
    Tensor<double> w = randn(rng, {4, 3, 3, 3});
    Tensor<double> b = randn(rng, {4});
    const double err = fd_check(
        [&, stride = stride, pad = pad, dil = dil](const std::vector<Var<double>>& v) {
          return ag::mean_all(ag::conv2d(v[0], v[1], v[2], stride, pad, dil));
        },
        {&x, &w, &b});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("conv2d rejects channel mismatch with a descriptive error") {
  Rng rng(6);
  auto x = ag::constant(randn(rng, {1, 3, 4, 4}));
  auto w = ag::leaf(randn(rng, {4, 5, 3, 3}));
  CHECK_THROWS_WITH_AS(ag::conv2d(x, w, ag::Var<double>{}, 1, 1, 1),
                       doctest::Contains("expected 5 input channels, got 3"),
                       std::invalid_argument);
}

TEST_CASE("batch_norm gradients match finite differences (training mode)") {
  Rng rng(7);
  Tensor<double> x = randn(rng, {3, 4, 5, 5});
  Tensor<double> gamma = randn(rng, {4});
  Tensor<double> beta = randn(rng, {4});
  const double err = fd_check(
      [&](const std::vector<Var<double>>& v) {
        Tensor<double> rm({4}), rv({4}, 1.0);
        // weighted sum so the gradient is not uniform
        auto y = ag::batch_norm(v[0], v[1], v[2], &rm, &rv, true, false);
        return ag::mse<double>(y, ag::constant(Tensor<double>(y->value.shape)), nullptr);
      },
      {&x, &gamma, &beta});
  CHECK(err < 1e-5);
}

TEST_CASE("batch_norm eval mode uses running stats") {
  Tensor<double> x({1, 1, 1, 2});
  x[0] = 3.0;
  x[1] = 5.0;
  auto gamma = ag::leaf(Tensor<double>({1}, 2.0));
  auto beta = ag::leaf(Tensor<double>({1}, 1.0));
  Tensor<double> rm({1}, 3.0), rv({1}, 4.0);
  auto y = ag::batch_norm(ag::constant(x), gamma, beta, &rm, &rv, false);
  // (x - 3) / sqrt(4 + eps) * 2 + 1
  CHECK(y->value[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(y->value[1] == doctest::Approx(1.0 + 2.0 * 2.0 / std::sqrt(4.0 + 1e-5)).epsilon(1e-6));
}

TEST_CASE("prelu gradients match finite differences") {
  Rng rng(8);
  Tensor<double> x = randn(rng, {2, 3, 4, 4});
  Tensor<double> a({3}, 0.25);
  const double err = fd_check(
      [&](const std::vector<Var<double>>& v) {
        return ag::mse<double>(ag::prelu(v[0], v[1]),
                               ag::constant(Tensor<double>(x.shape, 0.3)), nullptr);
      },
      {&x, &a});
  CHECK(err < 1e-6);
}

TEST_CASE("upsample bilinear and nearest gradients match finite differences") {
  Rng rng(9);
  Tensor<double> x = randn(rng, {1, 2, 3, 4});
  const double e1 = fd_check(
      [&](const std::vector<Var<double>>& v) {
        return ag::mse<double>(ag::upsample_bilinear(v[0], 7, 9),
                               ag::constant(Tensor<double>({1, 2, 7, 9})), nullptr);
      },
      {&x});
  CHECK(e1 < 1e-6);
  const double e2 = fd_check(
      [&](const std::vector<Var<double>>& v) {
        return ag::mse<double>(ag::upsample_nearest(v[0], 6, 8),
                               ag::constant(Tensor<double>({1, 2, 6, 8})), nullptr);
      },
      {&x});
  CHECK(e2 < 1e-6);
}

TEST_CASE("bilinear upsample of a constant map is constant") {
  Tensor<double> x({1, 1, 2, 2}, 3.5);
  auto y = ag::upsample_bilinear(ag::constant(x), 5, 7);
  for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(y->value[i] == doctest::Approx(3.5));
}

TEST_CASE("softmax, concat, pooling gradients match finite differences") {
  Rng rng(10);
  Tensor<double> a = randn(rng, {2, 3, 3, 3});
  Tensor<double> b = randn(rng, {2, 2, 3, 3});
  const double e1 = fd_check(
      [&](const std::vector<Var<double>>& v) {
        return ag::mse<double>(ag::softmax_channels(v[0]),
                               ag::constant(Tensor<double>(a.shape, 0.2)), nullptr);
      },
      {&a});
  CHECK(e1 < 1e-6);
  const double e2 = fd_check(
      [&](const std::vector<Var<double>>& v) {
        return ag::mean_all(ag::mul(ag::concat_channels<double>({v[0], v[1]}),
                                    ag::concat_channels<double>({v[0], v[1]})));
      },
      {&a, &b});
  CHECK(e2 < 1e-6);
  const double e3 = fd_check(
      [&](const std::vector<Var<double>>& v) {
        return ag::mse<double>(ag::global_avg_pool(v[0]),
                               ag::constant(Tensor<double>({2, 3, 1, 1})), nullptr);
      },
      {&a});
  CHECK(e3 < 1e-6);
}

TEST_CASE("softmax output sums to one per pixel") {
  Rng rng(12);
  auto x = ag::constant(randn(rng, {2, 5, 4, 4}));
  auto p = ag::softmax_channels(x);
  for (int b = 0; b < 2; ++b)
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) {
        double s = 0;
        for (int c = 0; c < 5; ++c) s += p->value.at4(b, c, y, xx);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
}

TEST_CASE("weighted mse matches its closed form and gradient") {
  Rng rng(14);
  Tensor<double> a = randn(rng, {2, 3, 4, 4});
  Tensor<double> b = randn(rng, {2, 3, 4, 4});
  Tensor<double> w({2, 1, 4, 4});
  for (auto& v : w.data) v = rng.uniform(1.0, 2.0);
  const double err = fd_check(
      [&](const std::vector<Var<double>>& v) { return ag::mse<double>(v[0], v[1], &w); },
      {&a, &b});
  CHECK(err < 1e-6);

  double expect = 0;
  for (int bi = 0; bi < 2; ++bi)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          const double d = a.at4(bi, c, y, x) - b.at4(bi, c, y, x);
          expect += w.at4(bi, 0, y, x) * d * d;
        }
  expect /= a.numel();
  auto got = ag::mse<double>(ag::constant(a), ag::constant(b), &w);
  CHECK(got->value[0] == doctest::Approx(expect).epsilon(1e-12));
}
