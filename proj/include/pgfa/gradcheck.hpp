#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pgfa/losses.hpp"
#include "pgfa/uncertainty.hpp"

// Central finite-difference verification of the loss gradients, in double
// precision. The difference quotient is the independent oracle here: it only
// ever calls the forward path.
namespace pgfa::gradcheck {

struct Result {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-4)
template <typename LossFn>
double check_loss(LossFn&& loss_of, std::vector<Tensor<double>*> inputs, double h = 1e-5) {
  using pgfa::ag::Var;
  // Analytic gradients.
  std::vector<Var<double>> vars;
  for (Tensor<double>* t : inputs) vars.push_back(ag::leaf(*t));
  Var<double> out = loss_of(vars);
  ag::backward(out);
  double max_err = 0.0;
  for (size_t vi = 0; vi < vars.size(); ++vi) {
    Tensor<double>& x = *inputs[vi];
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      const double step = h * std::max(1.0, std::abs(orig));
      auto eval = [&](double v) {
        x[i] = v;
        std::vector<Var<double>> cs;
        for (Tensor<double>* t : inputs) cs.push_back(ag::constant(*t));
        ag::NoGradGuard ng;
        const double r = loss_of(cs)->value[0];
        x[i] = orig;
        return r;
      };
      const double fp = eval(orig + step);
      const double fm = eval(orig - step);
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic =
          vars[vi]->grad.numel() > 0 ? vars[vi]->grad[i] : 0.0;
      const double err = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

// Runs the harness over every loss on random tensors of the given size
// (defaults match the acceptance bound of 2x2x8x8).
std::vector<Result> run_all(uint64_t seed = 42, double tol = 1e-4, int B = 2, int C = 2,
                            int H = 8, int W = 8);

}  // namespace pgfa::gradcheck
