#include "pgfa/gradcheck.hpp"

#include "pgfa/rng.hpp"

namespace pgfa::gradcheck {
namespace {

Tensor<int32_t> random_labels(Rng& rng, int B, int C, int H, int W) {
  Tensor<int32_t> lab({B, H, W});
  for (auto& v : lab.data) v = rng.uniform_int(0, C - 1);
  return lab;
}

// Instance maps with a couple of rectangles per image, ids 1..k.
std::vector<LabelMap> random_instances(Rng& rng, int B, int H, int W) {
  std::vector<LabelMap> maps;
  for (int b = 0; b < B; ++b) {
    LabelMap m({H, W});
    const int n = rng.uniform_int(1, 3);
    for (int32_t id = 1; id <= n; ++id) {
      const int y0 = rng.uniform_int(0, H - 2), x0 = rng.uniform_int(0, W - 2);
      const int y1 = rng.uniform_int(y0 + 1, H - 1), x1 = rng.uniform_int(x0 + 1, W - 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at2(y, x) = id;
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

Tensor<double> softmax_map(const Tensor<double>& logits) {
  return uncert::detail::softmax_channels_plain(logits);
}

}  // namespace

std::vector<Result> run_all(uint64_t seed, double tol, int B, int C, int H, int W) {
  Rng rng(seed);
  std::vector<Result> results;
  auto record = [&](const std::string& name, double err) {
    results.push_back({name, err, err < tol});
  };

  {
    Tensor<double> logits = Tensor<double>::randn({B, C, H, W}, rng);
    const Tensor<int32_t> labels = random_labels(rng, B, C, H, W);
    record("cross_entropy", check_loss(
        [&](const std::vector<ag::Var<double>>& v) { return losses::cross_entropy(v[0], labels); },
        {&logits}));
  }
  {
    Tensor<double> logits = Tensor<double>::randn({B, C, H, W}, rng);
    const Tensor<int32_t> labels = random_labels(rng, B, C, H, W);
    record("dice_loss", check_loss(
        [&](const std::vector<ag::Var<double>>& v) { return losses::dice_loss(v[0], labels); },
        {&logits}));
  }
  {
    // vcc is a function of probabilities; the check runs on the probability
    // tensor directly (rows need not be normalized for the derivative test).
    Tensor<double> probs({B, C, H, W});
    for (auto& v : probs.data) v = rng.uniform(0.05, 0.95);
    const auto maps = random_instances(rng, B, H, W);
    const Tensor<int32_t> labels = random_labels(rng, B, C, H, W);
    record("vcc_loss", check_loss(
        [&](const std::vector<ag::Var<double>>& v) {
          losses::InstanceBatch<double> ib{v[0], maps, labels, {}};
          return losses::vcc_loss(ib);
        },
        {&probs}));
  }
  {
    Tensor<double> s1 = Tensor<double>::randn({B, C, H, W}, rng);
    Tensor<double> s2 = Tensor<double>::randn({B, C, H, W}, rng);
    record("intra_loss", check_loss(
        [&](const std::vector<ag::Var<double>>& v) { return losses::intra_loss(v[0], v[1]); },
        {&s1, &s2}));
  }
  {
    Tensor<double> student = Tensor<double>::randn({B, C, H, W}, rng);
    const Tensor<double> teacher_logits = Tensor<double>::randn({B, C, H, W}, rng);
    const Tensor<double> q_tea = softmax_map(teacher_logits);
    Tensor<double> weight({B, 1, H, W});
    for (auto& v : weight.data) v = rng.uniform(1.0, 2.0);
    record("inter_loss_weighted", check_loss(
        [&](const std::vector<ag::Var<double>>& v) {
          // Student consistency input is its softmax; target held constant.
          return losses::inter_loss(ag::softmax_channels(v[0]), ag::constant(q_tea), weight);
        },
        {&student}));
  }
  return results;
}

}  // namespace pgfa::gradcheck
