#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pgfa/ops.hpp"
#include "pgfa/rng.hpp"

// Thin layer wrappers over the autograd ops with He-style initialization and
// a flat named-parameter registry (the registry order defines checkpoint
// layout, so registration must stay deterministic).
namespace pgfa::nn {

using ag::Var;

template <typename T>
struct ParamStore {
  std::vector<std::pair<std::string, Var<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add_param(const std::string& name, const Var<T>& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor<T>* t) { buffers.emplace_back(name, t); }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params) n += p->value.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [name, p] : params) p->zero_grad();
  }
};

template <typename T>
struct Conv2d {
  Var<T> w;
  Var<T> b;  // null when bias disabled
  int stride = 1, pad = 0, dil = 1;

  void build(int cin, int cout, int k, int stride_, int pad_, int dil_, bool bias, Rng& rng) {
    stride = stride_;
    pad = pad_;
    dil = dil_;
    const double fan_in = static_cast<double>(cin) * k * k;
    const T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
    w = ag::leaf(Tensor<T>::randn({cout, cin, k, k}, rng, stddev));
    if (bias) b = ag::leaf(Tensor<T>({cout}));
  }

  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad, dil); }

  void reg(ParamStore<T>& ps, const std::string& prefix) const {
    ps.add_param(prefix + ".weight", w);
    if (b) ps.add_param(prefix + ".bias", b);
  }
};

template <typename T>
struct BatchNorm2d {
  Var<T> gamma, beta;
  std::shared_ptr<Tensor<T>> running_mean, running_var;

  void build(int c) {
    gamma = ag::leaf(Tensor<T>({c}, T(1)));
    beta = ag::leaf(Tensor<T>({c}));
    running_mean = std::make_shared<Tensor<T>>(std::vector<int>{c});
    running_var = std::make_shared<Tensor<T>>(std::vector<int>{c}, T(1));
  }

  Var<T> operator()(const Var<T>& x, bool training, bool update_running) const {
    return ag::batch_norm(x, gamma, beta, running_mean.get(), running_var.get(), training,
                          update_running);
  }

  void reg(ParamStore<T>& ps, const std::string& prefix) const {
    ps.add_param(prefix + ".gamma", gamma);
    ps.add_param(prefix + ".beta", beta);
    ps.add_buffer(prefix + ".running_mean", running_mean.get());
    ps.add_buffer(prefix + ".running_var", running_var.get());
  }
};

template <typename T>
struct PRelu {
  Var<T> a;

  void build(int c, T init = T(0.25)) { a = ag::leaf(Tensor<T>({c}, init)); }
  Var<T> operator()(const Var<T>& x) const { return ag::prelu(x, a); }
  void reg(ParamStore<T>& ps, const std::string& prefix) const {
    ps.add_param(prefix + ".slope", a);
  }
};

enum class Act { kNone, kRelu, kPRelu };

// Conv -> BN -> activation. Convolutions followed by BN carry no bias.
template <typename T>
struct ConvBnAct {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  PRelu<T> prelu;
  Act act = Act::kRelu;

  void build(int cin, int cout, int k, int stride, int pad, int dil, Act act_, Rng& rng) {
    act = act_;
    conv.build(cin, cout, k, stride, pad, dil, /*bias=*/false, rng);
    bn.build(cout);
    if (act == Act::kPRelu) prelu.build(cout);
  }

  Var<T> operator()(const Var<T>& x, bool training, bool update_running) const {
    Var<T> h = bn(conv(x), training, update_running);
    switch (act) {
      case Act::kRelu: return ag::relu(h);
      case Act::kPRelu: return prelu(h);
      case Act::kNone: return h;
    }
    return h;
  }

  void reg(ParamStore<T>& ps, const std::string& prefix) const {
    conv.reg(ps, prefix + ".conv");
    bn.reg(ps, prefix + ".bn");
    if (act == Act::kPRelu) prelu.reg(ps, prefix + ".act");
  }
};

// ResNet basic block, optionally strided/dilated, with a 1x1 projection
// shortcut whenever the shape changes.
template <typename T>
struct BasicBlock {
  Conv2d<T> c1, c2;
  BatchNorm2d<T> b1, b2;
  Conv2d<T> proj;
  BatchNorm2d<T> bproj;
  bool has_proj = false;

  void build(int cin, int cout, int stride, int dil, Rng& rng) {
    c1.build(cin, cout, 3, stride, dil, dil, false, rng);
    b1.build(cout);
    c2.build(cout, cout, 3, 1, dil, dil, false, rng);
    b2.build(cout);
    has_proj = stride != 1 || cin != cout;
    if (has_proj) {
      proj.build(cin, cout, 1, stride, 0, 1, false, rng);
      bproj.build(cout);
    }
  }

  Var<T> operator()(const Var<T>& x, bool training, bool update_running) const {
    Var<T> h = ag::relu(b1(c1(x), training, update_running));
    h = b2(c2(h), training, update_running);
    Var<T> sc = has_proj ? bproj(proj(x), training, update_running) : x;
    return ag::relu(ag::add(h, sc));
  }

  void reg(ParamStore<T>& ps, const std::string& prefix) const {
    c1.reg(ps, prefix + ".conv1");
    b1.reg(ps, prefix + ".bn1");
    c2.reg(ps, prefix + ".conv2");
    b2.reg(ps, prefix + ".bn2");
    if (has_proj) {
      proj.reg(ps, prefix + ".proj");
      bproj.reg(ps, prefix + ".proj_bn");
    }
  }
};

}  // namespace pgfa::nn
