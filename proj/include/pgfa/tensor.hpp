#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfa/rng.hpp"

namespace pgfa {

// Dense row-major tensor. Activations and parameters use NCHW layout; label
// maps use (H, W) or (B, H, W).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), fill);
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }
  static Tensor full_like(const Tensor& o, T v) { return Tensor(o.shape, v); }

  static Tensor randn(std::vector<int> s, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 4D accessors (B, C, H, W).
  T& at4(int b, int c, int y, int x) {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at4(int b, int c, int y, int x) const {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  T& at3(int a, int y, int x) {
    return data[(static_cast<size_t>(a) * shape[1] + y) * shape[2] + x];
  }
  const T& at3(int a, int y, int x) const {
    return data[(static_cast<size_t>(a) * shape[1] + y) * shape[2] + x];
  }
  T& at2(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  const T& at2(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using LabelMap = Tensor<int32_t>;  // (H, W); 0 = background, k > 0 = instance id

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch, expected " +
                                a.shape_str() + " got " + b.shape_str());
  }
}

}  // namespace pgfa
