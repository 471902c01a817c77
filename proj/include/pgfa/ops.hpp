#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfa/autograd.hpp"
#include "pgfa/kernels.hpp"

// Differentiable tensor ops on (B, C, H, W) activations.
namespace pgfa::ag {

namespace detail {

template <typename T>
void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// col is (Cin*kh*kw) x (Ho*Wo) for one image.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
            int Ho, int Wo, T* col) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          T* dst = row + static_cast<int64_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::memset(dst, 0, sizeof(T) * static_cast<size_t>(Wo));
            continue;
          }
          const T* src = x + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int dil, int Ho, int Wo, T* x) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + static_cast<int64_t>(oy) * Wo;
          T* dst = x + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ------------------------------------------------------------ arithmetic ---

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape);
  kern::ew<T>().vadd(out.numel(), a->value.ptr(), b->value.ptr(), out.ptr());
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad)
      kern::ew<T>().axpy(n.grad.numel(), T(1), n.grad.ptr(), a->ensure_grad().ptr());
    if (b->requires_grad)
      kern::ew<T>().axpy(n.grad.numel(), T(1), n.grad.ptr(), b->ensure_grad().ptr());
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "sub");
  Tensor<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad)
      kern::ew<T>().axpy(n.grad.numel(), T(1), n.grad.ptr(), a->ensure_grad().ptr());
    if (b->requires_grad)
      kern::ew<T>().axpy(n.grad.numel(), T(-1), n.grad.ptr(), b->ensure_grad().ptr());
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "mul");
  Tensor<T> out(a->value.shape);
  kern::ew<T>().vmul(out.numel(), a->value.ptr(), b->value.ptr(), out.ptr());
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    const int64_t m = n.grad.numel();
    if (a->requires_grad) {
      T* ga = a->ensure_grad().ptr();
      for (int64_t i = 0; i < m; ++i) ga[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      T* gb = b->ensure_grad().ptr();
      for (int64_t i = 0; i < m; ++i) gb[i] += n.grad[i] * a->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x->value;
  kern::ew<T>().vscale(out.numel(), s, out.ptr());
  return make_op<T>(std::move(out), {x}, [x, s](Node<T>& n) {
    if (x->requires_grad) kern::ew<T>().axpy(n.grad.numel(), s, n.grad.ptr(), x->ensure_grad().ptr());
  });
}

// ------------------------------------------------------------ convolution --

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
              int dil) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  detail::require<T>(xs.size() == 4 && ws.size() == 4, "conv2d: expects 4-D input and weight");
  detail::require<T>(
      xs[1] == ws[1],
      "conv2d: channel mismatch, expected " + std::to_string(ws[1]) + " input channels, got " +
          std::to_string(xs[1]));
  const int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int Cout = ws[0], kh = ws[2], kw = ws[3];
  const int Ho = detail::conv_out_dim(H, kh, stride, pad, dil);
  const int Wo = detail::conv_out_dim(W, kw, stride, pad, dil);
  detail::require<T>(Ho > 0 && Wo > 0, "conv2d: output would be empty for input " +
                                           x->value.shape_str());
  const int K = Cin * kh * kw;
  const int P = Ho * Wo;

  auto cols = std::make_shared<std::vector<Tensor<T>>>();
  cols->reserve(static_cast<size_t>(B));
  Tensor<T> out({B, Cout, Ho, Wo});
  for (int bi = 0; bi < B; ++bi) {
    Tensor<T> col({K, P});
    detail::im2col(x->value.ptr() + static_cast<int64_t>(bi) * Cin * H * W, Cin, H, W, kh, kw,
                   stride, pad, dil, Ho, Wo, col.ptr());
    T* y = out.ptr() + static_cast<int64_t>(bi) * Cout * P;
    kern::gemm<T>().nn(Cout, P, K, w->value.ptr(), col.ptr(), y);
    if (b) {
      for (int c = 0; c < Cout; ++c) {
        const T bv = b->value[c];
        T* yc = y + static_cast<int64_t>(c) * P;
        for (int p = 0; p < P; ++p) yc[p] += bv;
      }
    }
    if (grad_mode() && (x->requires_grad || w->requires_grad)) cols->push_back(std::move(col));
  }

  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(out), std::move(parents),
                    [x, w, b, cols, B, Cin, H, W, Cout, kh, kw, stride, pad, dil, Ho, Wo, K,
                     P](Node<T>& n) {
    Tensor<T> gcol({K, P});
    for (int bi = 0; bi < B; ++bi) {
      const T* gy = n.grad.ptr() + static_cast<int64_t>(bi) * Cout * P;
      if (w->requires_grad)
        kern::gemm<T>().nt(Cout, K, P, gy, (*cols)[static_cast<size_t>(bi)].ptr(),
                           w->ensure_grad().ptr());
      if (b && b->requires_grad) {
        T* gb = b->ensure_grad().ptr();
        for (int c = 0; c < Cout; ++c) {
          double s = kern::ew<T>().reduce_sum(P, gy + static_cast<int64_t>(c) * P);
          gb[c] += static_cast<T>(s);
        }
      }
      if (x->requires_grad) {
        std::fill(gcol.data.begin(), gcol.data.end(), T(0));
        kern::gemm<T>().tn(K, P, Cout, w->value.ptr(), gy, gcol.ptr());
        detail::col2im_add(gcol.ptr(), Cin, H, W, kh, kw, stride, pad, dil, Ho, Wo,
                           x->ensure_grad().ptr() + static_cast<int64_t>(bi) * Cin * H * W);
      }
    }
  });
}

// ------------------------------------------------------------- batch norm --

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                  bool update_running = true, T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& s = x->value.shape;
  detail::require<T>(s.size() == 4, "batch_norm: expects 4-D input");
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  const int64_t N = static_cast<int64_t>(B) * H * W;
  detail::require<T>(gamma->value.numel() == C && beta->value.numel() == C,
                     "batch_norm: affine parameter size mismatch");

  auto xhat = std::make_shared<Tensor<T>>(x->value.shape);
  auto inv_std = std::make_shared<Tensor<T>>(std::vector<int>{C});
  Tensor<T> out(x->value.shape);

  for (int c = 0; c < C; ++c) {
    T mean, var;
    if (training) {
      double sum = 0.0, sumsq = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* p = x->value.ptr() + (static_cast<int64_t>(b) * C + c) * H * W;
        sum += kern::ew<T>().reduce_sum(static_cast<int64_t>(H) * W, p);
        sumsq += kern::ew<T>().reduce_sumsq(static_cast<int64_t>(H) * W, p);
      }
      const double m = sum / static_cast<double>(N);
      const double v = sumsq / static_cast<double>(N) - m * m;
      mean = static_cast<T>(m);
      var = static_cast<T>(v > 0 ? v : 0);
      if (update_running && running_mean && running_var) {
        const double unbiased = N > 1 ? v * static_cast<double>(N) / static_cast<double>(N - 1) : v;
        (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * mean;
        (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * static_cast<T>(unbiased);
      }
    } else {
      detail::require<T>(running_mean && running_var, "batch_norm: eval mode needs running stats");
      mean = (*running_mean)[c];
      var = (*running_var)[c];
    }
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[c] = istd;
    const T g = gamma->value[c], be = beta->value[c];
    for (int b = 0; b < B; ++b) {
      const int64_t off = (static_cast<int64_t>(b) * C + c) * H * W;
      const T* px = x->value.ptr() + off;
      T* ph = xhat->ptr() + off;
      T* po = out.ptr() + off;
      for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
        const T xh = (px[i] - mean) * istd;
        ph[i] = xh;
        po[i] = g * xh + be;
      }
    }
  }

  return make_op<T>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat, inv_std, training, B, C, H, W, N](Node<T>& n) {
    const int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int b = 0; b < B; ++b) {
        const int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
        const T* gy = n.grad.ptr() + off;
        const T* xh = xhat->ptr() + off;
        for (int64_t i = 0; i < HW; ++i) {
          sum_dy += static_cast<double>(gy[i]);
          sum_dy_xhat += static_cast<double>(gy[i]) * static_cast<double>(xh[i]);
        }
      }
      if (gamma->requires_grad) gamma->ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
      if (beta->requires_grad) beta->ensure_grad()[c] += static_cast<T>(sum_dy);
      if (x->requires_grad) {
        const T g_istd = gamma->value[c] * (*inv_std)[c];
        T* gx_base = x->ensure_grad().ptr();
        if (training) {
          const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(N));
          const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(N));
          for (int b = 0; b < B; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            const T* gy = n.grad.ptr() + off;
            const T* xh = xhat->ptr() + off;
            T* gx = gx_base + off;
            for (int64_t i = 0; i < HW; ++i)
              gx[i] += g_istd * (gy[i] - mean_dy - xh[i] * mean_dy_xhat);
          }
        } else {
          for (int b = 0; b < B; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            kern::ew<T>().axpy(HW, g_istd, n.grad.ptr() + off, gx_base + off);
          }
        }
      }
    }
  });
}

// ------------------------------------------------------------ activations --

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    T* gx = x->ensure_grad().ptr();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (x->value[i] > T(0)) gx[i] += n.grad[i];
  });
}

// Per-channel PReLU: y = max(x, 0) + a_c * min(x, 0).
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& a) {
  const auto& s = x->value.shape;
  detail::require<T>(s.size() == 4 && a->value.numel() == s[1],
                     "prelu: slope must have one entry per channel");
  const int B = s[0], C = s[1];
  const int64_t HW = static_cast<int64_t>(s[2]) * s[3];
  Tensor<T> out(s);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T ac = a->value[c];
      const int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        const T v = x->value[off + i];
        out[off + i] = v > T(0) ? v : ac * v;
      }
    }
  return make_op<T>(std::move(out), {x, a}, [x, a, B, C, HW](Node<T>& n) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
        const T ac = a->value[c];
        double ga = 0.0;
        for (int64_t i = 0; i < HW; ++i) {
          const T v = x->value[off + i];
          const T gy = n.grad[off + i];
          if (x->requires_grad) x->ensure_grad()[off + i] += v > T(0) ? gy : ac * gy;
          if (v <= T(0)) ga += static_cast<double>(gy) * static_cast<double>(v);
        }
        if (a->requires_grad) a->ensure_grad()[c] += static_cast<T>(ga);
      }
  });
}

// -------------------------------------------------------------- resampling --

// Bilinear resize with align_corners = false (half-pixel centers).
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int Ho, int Wo) {
  const auto& s = x->value.shape;
  detail::require<T>(s.size() == 4, "upsample_bilinear: expects 4-D input");
  detail::require<T>(Ho > 0 && Wo > 0, "upsample_bilinear: target size must be positive");
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  if (Ho == H && Wo == W) {  // identity fast path
    Tensor<T> out = x->value;
    return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
      if (x->requires_grad)
        kern::ew<T>().axpy(n.grad.numel(), T(1), n.grad.ptr(), x->ensure_grad().ptr());
    });
  }
  struct Lerp {
    int i0, i1;
    T w1;
  };
  auto make_axis = [](int in, int out) {
    std::vector<Lerp> v(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      if (src > in - 1) src = in - 1;
      const int i0 = static_cast<int>(src);
      v[static_cast<size_t>(o)] = {i0, i0 + 1 < in ? i0 + 1 : i0, static_cast<T>(src - i0)};
    }
    return v;
  };
  auto ys = std::make_shared<std::vector<Lerp>>(make_axis(H, Ho));
  auto xs = std::make_shared<std::vector<Lerp>>(make_axis(W, Wo));

  Tensor<T> out({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = x->value.ptr() + (static_cast<int64_t>(b) * C + c) * H * W;
      T* dst = out.ptr() + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const auto& ly = (*ys)[static_cast<size_t>(oy)];
        for (int ox = 0; ox < Wo; ++ox) {
          const auto& lx = (*xs)[static_cast<size_t>(ox)];
          const T v00 = src[ly.i0 * W + lx.i0], v01 = src[ly.i0 * W + lx.i1];
          const T v10 = src[ly.i1 * W + lx.i0], v11 = src[ly.i1 * W + lx.i1];
          const T top = v00 + lx.w1 * (v01 - v00);
          const T bot = v10 + lx.w1 * (v11 - v10);
          dst[oy * Wo + ox] = top + ly.w1 * (bot - top);
        }
      }
    }
  return make_op<T>(std::move(out), {x}, [x, ys, xs, B, C, H, W, Ho, Wo](Node<T>& n) {
    if (!x->requires_grad) return;
    T* gx_base = x->ensure_grad().ptr();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        T* gx = gx_base + (static_cast<int64_t>(b) * C + c) * H * W;
        const T* gy = n.grad.ptr() + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const auto& ly = (*ys)[static_cast<size_t>(oy)];
          for (int ox = 0; ox < Wo; ++ox) {
            const auto& lx = (*xs)[static_cast<size_t>(ox)];
            const T g = gy[oy * Wo + ox];
            const T wy1 = ly.w1, wx1 = lx.w1;
            gx[ly.i0 * W + lx.i0] += g * (T(1) - wy1) * (T(1) - wx1);
            gx[ly.i0 * W + lx.i1] += g * (T(1) - wy1) * wx1;
            gx[ly.i1 * W + lx.i0] += g * wy1 * (T(1) - wx1);
            gx[ly.i1 * W + lx.i1] += g * wy1 * wx1;
          }
        }
      }
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int Ho, int Wo) {
  const auto& s = x->value.shape;
  detail::require<T>(s.size() == 4, "upsample_nearest: expects 4-D input");
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  auto idx = [](int o, int in, int out) {
    int i = static_cast<int>(static_cast<int64_t>(o) * in / out);
    return i < in ? i : in - 1;
  };
  auto ymap = std::make_shared<std::vector<int>>(static_cast<size_t>(Ho));
  auto xmap = std::make_shared<std::vector<int>>(static_cast<size_t>(Wo));
  for (int o = 0; o < Ho; ++o) (*ymap)[static_cast<size_t>(o)] = idx(o, H, Ho);
  for (int o = 0; o < Wo; ++o) (*xmap)[static_cast<size_t>(o)] = idx(o, W, Wo);
  Tensor<T> out({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = x->value.ptr() + (static_cast<int64_t>(b) * C + c) * H * W;
      T* dst = out.ptr() + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox)
          dst[oy * Wo + ox] = src[(*ymap)[static_cast<size_t>(oy)] * W + (*xmap)[static_cast<size_t>(ox)]];
    }
  return make_op<T>(std::move(out), {x}, [x, ymap, xmap, B, C, H, W, Ho, Wo](Node<T>& n) {
    if (!x->requires_grad) return;
    T* gx_base = x->ensure_grad().ptr();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        T* gx = gx_base + (static_cast<int64_t>(b) * C + c) * H * W;
        const T* gy = n.grad.ptr() + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox)
            gx[(*ymap)[static_cast<size_t>(oy)] * W + (*xmap)[static_cast<size_t>(ox)]] += gy[oy * Wo + ox];
      }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x->value.shape;
  detail::require<T>(s.size() == 4, "global_avg_pool: expects 4-D input");
  const int B = s[0], C = s[1];
  const int64_t HW = static_cast<int64_t>(s[2]) * s[3];
  Tensor<T> out({B, C, 1, 1});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      out[static_cast<int64_t>(b) * C + c] = static_cast<T>(
          kern::ew<T>().reduce_sum(HW, x->value.ptr() + (static_cast<int64_t>(b) * C + c) * HW) /
          static_cast<double>(HW));
  return make_op<T>(std::move(out), {x}, [x, B, C, HW](Node<T>& n) {
    if (!x->requires_grad) return;
    T* gx = x->ensure_grad().ptr();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T g = n.grad[static_cast<int64_t>(b) * C + c] / static_cast<T>(HW);
        T* p = gx + (static_cast<int64_t>(b) * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) p[i] += g;
      }
  });
}

// ---------------------------------------------------------------- reshape --

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  detail::require<T>(!xs.empty(), "concat_channels: empty input list");
  const auto& s0 = xs[0]->value.shape;
  detail::require<T>(s0.size() == 4, "concat_channels: expects 4-D inputs");
  int Ctot = 0;
  for (const auto& x : xs) {
    const auto& s = x->value.shape;
    detail::require<T>(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
                       "concat_channels: inconsistent shapes " + x->value.shape_str() + " vs " +
                           xs[0]->value.shape_str());
    Ctot += s[1];
  }
  const int B = s0[0];
  const int64_t HW = static_cast<int64_t>(s0[2]) * s0[3];
  Tensor<T> out({B, Ctot, s0[2], s0[3]});
  for (int b = 0; b < B; ++b) {
    int co = 0;
    for (const auto& x : xs) {
      const int C = x->value.shape[1];
      std::memcpy(out.ptr() + (static_cast<int64_t>(b) * Ctot + co) * HW,
                  x->value.ptr() + static_cast<int64_t>(b) * C * HW,
                  sizeof(T) * static_cast<size_t>(C * HW));
      co += C;
    }
  }
  return make_op<T>(std::move(out), xs, [xs, B, Ctot, HW](Node<T>& n) {
    for (int b = 0; b < B; ++b) {
      int co = 0;
      for (const auto& x : xs) {
        const int C = x->value.shape[1];
        if (x->requires_grad)
          kern::ew<T>().axpy(C * HW, T(1), n.grad.ptr() + (static_cast<int64_t>(b) * Ctot + co) * HW,
                             x->ensure_grad().ptr() + static_cast<int64_t>(b) * C * HW);
        co += C;
      }
    }
  });
}

// ---------------------------------------------------------------- softmax --

// Channel-wise softmax on (B, C, H, W).
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const auto& s = x->value.shape;
  detail::require<T>(s.size() == 4, "softmax_channels: expects 4-D input");
  const int B = s[0], C = s[1];
  const int64_t HW = static_cast<int64_t>(s[2]) * s[3];
  Tensor<T> out(s);
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T mx = x->value[(static_cast<int64_t>(b) * C) * HW + i];
      for (int c = 1; c < C; ++c)
        mx = std::max(mx, x->value[(static_cast<int64_t>(b) * C + c) * HW + i]);
      T denom = T(0);
      for (int c = 0; c < C; ++c) {
        const T e = std::exp(x->value[(static_cast<int64_t>(b) * C + c) * HW + i] - mx);
        out[(static_cast<int64_t>(b) * C + c) * HW + i] = e;
        denom += e;
      }
      for (int c = 0; c < C; ++c) out[(static_cast<int64_t>(b) * C + c) * HW + i] /= denom;
    }
  auto probs = std::make_shared<Tensor<T>>(out);
  return make_op<T>(std::move(out), {x}, [x, probs, B, C, HW](Node<T>& n) {
    if (!x->requires_grad) return;
    T* gx = x->ensure_grad().ptr();
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        T dot = T(0);
        for (int c = 0; c < C; ++c) {
          const int64_t k = (static_cast<int64_t>(b) * C + c) * HW + i;
          dot += n.grad[k] * (*probs)[k];
        }
        for (int c = 0; c < C; ++c) {
          const int64_t k = (static_cast<int64_t>(b) * C + c) * HW + i;
          gx[k] += (*probs)[k] * (n.grad[k] - dot);
        }
      }
  });
}

// -------------------------------------------------------------- reductions --

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Tensor<T> out({1});
  out[0] = static_cast<T>(kern::ew<T>().reduce_sum(x->value.numel(), x->value.ptr()));
  return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    T* gx = x->ensure_grad().ptr();
    const T g = n.grad[0];
    for (int64_t i = 0; i < x->value.numel(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const T inv = T(1) / static_cast<T>(x->value.numel());
  return scale(sum_all(x), inv);
}

// Mean of weight * (a - b)^2 over all elements. weight, when given, has shape
// (B, 1, H, W) and broadcasts over channels; it is a constant (no gradient).
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b, const Tensor<T>* weight = nullptr) {
  check_same_shape(a->value, b->value, "mse");
  const auto& s = a->value.shape;
  auto w = weight ? std::make_shared<Tensor<T>>(*weight) : nullptr;
  if (w) {
    detail::require<T>(s.size() == 4 && w->shape.size() == 4 && w->shape[0] == s[0] &&
                           w->shape[1] == 1 && w->shape[2] == s[2] && w->shape[3] == s[3],
                       "mse: weight must be (B, 1, H, W)");
  }
  const int64_t n_total = a->value.numel();
  const int C = s.size() == 4 ? s[1] : 1;
  const int64_t HW = s.size() == 4 ? static_cast<int64_t>(s[2]) * s[3] : n_total;
  double acc = 0.0;
  for (int64_t i = 0; i < n_total; ++i) {
    const double d = static_cast<double>(a->value[i]) - static_cast<double>(b->value[i]);
    double wv = 1.0;
    if (w) {
      const int64_t pix = i % HW;
      const int64_t bi = i / (static_cast<int64_t>(C) * HW);
      wv = static_cast<double>((*w)[bi * HW + pix]);
    }
    acc += wv * d * d;
  }
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(n_total));
  return make_op<T>(std::move(out), {a, b}, [a, b, w, n_total, C, HW](Node<T>& n) {
    const T g = n.grad[0];
    for (int64_t i = 0; i < n_total; ++i) {
      T wv = T(1);
      if (w) {
        const int64_t pix = i % HW;
        const int64_t bi = i / (static_cast<int64_t>(C) * HW);
        wv = (*w)[bi * HW + pix];
      }
      const T d = g * T(2) * wv * (a->value[i] - b->value[i]) / static_cast<T>(n_total);
      if (a->requires_grad) a->ensure_grad()[i] += d;
      if (b->requires_grad) b->ensure_grad()[i] -= d;
    }
  });
}

}  // namespace pgfa::ag
