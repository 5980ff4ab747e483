#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/autograd.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

namespace detail {

inline void op_check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// First index i in [0, n) with i*stride - pad + k >= 0.
inline int conv_lo(int pad, int k, int stride) {
  int lo = pad - k;
  return lo <= 0 ? 0 : (lo + stride - 1) / stride;
}

// One past the last index i with i*stride - pad + k < extent, clamped to n.
inline int conv_hi(int extent, int pad, int k, int stride, int n) {
  int hi = extent + pad - k;
  if (hi <= 0) return 0;
  return std::min(n, (hi + stride - 1) / stride);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of [N,C,H,W] input with [F,C,kh,kw] filters.
// Output spatial extent is (H + 2*pad - kh)/stride + 1.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, int stride_y, int stride_x,
              int pad_y, int pad_x) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weights.value();
  detail::op_check(x.rank() == 4, "conv2d: input must be 4-d, got " + x.shape_str());
  detail::op_check(w.rank() == 4, "conv2d: weights must be 4-d, got " + w.shape_str());
  detail::op_check(stride_y > 0 && stride_x > 0 && pad_y >= 0 && pad_x >= 0, "conv2d: bad stride/pad");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  detail::op_check(w.dim(1) == C, "conv2d: input channels do not match filter channels (input " +
                                      x.shape_str() + ", weights " + w.shape_str() + ")");
  detail::op_check(H + 2 * pad_y >= kh && W + 2 * pad_x >= kw,
                   "conv2d: kernel larger than padded input (input " + x.shape_str() + ", weights " +
                       w.shape_str() + ")");
  const int Ho = (H + 2 * pad_y - kh) / stride_y + 1;
  const int Wo = (W + 2 * pad_x - kw) / stride_x + 1;
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::op_check(bias.value().rank() == 1 && bias.value().dim(0) == F,
                     "conv2d: bias shape " + bias.value().shape_str() + " does not match filters " +
                         std::to_string(F));
  }

  Tensor<T> out({N, F, Ho, Wo});
  {
    const T* xd = x.data();
    const T* wd = w.data();
    const T* bd = has_bias ? bias.value().data() : nullptr;
    T* od = out.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int f = 0; f < F; ++f) {
        T* out_ch = od + (static_cast<int64_t>(n) * F + f) * Ho * Wo;
        const T bval = bd ? bd[f] : T(0);
        for (int i = 0; i < Ho * Wo; ++i) out_ch[i] = bval;
        for (int c = 0; c < C; ++c) {
          const T* in_ch = xd + (static_cast<int64_t>(n) * C + c) * H * W;
          for (int ky = 0; ky < kh; ++ky) {
            const int oy0 = detail::conv_lo(pad_y, ky, stride_y);
            const int oy1 = detail::conv_hi(H, pad_y, ky, stride_y, Ho);
            for (int kx = 0; kx < kw; ++kx) {
              const T wv = wd[((static_cast<int64_t>(f) * C + c) * kh + ky) * kw + kx];
              const int ox0 = detail::conv_lo(pad_x, kx, stride_x);
              const int ox1 = detail::conv_hi(W, pad_x, kx, stride_x, Wo);
              for (int oy = oy0; oy < oy1; ++oy) {
                const int iy = oy * stride_y - pad_y + ky;
                const T* in_row = in_ch + static_cast<int64_t>(iy) * W;
                T* out_row = out_ch + static_cast<int64_t>(oy) * Wo;
                if (stride_x == 1) {
                  const int off = kx - pad_x;
                  for (int ox = ox0; ox < ox1; ++ox) out_row[ox] += wv * in_row[ox + off];
                } else {
                  for (int ox = ox0; ox < ox1; ++ox) out_row[ox] += wv * in_row[ox * stride_x - pad_x + kx];
                }
              }
            }
          }
        }
      }
    }
  }

  auto xn = input.node();
  auto wn = weights.node();
  auto bn = has_bias ? bias.node() : nullptr;
  auto fn = [xn, wn, bn, N, C, H, W, F, kh, kw, Ho, Wo, stride_y, stride_x, pad_y, pad_x](Node<T>& self) {
    const T* gd = self.grad.data();
    if (xn->requires_grad) {
      xn->ensure_grad();
      T* dxd = xn->grad.data();
      const T* wd = wn->value.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          T* dx_ch = dxd + (static_cast<int64_t>(n) * C + c) * H * W;
          for (int f = 0; f < F; ++f) {
            const T* g_ch = gd + (static_cast<int64_t>(n) * F + f) * Ho * Wo;
            for (int ky = 0; ky < kh; ++ky) {
              const int oy0 = detail::conv_lo(pad_y, ky, stride_y);
              const int oy1 = detail::conv_hi(H, pad_y, ky, stride_y, Ho);
              for (int kx = 0; kx < kw; ++kx) {
                const T wv = wd[((static_cast<int64_t>(f) * C + c) * kh + ky) * kw + kx];
                const int ox0 = detail::conv_lo(pad_x, kx, stride_x);
                const int ox1 = detail::conv_hi(W, pad_x, kx, stride_x, Wo);
                for (int oy = oy0; oy < oy1; ++oy) {
                  const int iy = oy * stride_y - pad_y + ky;
                  T* dx_row = dx_ch + static_cast<int64_t>(iy) * W;
                  const T* g_row = g_ch + static_cast<int64_t>(oy) * Wo;
                  if (stride_x == 1) {
                    const int off = kx - pad_x;
                    for (int ox = ox0; ox < ox1; ++ox) dx_row[ox + off] += wv * g_row[ox];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox) dx_row[ox * stride_x - pad_x + kx] += wv * g_row[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      T* dwd = wn->grad.data();
      const T* xd = xn->value.data();
#pragma omp parallel for schedule(static)
      for (int f = 0; f < F; ++f) {
        for (int c = 0; c < C; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            const int oy0 = detail::conv_lo(pad_y, ky, stride_y);
            const int oy1 = detail::conv_hi(H, pad_y, ky, stride_y, Ho);
            for (int kx = 0; kx < kw; ++kx) {
              const int ox0 = detail::conv_lo(pad_x, kx, stride_x);
              const int ox1 = detail::conv_hi(W, pad_x, kx, stride_x, Wo);
              T acc = 0;
              for (int n = 0; n < N; ++n) {
                const T* g_ch = gd + (static_cast<int64_t>(n) * F + f) * Ho * Wo;
                const T* in_ch = xd + (static_cast<int64_t>(n) * C + c) * H * W;
                for (int oy = oy0; oy < oy1; ++oy) {
                  const int iy = oy * stride_y - pad_y + ky;
                  const T* g_row = g_ch + static_cast<int64_t>(oy) * Wo;
                  const T* in_row = in_ch + static_cast<int64_t>(iy) * W;
                  if (stride_x == 1) {
                    const int off = kx - pad_x;
                    for (int ox = ox0; ox < ox1; ++ox) acc += g_row[ox] * in_row[ox + off];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox) acc += g_row[ox] * in_row[ox * stride_x - pad_x + kx];
                  }
                }
              }
              dwd[((static_cast<int64_t>(f) * C + c) * kh + ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      T* dbd = bn->grad.data();
      for (int f = 0; f < F; ++f) {
        T acc = 0;
        for (int n = 0; n < N; ++n) {
          const T* g_ch = gd + (static_cast<int64_t>(n) * F + f) * Ho * Wo;
          for (int i = 0; i < Ho * Wo; ++i) acc += g_ch[i];
        }
        dbd[f] += acc;
      }
    }
  };

  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return Var<T>::result(std::move(out), std::move(parents), std::move(fn));
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, int stride, int pad) {
  return conv2d(input, weights, bias, stride, stride, pad, pad);
}

// ---------------------------------------------------------------------------
// deconv2d: transposed convolution, the exact linear adjoint of conv2d with
// the same [F,C,kh,kw] weights. Input has F channels, output has C channels;
// output extent is (H-1)*stride - 2*pad + kh + out_pad with out_pad < stride.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> deconv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, int stride_y, int stride_x,
                int pad_y, int pad_x, int out_pad_y, int out_pad_x) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weights.value();
  detail::op_check(x.rank() == 4, "deconv2d: input must be 4-d, got " + x.shape_str());
  detail::op_check(w.rank() == 4, "deconv2d: weights must be 4-d, got " + w.shape_str());
  detail::op_check(stride_y > 0 && stride_x > 0 && pad_y >= 0 && pad_x >= 0, "deconv2d: bad stride/pad");
  detail::op_check(out_pad_y >= 0 && out_pad_y < stride_y && out_pad_x >= 0 && out_pad_x < stride_x,
                   "deconv2d: output padding must lie in [0, stride)");
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  detail::op_check(w.dim(0) == Ci, "deconv2d: input channels do not match filter layout (input " +
                                       x.shape_str() + ", weights " + w.shape_str() + ")");
  const int Ho = (H - 1) * stride_y - 2 * pad_y + kh + out_pad_y;
  const int Wo = (W - 1) * stride_x - 2 * pad_x + kw + out_pad_x;
  detail::op_check(Ho >= 1 && Wo >= 1, "deconv2d: output would be empty (input " + x.shape_str() + ")");
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::op_check(bias.value().rank() == 1 && bias.value().dim(0) == Co,
                     "deconv2d: bias shape " + bias.value().shape_str() + " does not match channels " +
                         std::to_string(Co));
  }

  Tensor<T> out({N, Co, Ho, Wo});
  {
    const T* xd = x.data();
    const T* wd = w.data();
    const T* bd = has_bias ? bias.value().data() : nullptr;
    T* od = out.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Co; ++co) {
        T* out_ch = od + (static_cast<int64_t>(n) * Co + co) * Ho * Wo;
        const T bval = bd ? bd[co] : T(0);
        for (int i = 0; i < Ho * Wo; ++i) out_ch[i] = bval;
        for (int ci = 0; ci < Ci; ++ci) {
          const T* in_ch = xd + (static_cast<int64_t>(n) * Ci + ci) * H * W;
          const T* w_ch = wd + (static_cast<int64_t>(ci) * Co + co) * kh * kw;
          for (int iy = 0; iy < H; ++iy) {
            for (int ix = 0; ix < W; ++ix) {
              const T a = in_ch[static_cast<int64_t>(iy) * W + ix];
              if (a == T(0)) continue;
              for (int ky = 0; ky < kh; ++ky) {
                const int oy = iy * stride_y - pad_y + ky;
                if (oy < 0 || oy >= Ho) continue;
                T* out_row = out_ch + static_cast<int64_t>(oy) * Wo;
                const T* w_row = w_ch + static_cast<int64_t>(ky) * kw;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ox = ix * stride_x - pad_x + kx;
                  if (ox < 0 || ox >= Wo) continue;
                  out_row[ox] += a * w_row[kx];
                }
              }
            }
          }
        }
      }
    }
  }

  auto xn = input.node();
  auto wn = weights.node();
  auto bn = has_bias ? bias.node() : nullptr;
  auto fn = [xn, wn, bn, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride_y, stride_x, pad_y, pad_x](Node<T>& self) {
    const T* gd = self.grad.data();
    if (xn->requires_grad) {
      // Gradient w.r.t. input is a plain convolution of the output gradient.
      xn->ensure_grad();
      T* dxd = xn->grad.data();
      const T* wd = wn->value.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Ci; ++ci) {
          T* dx_ch = dxd + (static_cast<int64_t>(n) * Ci + ci) * H * W;
          for (int co = 0; co < Co; ++co) {
            const T* g_ch = gd + (static_cast<int64_t>(n) * Co + co) * Ho * Wo;
            const T* w_ch = wd + (static_cast<int64_t>(ci) * Co + co) * kh * kw;
            for (int iy = 0; iy < H; ++iy) {
              for (int ky = 0; ky < kh; ++ky) {
                const int oy = iy * stride_y - pad_y + ky;
                if (oy < 0 || oy >= Ho) continue;
                const T* g_row = g_ch + static_cast<int64_t>(oy) * Wo;
                const T* w_row = w_ch + static_cast<int64_t>(ky) * kw;
                T* dx_row = dx_ch + static_cast<int64_t>(iy) * W;
                for (int ix = 0; ix < W; ++ix) {
                  T acc = 0;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ox = ix * stride_x - pad_x + kx;
                    if (ox < 0 || ox >= Wo) continue;
                    acc += w_row[kx] * g_row[ox];
                  }
                  dx_row[ix] += acc;
                }
              }
            }
          }
        }
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      T* dwd = wn->grad.data();
      const T* xd = xn->value.data();
#pragma omp parallel for schedule(static)
      for (int ci = 0; ci < Ci; ++ci) {
        for (int co = 0; co < Co; ++co) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              T acc = 0;
              for (int n = 0; n < N; ++n) {
                const T* in_ch = xd + (static_cast<int64_t>(n) * Ci + ci) * H * W;
                const T* g_ch = gd + (static_cast<int64_t>(n) * Co + co) * Ho * Wo;
                for (int iy = 0; iy < H; ++iy) {
                  const int oy = iy * stride_y - pad_y + ky;
                  if (oy < 0 || oy >= Ho) continue;
                  const T* in_row = in_ch + static_cast<int64_t>(iy) * W;
                  const T* g_row = g_ch + static_cast<int64_t>(oy) * Wo;
                  for (int ix = 0; ix < W; ++ix) {
                    const int ox = ix * stride_x - pad_x + kx;
                    if (ox < 0 || ox >= Wo) continue;
                    acc += in_row[ix] * g_row[ox];
                  }
                }
              }
              dwd[((static_cast<int64_t>(ci) * Co + co) * kh + ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      T* dbd = bn->grad.data();
      for (int co = 0; co < Co; ++co) {
        T acc = 0;
        for (int n = 0; n < N; ++n) {
          const T* g_ch = gd + (static_cast<int64_t>(n) * Co + co) * Ho * Wo;
          for (int i = 0; i < Ho * Wo; ++i) acc += g_ch[i];
        }
        dbd[co] += acc;
      }
    }
  };

  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return Var<T>::result(std::move(out), std::move(parents), std::move(fn));
}

template <typename T>
Var<T> deconv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, int stride, int pad,
                int out_pad) {
  return deconv2d(input, weights, bias, stride, stride, pad, pad, out_pad, out_pad);
}

// ---------------------------------------------------------------------------
// batchnorm over channel axis 1. Train mode normalizes by batch statistics
// (biased variance) and folds them into the running moments; eval mode uses
// the running moments. The biased convention makes a train-then-eval pass on
// the same batch reproduce itself when momentum is zero.
// ---------------------------------------------------------------------------
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  explicit BatchNormState(int channels = 0) {
    if (channels > 0) {
      running_mean = Tensor<T>({channels});
      running_var = Tensor<T>::full({channels}, T(1));
    }
  }
};

template <typename T>
Var<T> batchnorm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                 Mode mode) {
  const Tensor<T>& x = input.value();
  detail::op_check(x.rank() >= 2, "batchnorm: input must have a channel axis, got " + x.shape_str());
  const int N = x.dim(0);
  const int C = x.dim(1);
  int64_t spatial = 1;
  for (int i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const int64_t count = static_cast<int64_t>(N) * spatial;
  detail::op_check(gamma.value().numel() == C && beta.value().numel() == C,
                   "batchnorm: gamma/beta must have one value per channel");
  detail::op_check(state.running_mean.numel() == C, "batchnorm: state channel count mismatch");

  const T* xd = x.data();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  Tensor<T> out(x.shape());
  T* od = out.data();

  auto mean_data = std::make_shared<Tensor<T>>(Tensor<T>({C}));
  auto istd_data = std::make_shared<Tensor<T>>(Tensor<T>({C}));
  T* mu = mean_data->data();
  T* istd = istd_data->data();

  if (mode == Mode::kTrain) {
    detail::op_check(count >= 2, "batchnorm: train mode needs at least 2 values per channel, got " +
                                     std::to_string(count));
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      T sum = 0;
      for (int n = 0; n < N; ++n) {
        const T* row = xd + (static_cast<int64_t>(n) * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) sum += row[i];
      }
      const T m = sum / static_cast<T>(count);
      T sq = 0;
      for (int n = 0; n < N; ++n) {
        const T* row = xd + (static_cast<int64_t>(n) * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          const T d = row[i] - m;
          sq += d * d;
        }
      }
      const T var = sq / static_cast<T>(count);
      mu[c] = m;
      istd[c] = T(1) / std::sqrt(var + state.eps);
      state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * m;
      state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mu[c] = state.running_mean[c];
      istd[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* row = xd + (static_cast<int64_t>(n) * C + c) * spatial;
      T* orow = od + (static_cast<int64_t>(n) * C + c) * spatial;
      const T m = mu[c], is = istd[c], g = gm[c], b = bt[c];
      for (int64_t i = 0; i < spatial; ++i) orow[i] = g * (row[i] - m) * is + b;
    }
  }

  auto xn = input.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const bool train = mode == Mode::kTrain;
  auto fn = [xn, gn, bn, mean_data, istd_data, N, C, spatial, count, train](Node<T>& self) {
    const T* gd = self.grad.data();
    const T* xd2 = xn->value.data();
    const T* mu2 = mean_data->data();
    const T* istd2 = istd_data->data();
    const T* gm2 = gn->value.data();
    const bool need_dx = xn->requires_grad;
    const bool need_dg = gn->requires_grad;
    const bool need_db = bn->requires_grad;
    if (need_dx) xn->ensure_grad();
    if (need_dg) gn->ensure_grad();
    if (need_db) bn->ensure_grad();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      const T m = mu2[c], is = istd2[c];
      T sum_g = 0, sum_gx = 0;
      for (int n = 0; n < N; ++n) {
        const int64_t base = (static_cast<int64_t>(n) * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          const T xh = (xd2[base + i] - m) * is;
          sum_g += gd[base + i];
          sum_gx += gd[base + i] * xh;
        }
      }
      if (need_dg) gn->grad[c] += sum_gx;
      if (need_db) bn->grad[c] += sum_g;
      if (need_dx) {
        T* dx = xn->grad.data();
        const T scale = gm2[c] * is;
        if (train) {
          const T mg = sum_g / static_cast<T>(count);
          const T mgx = sum_gx / static_cast<T>(count);
          for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * spatial;
            for (int64_t i = 0; i < spatial; ++i) {
              const T xh = (xd2[base + i] - m) * is;
              dx[base + i] += scale * (gd[base + i] - mg - xh * mgx);
            }
          }
        } else {
          for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * spatial;
            for (int64_t i = 0; i < spatial; ++i) dx[base + i] += scale * gd[base + i];
          }
        }
      }
    }
  };

  return Var<T>::result(std::move(out), {xn, gn, bn}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> relu(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  auto xn = input.node();
  auto fn = [xn, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* gd = self.grad.data();
    const T* xd = xn->value.data();
    T* dx = xn->grad.data();
    for (int64_t i = 0; i < n; ++i) {
      if (xd[i] > T(0)) dx[i] += gd[i];
    }
  };
  return Var<T>::result(std::move(out), {xn}, std::move(fn));
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  auto xn = input.node();
  auto fn = [xn, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* gd = self.grad.data();
    const T* yd = self.value.data();
    T* dx = xn->grad.data();
    for (int64_t i = 0; i < n; ++i) dx[i] += gd[i] * yd[i] * (T(1) - yd[i]);
  };
  return Var<T>::result(std::move(out), {xn}, std::move(fn));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::op_check(a.value().same_shape(b.value()), "add: shape mismatch " + a.value().shape_str() + " vs " +
                                                        b.value().shape_str());
  const int64_t n = a.value().numel();
  Tensor<T> out(a.value().shape());
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  auto fn = [an, bn, n](Node<T>& self) {
    const T* gd = self.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      T* da = an->grad.data();
      for (int64_t i = 0; i < n; ++i) da[i] += gd[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      T* db = bn->grad.data();
      for (int64_t i = 0; i < n; ++i) db[i] += gd[i];
    }
  };
  return Var<T>::result(std::move(out), {an, bn}, std::move(fn));
}

template <typename T>
Var<T> reshape(const Var<T>& input, std::vector<int> shape) {
  Tensor<T> out = input.value().reshaped(std::move(shape));
  auto xn = input.node();
  auto fn = [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const int64_t n = self.grad.numel();
    const T* gd = self.grad.data();
    T* dx = xn->grad.data();
    for (int64_t i = 0; i < n; ++i) dx[i] += gd[i];
  };
  return Var<T>::result(std::move(out), {xn}, std::move(fn));
}

// softmax along one axis, computed with max subtraction.
template <typename T>
Var<T> softmax(const Var<T>& input, int axis) {
  const Tensor<T>& x = input.value();
  detail::op_check(axis >= 0 && axis < x.rank(), "softmax: axis out of range for " + x.shape_str());
  const int A = x.dim(axis);
  detail::op_check(A >= 1, "softmax: axis extent must be >= 1");
  int64_t inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t outer = x.numel() / (A * inner);

  Tensor<T> out(x.shape());
  const T* xd = x.data();
  T* od = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * A * inner + i;
      T mx = xd[base];
      for (int a = 1; a < A; ++a) mx = std::max(mx, xd[base + a * inner]);
      T sum = 0;
      for (int a = 0; a < A; ++a) {
        const T e = std::exp(xd[base + a * inner] - mx);
        od[base + a * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int a = 0; a < A; ++a) od[base + a * inner] *= inv;
    }
  }

  auto xn = input.node();
  auto fn = [xn, A, inner, outer](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* gd = self.grad.data();
    const T* pd = self.value.data();
    T* dx = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * A * inner + i;
        T dot = 0;
        for (int a = 0; a < A; ++a) dot += pd[base + a * inner] * gd[base + a * inner];
        for (int a = 0; a < A; ++a) {
          dx[base + a * inner] += pd[base + a * inner] * (gd[base + a * inner] - dot);
        }
      }
    }
  };
  return Var<T>::result(std::move(out), {xn}, std::move(fn));
}

// Affine map of rows: [R,D] x [F,D] (+ bias[F]) -> [R,F].
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weights.value();
  detail::op_check(x.rank() == 2 && w.rank() == 2, "linear: expects 2-d input and weights");
  const int R = x.dim(0), D = x.dim(1), F = w.dim(0);
  detail::op_check(w.dim(1) == D, "linear: feature length mismatch (input " + x.shape_str() + ", weights " +
                                      w.shape_str() + ")");
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::op_check(bias.value().numel() == F, "linear: bias length must equal output features");
  }

  Tensor<T> out({R, F});
  {
    const T* xd = x.data();
    const T* wd = w.data();
    const T* bd = has_bias ? bias.value().data() : nullptr;
    T* od = out.data();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
      const T* xrow = xd + static_cast<int64_t>(r) * D;
      T* orow = od + static_cast<int64_t>(r) * F;
      for (int f = 0; f < F; ++f) {
        const T* wrow = wd + static_cast<int64_t>(f) * D;
        T acc = 0;
        for (int d = 0; d < D; ++d) acc += xrow[d] * wrow[d];
        orow[f] = acc + (bd ? bd[f] : T(0));
      }
    }
  }

  auto xn = input.node();
  auto wn = weights.node();
  auto bn = has_bias ? bias.node() : nullptr;
  auto fn = [xn, wn, bn, R, D, F](Node<T>& self) {
    const T* gd = self.grad.data();
    if (xn->requires_grad) {
      xn->ensure_grad();
      const T* wd = wn->value.data();
      T* dx = xn->grad.data();
#pragma omp parallel for schedule(static)
      for (int r = 0; r < R; ++r) {
        const T* grow = gd + static_cast<int64_t>(r) * F;
        T* dxrow = dx + static_cast<int64_t>(r) * D;
        for (int f = 0; f < F; ++f) {
          const T g = grow[f];
          if (g == T(0)) continue;
          const T* wrow = wd + static_cast<int64_t>(f) * D;
          for (int d = 0; d < D; ++d) dxrow[d] += g * wrow[d];
        }
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      const T* xd = xn->value.data();
      T* dw = wn->grad.data();
#pragma omp parallel for schedule(static)
      for (int f = 0; f < F; ++f) {
        T* dwrow = dw + static_cast<int64_t>(f) * D;
        for (int r = 0; r < R; ++r) {
          const T g = gd[static_cast<int64_t>(r) * F + f];
          if (g == T(0)) continue;
          const T* xrow = xd + static_cast<int64_t>(r) * D;
          for (int d = 0; d < D; ++d) dwrow[d] += g * xrow[d];
        }
      }
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      T* db = bn->grad.data();
      for (int f = 0; f < F; ++f) {
        T acc = 0;
        for (int r = 0; r < R; ++r) acc += gd[static_cast<int64_t>(r) * F + f];
        db[f] += acc;
      }
    }
  };

  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return Var<T>::result(std::move(out), std::move(parents), std::move(fn));
}

// Column slice of a [R,K] matrix: keeps columns [start, start+len).
template <typename T>
Var<T> slice_cols(const Var<T>& input, int start, int len) {
  const Tensor<T>& x = input.value();
  detail::op_check(x.rank() == 2, "slice_cols: expects 2-d input");
  const int R = x.dim(0), K = x.dim(1);
  detail::op_check(start >= 0 && len > 0 && start + len <= K, "slice_cols: range out of bounds");
  Tensor<T> out({R, len});
  for (int r = 0; r < R; ++r) {
    for (int j = 0; j < len; ++j) out[static_cast<int64_t>(r) * len + j] = x[static_cast<int64_t>(r) * K + start + j];
  }
  auto xn = input.node();
  auto fn = [xn, R, K, start, len](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* gd = self.grad.data();
    T* dx = xn->grad.data();
    for (int r = 0; r < R; ++r) {
      for (int j = 0; j < len; ++j) dx[static_cast<int64_t>(r) * K + start + j] += gd[static_cast<int64_t>(r) * len + j];
    }
  };
  return Var<T>::result(std::move(out), {xn}, std::move(fn));
}

template <typename T>
Var<T> sum_all(const Var<T>& input) {
  const int64_t n = input.value().numel();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += input.value()[i];
  auto xn = input.node();
  auto fn = [xn, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T g = self.grad[0];
    T* dx = xn->grad.data();
    for (int64_t i = 0; i < n; ++i) dx[i] += g;
  };
  return Var<T>::result(Tensor<T>::scalar(acc), {xn}, std::move(fn));
}

// Fixed-weight inner product; used to reduce an op output to a scalar for
// gradient verification.
template <typename T>
Var<T> dot_const(const Var<T>& input, Tensor<T> weights) {
  detail::op_check(input.value().numel() == weights.numel(), "dot_const: size mismatch");
  const int64_t n = weights.numel();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += input.value()[i] * weights[i];
  auto xn = input.node();
  auto wshared = std::make_shared<Tensor<T>>(std::move(weights));
  auto fn = [xn, wshared, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T g = self.grad[0];
    T* dx = xn->grad.data();
    const T* wd = wshared->data();
    for (int64_t i = 0; i < n; ++i) dx[i] += g * wd[i];
  };
  return Var<T>::result(Tensor<T>::scalar(acc), {xn}, std::move(fn));
}

// Negative log-likelihood of selected probability entries, with the
// probability floored at 1e-12 inside the log.
template <typename T>
Var<T> nll_gather(const Var<T>& probs, std::vector<int64_t> indices) {
  const Tensor<T>& p = probs.value();
  const T floor_p = T(1e-12);
  double acc = 0;
  for (int64_t idx : indices) {
    detail::op_check(idx >= 0 && idx < p.numel(), "nll_gather: index out of range");
    acc -= std::log(std::max(static_cast<double>(p[idx]), static_cast<double>(floor_p)));
  }
  auto pn = probs.node();
  auto idx_shared = std::make_shared<std::vector<int64_t>>(std::move(indices));
  auto fn = [pn, idx_shared, floor_p](Node<T>& self) {
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    const T g = self.grad[0];
    T* dp = pn->grad.data();
    const T* pd = pn->value.data();
    for (int64_t idx : *idx_shared) {
      if (pd[idx] > floor_p) dp[idx] -= g / pd[idx];
    }
  };
  return Var<T>::result(Tensor<T>::scalar(static_cast<T>(acc)), {pn}, std::move(fn));
}

// Smooth L1: quadratic inside |x| < 1, linear outside.
template <typename T>
T soft_l1(T x) {
  const T a = std::abs(x);
  return a < T(1) ? T(0.5) * x * x : a - T(0.5);
}

template <typename T>
T soft_l1_grad(T x) {
  if (x > T(1)) return T(1);
  if (x < T(-1)) return T(-1);
  return x;
}

// Sum of soft_l1(target - pred) over the rows flagged valid.
template <typename T>
Var<T> soft_l1_loss(const Var<T>& pred, Tensor<T> target, std::vector<char> valid) {
  const Tensor<T>& p = pred.value();
  detail::op_check(p.rank() == 2, "soft_l1_loss: expects 2-d predictions");
  detail::op_check(p.same_shape(target), "soft_l1_loss: prediction/target shape mismatch");
  const int R = p.dim(0), K = p.dim(1);
  detail::op_check(static_cast<int>(valid.size()) == R, "soft_l1_loss: valid mask length mismatch");
  double acc = 0;
  for (int r = 0; r < R; ++r) {
    if (!valid[static_cast<size_t>(r)]) continue;
    for (int k = 0; k < K; ++k) {
      const int64_t i = static_cast<int64_t>(r) * K + k;
      acc += static_cast<double>(soft_l1(target[i] - p[i]));
    }
  }
  auto pn = pred.node();
  auto t_shared = std::make_shared<Tensor<T>>(std::move(target));
  auto v_shared = std::make_shared<std::vector<char>>(std::move(valid));
  auto fn = [pn, t_shared, v_shared, R, K](Node<T>& self) {
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    const T g = self.grad[0];
    T* dp = pn->grad.data();
    const T* pd = pn->value.data();
    const T* td = t_shared->data();
    for (int r = 0; r < R; ++r) {
      if (!(*v_shared)[static_cast<size_t>(r)]) continue;
      for (int k = 0; k < K; ++k) {
        const int64_t i = static_cast<int64_t>(r) * K + k;
        dp[i] -= g * soft_l1_grad(td[i] - pd[i]);
      }
    }
  };
  return Var<T>::result(Tensor<T>::scalar(static_cast<T>(acc)), {pn}, std::move(fn));
}

// Weighted sum of scalar variables.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& coeffs) {
  detail::op_check(terms.size() == coeffs.size() && !terms.empty(), "weighted_sum: size mismatch");
  double acc = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  parents.reserve(terms.size());
  for (size_t i = 0; i < terms.size(); ++i) {
    detail::op_check(terms[i].value().numel() == 1, "weighted_sum: terms must be scalar");
    acc += coeffs[i] * static_cast<double>(terms[i].value()[0]);
    parents.push_back(terms[i].node());
  }
  auto coeff_shared = std::make_shared<std::vector<double>>(coeffs);
  auto fn = [coeff_shared](Node<T>& self) {
    const T g = self.grad[0];
    for (size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parents[i];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      p->grad[0] += g * static_cast<T>((*coeff_shared)[i]);
    }
  };
  return Var<T>::result(Tensor<T>::scalar(static_cast<T>(acc)), std::move(parents), std::move(fn));
}

}  // namespace cornerdet
