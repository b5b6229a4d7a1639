#pragma once

#include <stdexcept>

#include "evade/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace evade {

enum class Padding { kSame, kValid };

namespace kernels {

// Runtime switch between the OpenMP kernels and the serial reference path.
// Both produce bit-identical results; every output element is accumulated
// in a fixed serial order regardless of thread count.
inline bool& parallel_enabled() {
  static bool enabled = true;
  return enabled;
}

struct ConvGeom {
  int N, Cin, H, W, Cout, K, stride;
  int Hout, Wout, pad_top, pad_left;
};

inline ConvGeom make_geom(int N, int Cin, int H, int W, int Cout, int K, int stride, Padding pad) {
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  if (K < 1) throw std::invalid_argument("conv: kernel size must be >= 1");
  ConvGeom g{N, Cin, H, W, Cout, K, stride, 0, 0, 0, 0};
  if (pad == Padding::kSame) {
    if (K % 2 == 0) throw std::invalid_argument("conv: SAME padding requires odd kernel size");
    g.Hout = (H + stride - 1) / stride;
    g.Wout = (W + stride - 1) / stride;
    g.pad_top = std::max((g.Hout - 1) * stride + K - H, 0) / 2;
    g.pad_left = std::max((g.Wout - 1) * stride + K - W, 0) / 2;
  } else {
    if (H < K || W < K) throw std::invalid_argument("conv: input smaller than kernel with VALID padding");
    g.Hout = (H - K) / stride + 1;
    g.Wout = (W - K) / stride + 1;
  }
  return g;
}

// y[n,co,ho,wo] = sum_{ci,ki,kj} x[n,ci,ho*s+ki-pt,wo*s+kj-pl] * w[co,ci,ki,kj]
// Out-of-bounds taps read zero.
template <typename T>
void conv_forward_serial(const T* x, const T* w, T* y, const ConvGeom& g) {
  for (int n = 0; n < g.N; ++n)
    for (int co = 0; co < g.Cout; ++co)
      for (int ho = 0; ho < g.Hout; ++ho)
        for (int wo = 0; wo < g.Wout; ++wo) {
          T acc = 0;
          for (int ci = 0; ci < g.Cin; ++ci)
            for (int ki = 0; ki < g.K; ++ki) {
              const int h = ho * g.stride + ki - g.pad_top;
              if (h < 0 || h >= g.H) continue;
              for (int kj = 0; kj < g.K; ++kj) {
                const int ww = wo * g.stride + kj - g.pad_left;
                if (ww < 0 || ww >= g.W) continue;
                acc += x[((static_cast<std::size_t>(n) * g.Cin + ci) * g.H + h) * g.W + ww] *
                       w[((static_cast<std::size_t>(co) * g.Cin + ci) * g.K + ki) * g.K + kj];
              }
            }
          y[((static_cast<std::size_t>(n) * g.Cout + co) * g.Hout + ho) * g.Wout + wo] += acc;
        }
}

template <typename T>
void conv_forward_omp(const T* x, const T* w, T* y, const ConvGeom& g) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.N; ++n)
    for (int co = 0; co < g.Cout; ++co)
      for (int ho = 0; ho < g.Hout; ++ho)
        for (int wo = 0; wo < g.Wout; ++wo) {
          T acc = 0;
          for (int ci = 0; ci < g.Cin; ++ci)
            for (int ki = 0; ki < g.K; ++ki) {
              const int h = ho * g.stride + ki - g.pad_top;
              if (h < 0 || h >= g.H) continue;
              for (int kj = 0; kj < g.K; ++kj) {
                const int ww = wo * g.stride + kj - g.pad_left;
                if (ww < 0 || ww >= g.W) continue;
                acc += x[((static_cast<std::size_t>(n) * g.Cin + ci) * g.H + h) * g.W + ww] *
                       w[((static_cast<std::size_t>(co) * g.Cin + ci) * g.K + ki) * g.K + kj];
              }
            }
          y[((static_cast<std::size_t>(n) * g.Cout + co) * g.Hout + ho) * g.Wout + wo] += acc;
        }
}

// gx[n,ci,h,w] += sum_{co,ki,kj : taps align} gy[n,co,ho,wo] * w[co,ci,ki,kj]
// Gather form: each input element is produced by a single fixed-order sum.
template <typename T>
void conv_backward_input_serial(const T* gy, const T* w, T* gx, const ConvGeom& g) {
  for (int n = 0; n < g.N; ++n)
    for (int ci = 0; ci < g.Cin; ++ci)
      for (int h = 0; h < g.H; ++h)
        for (int ww = 0; ww < g.W; ++ww) {
          T acc = 0;
          for (int co = 0; co < g.Cout; ++co)
            for (int ki = 0; ki < g.K; ++ki) {
              const int hs = h + g.pad_top - ki;
              if (hs < 0 || hs % g.stride != 0) continue;
              const int ho = hs / g.stride;
              if (ho >= g.Hout) continue;
              for (int kj = 0; kj < g.K; ++kj) {
                const int ws = ww + g.pad_left - kj;
                if (ws < 0 || ws % g.stride != 0) continue;
                const int wo = ws / g.stride;
                if (wo >= g.Wout) continue;
                acc += gy[((static_cast<std::size_t>(n) * g.Cout + co) * g.Hout + ho) * g.Wout + wo] *
                       w[((static_cast<std::size_t>(co) * g.Cin + ci) * g.K + ki) * g.K + kj];
              }
            }
          gx[((static_cast<std::size_t>(n) * g.Cin + ci) * g.H + h) * g.W + ww] += acc;
        }
}

template <typename T>
void conv_backward_input_omp(const T* gy, const T* w, T* gx, const ConvGeom& g) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.N; ++n)
    for (int ci = 0; ci < g.Cin; ++ci)
      for (int h = 0; h < g.H; ++h)
        for (int ww = 0; ww < g.W; ++ww) {
          T acc = 0;
          for (int co = 0; co < g.Cout; ++co)
            for (int ki = 0; ki < g.K; ++ki) {
              const int hs = h + g.pad_top - ki;
              if (hs < 0 || hs % g.stride != 0) continue;
              const int ho = hs / g.stride;
              if (ho >= g.Hout) continue;
              for (int kj = 0; kj < g.K; ++kj) {
                const int ws = ww + g.pad_left - kj;
                if (ws < 0 || ws % g.stride != 0) continue;
                const int wo = ws / g.stride;
                if (wo >= g.Wout) continue;
                acc += gy[((static_cast<std::size_t>(n) * g.Cout + co) * g.Hout + ho) * g.Wout + wo] *
                       w[((static_cast<std::size_t>(co) * g.Cin + ci) * g.K + ki) * g.K + kj];
              }
            }
          gx[((static_cast<std::size_t>(n) * g.Cin + ci) * g.H + h) * g.W + ww] += acc;
        }
}

// gw[co,ci,ki,kj] += sum_{n,ho,wo} x[n,ci,ho*s+ki-pt,wo*s+kj-pl] * gy[n,co,ho,wo]
template <typename T>
void conv_backward_filter_serial(const T* x, const T* gy, T* gw, const ConvGeom& g) {
  for (int co = 0; co < g.Cout; ++co)
    for (int ci = 0; ci < g.Cin; ++ci)
      for (int ki = 0; ki < g.K; ++ki)
        for (int kj = 0; kj < g.K; ++kj) {
          T acc = 0;
          for (int n = 0; n < g.N; ++n)
            for (int ho = 0; ho < g.Hout; ++ho) {
              const int h = ho * g.stride + ki - g.pad_top;
              if (h < 0 || h >= g.H) continue;
              for (int wo = 0; wo < g.Wout; ++wo) {
                const int ww = wo * g.stride + kj - g.pad_left;
                if (ww < 0 || ww >= g.W) continue;
                acc += x[((static_cast<std::size_t>(n) * g.Cin + ci) * g.H + h) * g.W + ww] *
                       gy[((static_cast<std::size_t>(n) * g.Cout + co) * g.Hout + ho) * g.Wout + wo];
              }
            }
          gw[((static_cast<std::size_t>(co) * g.Cin + ci) * g.K + ki) * g.K + kj] += acc;
        }
}

template <typename T>
void conv_backward_filter_omp(const T* x, const T* gy, T* gw, const ConvGeom& g) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.Cout; ++co)
    for (int ci = 0; ci < g.Cin; ++ci)
      for (int ki = 0; ki < g.K; ++ki)
        for (int kj = 0; kj < g.K; ++kj) {
          T acc = 0;
          for (int n = 0; n < g.N; ++n)
            for (int ho = 0; ho < g.Hout; ++ho) {
              const int h = ho * g.stride + ki - g.pad_top;
              if (h < 0 || h >= g.H) continue;
              for (int wo = 0; wo < g.Wout; ++wo) {
                const int ww = wo * g.stride + kj - g.pad_left;
                if (ww < 0 || ww >= g.W) continue;
                acc += x[((static_cast<std::size_t>(n) * g.Cin + ci) * g.H + h) * g.W + ww] *
                       gy[((static_cast<std::size_t>(n) * g.Cout + co) * g.Hout + ho) * g.Wout + wo];
              }
            }
          gw[((static_cast<std::size_t>(co) * g.Cin + ci) * g.K + ki) * g.K + kj] += acc;
        }
}

template <typename T>
void conv_forward(const T* x, const T* w, T* y, const ConvGeom& g) {
  if (parallel_enabled())
    conv_forward_omp(x, w, y, g);
  else
    conv_forward_serial(x, w, y, g);
}

template <typename T>
void conv_backward_input(const T* gy, const T* w, T* gx, const ConvGeom& g) {
  if (parallel_enabled())
    conv_backward_input_omp(gy, w, gx, g);
  else
    conv_backward_input_serial(gy, w, gx, g);
}

template <typename T>
void conv_backward_filter(const T* x, const T* gy, T* gw, const ConvGeom& g) {
  if (parallel_enabled())
    conv_backward_filter_omp(x, gy, gw, g);
  else
    conv_backward_filter_serial(x, gy, gw, g);
}

}  // namespace kernels

// conv2d on [Cin,H,W] or [N,Cin,H,W] input with filters [Cout,Cin,K,K].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& filters, int stride, Padding pad) {
  if (filters.ndim() != 4 || filters.dim(2) != filters.dim(3))
    throw std::invalid_argument("conv2d: filters must be [Cout,Cin,K,K]");
  const bool batched = input.ndim() == 4;
  if (!batched && input.ndim() != 3)
    throw std::invalid_argument("conv2d: input must be [Cin,H,W] or [N,Cin,H,W]");
  const int N = batched ? input.dim(0) : 1;
  const int Cin = input.dim(batched ? 1 : 0);
  const int H = input.dim(batched ? 2 : 1);
  const int W = input.dim(batched ? 3 : 2);
  if (filters.dim(1) != Cin)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(Cin) +
                                " do not match filter channels " + std::to_string(filters.dim(1)));
  const auto g = kernels::make_geom(N, Cin, H, W, filters.dim(0), filters.dim(2), stride, pad);
  Tensor<T> out(batched ? Shape{N, g.Cout, g.Hout, g.Wout} : Shape{g.Cout, g.Hout, g.Wout});
  kernels::conv_forward(input.data(), filters.data(), out.data(), g);
  return out;
}

// Transposed conv: input [N,Cin,H,W], weights [Cin,Cout,K,K], output
// [N,Cout,H*s,W*s]. Equivalent to the input-gradient of a stride-s SAME
// conv mapping [N,Cout,H*s,W*s] -> [N,Cin,H,W].
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& weights, int stride) {
  if (input.ndim() != 4) throw std::invalid_argument("conv2d_transpose: input must be [N,Cin,H,W]");
  if (weights.ndim() != 4 || weights.dim(2) != weights.dim(3))
    throw std::invalid_argument("conv2d_transpose: weights must be [Cin,Cout,K,K]");
  if (weights.dim(0) != input.dim(1))
    throw std::invalid_argument("conv2d_transpose: channel mismatch");
  const int N = input.dim(0), Cout = weights.dim(1);
  const int Hup = input.dim(2) * stride, Wup = input.dim(3) * stride;
  const auto g = kernels::make_geom(N, Cout, Hup, Wup, input.dim(1), weights.dim(2), stride,
                                    Padding::kSame);
  Tensor<T> out({N, Cout, Hup, Wup});
  kernels::conv_backward_input(input.data(), weights.data(), out.data(), g);
  return out;
}

}  // namespace evade
