#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "evade/conv.hpp"
#include "evade/rng.hpp"
#include "evade/tensor.hpp"

namespace evade {

enum class BankKind { kInteraction, kWeighting, kTranslation };

inline const char* bank_kind_name(BankKind k) {
  switch (k) {
    case BankKind::kInteraction: return "interaction";
    case BankKind::kWeighting: return "weighting";
    case BankKind::kTranslation: return "translation";
  }
  return "?";
}

// Binary structure mask for a noisy filter bank, [c_out,c,m,m].
//  - interaction: all entries trainable
//  - weighting:   m=1, only the diagonal theta^k_k
//  - translation: c_out=c, only channel k's middle row/column in filter k
template <typename T>
Tensor<T> bank_mask(BankKind kind, int c, int m, int c_out) {
  if (m < 1 || m % 2 == 0) throw std::invalid_argument("bank_mask: m must be odd");
  if (kind == BankKind::kWeighting && m != 1)
    throw std::invalid_argument("bank_mask: weighting layer requires m = 1");
  if (kind != BankKind::kInteraction && c_out != c)
    throw std::invalid_argument("bank_mask: weighting/translation require c_out = c");
  Tensor<T> mask({c_out, c, m, m});
  const int mid = m / 2;
  for (int k = 0; k < c_out; ++k)
    for (int l = 0; l < c; ++l)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          bool in = false;
          switch (kind) {
            case BankKind::kInteraction: in = true; break;
            case BankKind::kWeighting: in = (l == k); break;
            case BankKind::kTranslation: in = (l == k) && (i == mid || j == mid); break;
          }
          mask[((static_cast<std::size_t>(k) * c + l) * m + i) * m + j] = in ? T(1) : T(0);
        }
  return mask;
}

// Mean parameters, dropout scales and the fixed structure mask of one
// noisy convolutional layer. theta/sigma are zero wherever mask is zero.
template <typename T>
struct NoisyFilterBank {
  BankKind kind = BankKind::kInteraction;
  int c = 0;      // input channels
  int m = 0;      // odd kernel size
  int c_out = 0;  // output channels (== c except for interaction banks)
  Tensor<T> theta;
  Tensor<T> sigma;
  Tensor<T> mask;

  void validate_input(const Tensor<T>& x) const {
    const bool batched = x.ndim() == 4;
    if (!batched && x.ndim() != 3)
      throw std::invalid_argument("bank forward: input must be [c,H,W] or [N,c,H,W]");
    if (x.dim(batched ? 1 : 0) != c)
      throw std::invalid_argument("bank forward: channel mismatch");
  }
};

// Identity configuration (sigma = 0, theta = centred one-hot diagonal):
// the layer computes f(x) = x exactly.
template <typename T>
NoisyFilterBank<T> identity_config(BankKind kind, int c, int m) {
  NoisyFilterBank<T> b;
  b.kind = kind;
  b.c = c;
  b.m = m;
  b.c_out = c;
  b.mask = bank_mask<T>(kind, c, m, c);
  b.theta = Tensor<T>::zeros({c, c, m, m});
  b.sigma = Tensor<T>::zeros({c, c, m, m});
  const int mid = m / 2;
  for (int k = 0; k < c; ++k)
    b.theta[((static_cast<std::size_t>(k) * c + k) * m + mid) * m + mid] = T(1);
  return b;
}

// Default trainable bank: theta at the identity configuration so freshly
// inserted layers leave the host network unchanged, sigma_init on every
// masked-in entry.
template <typename T>
NoisyFilterBank<T> make_bank(BankKind kind, int c, int m, T sigma_init, int c_out = -1) {
  if (c_out < 0) c_out = c;
  if (kind == BankKind::kInteraction && c_out != c) {
    NoisyFilterBank<T> b;
    b.kind = kind;
    b.c = c;
    b.m = m;
    b.c_out = c_out;
    b.mask = bank_mask<T>(kind, c, m, c_out);
    b.theta = Tensor<T>::zeros({c_out, c, m, m});
    const int mid = m / 2;
    for (int k = 0; k < c_out; ++k)
      b.theta[((static_cast<std::size_t>(k) * c + k % c) * m + mid) * m + mid] = T(1);
    b.sigma = b.mask * sigma_init;
    return b;
  }
  NoisyFilterBank<T> b = identity_config<T>(kind, c, m);
  b.sigma = b.mask * sigma_init;
  return b;
}

// theta * (1 + sigma .* eps), elementwise.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& theta, const Tensor<T>& sigma, const Tensor<T>& eps) {
  theta.check_same_shape(sigma, "reparameterize");
  theta.check_same_shape(eps, "reparameterize");
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] < T(0)) throw std::invalid_argument("reparameterize: negative sigma");
  Tensor<T> out(theta.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = theta[i] * (T(1) + sigma[i] * eps[i]);
  return out;
}

// One frozen standard-normal draw per masked-in parameter; masked-out
// positions carry eps = 0.
template <typename T>
Tensor<T> draw_epsilon(const NoisyFilterBank<T>& bank, Rng& rng) {
  Tensor<T> eps(bank.theta.shape());
  for (std::size_t i = 0; i < eps.size(); ++i)
    eps[i] = bank.mask[i] != T(0) ? static_cast<T>(rng.normal()) : T(0);
  return eps;
}

template <typename T>
Tensor<T> effective_filters(const NoisyFilterBank<T>& bank, const Tensor<T>& eps) {
  return reparameterize(bank.theta, bank.sigma, eps).hadamard(bank.mask);
}

// y^k_{i,j} = sum_l 1^T (theta~^l_k . P_{x^l_{i,j}}) 1  -- a stride-1 SAME
// convolution with the sampled filters.
template <typename T>
Tensor<T> interaction_forward(const Tensor<T>& x, const NoisyFilterBank<T>& bank,
                              const Tensor<T>& eps) {
  if (bank.kind != BankKind::kInteraction)
    throw std::invalid_argument("interaction_forward: wrong bank kind");
  bank.validate_input(x);
  return conv2d(x, effective_filters(bank, eps), 1, Padding::kSame);
}

// y^k_{i,j} = theta~^k_k * x^k_{i,j}; channels never mix.
template <typename T>
Tensor<T> weighting_forward(const Tensor<T>& x, const NoisyFilterBank<T>& bank,
                            const Tensor<T>& eps) {
  if (bank.kind != BankKind::kWeighting)
    throw std::invalid_argument("weighting_forward: wrong bank kind");
  bank.validate_input(x);
  const Tensor<T> w = effective_filters(bank, eps);
  const bool batched = x.ndim() == 4;
  const int N = batched ? x.dim(0) : 1;
  const int C = bank.c;
  const int HW = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
  Tensor<T> y(x.shape());
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < C; ++k) {
      const T f = w[static_cast<std::size_t>(k) * C + k];
      const std::size_t base = (static_cast<std::size_t>(n) * C + k) * HW;
      for (int i = 0; i < HW; ++i) y[base + i] = x[base + i] * f;
    }
  return y;
}

// Per-channel cross-shaped convolution; zero fill at the borders.
template <typename T>
Tensor<T> translation_forward(const Tensor<T>& x, const NoisyFilterBank<T>& bank,
                              const Tensor<T>& eps) {
  if (bank.kind != BankKind::kTranslation)
    throw std::invalid_argument("translation_forward: wrong bank kind");
  bank.validate_input(x);
  return conv2d(x, effective_filters(bank, eps), 1, Padding::kSame);
}

template <typename T>
Tensor<T> bank_forward(const Tensor<T>& x, const NoisyFilterBank<T>& bank, const Tensor<T>& eps) {
  switch (bank.kind) {
    case BankKind::kInteraction: return interaction_forward(x, bank, eps);
    case BankKind::kWeighting: return weighting_forward(x, bank, eps);
    case BankKind::kTranslation: return translation_forward(x, bank, eps);
  }
  throw std::invalid_argument("bank_forward: bad kind");
}

}  // namespace evade
