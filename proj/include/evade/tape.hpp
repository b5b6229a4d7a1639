#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "evade/conv.hpp"
#include "evade/tensor.hpp"

namespace evade {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Every op records a closure that scatters the output
// gradient into its inputs; backward() replays them newest-first. One tape
// per training step, single-owner.
template <typename T>
class Tape {
 public:
  // grad_enabled=false skips gradient buffers and backward closures;
  // use for pure inference passes.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var leaf(const Tensor<T>& value) { return push(value); }

  const Tensor<T>& val(Var v) const { return nodes_[check(v)].value; }
  const Tensor<T>& grad(Var v) const { return nodes_[check(v)].grad; }

  void backward(Var loss) {
    auto& n = nodes_[check(loss)];
    if (n.value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    n.grad[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    val(a).check_same_shape(val(b), "add");
    Tensor<T> out = val(a) + val(b);
    Var y = push(std::move(out));
    record(y, [this, a, b, y] {
      accum(a, gref(y));
      accum(b, gref(y));
    });
    return y;
  }

  Var sub(Var a, Var b) {
    val(a).check_same_shape(val(b), "sub");
    Tensor<T> out = val(a) - val(b);
    Var y = push(std::move(out));
    record(y, [this, a, b, y] {
      accum(a, gref(y));
      auto& ga = gmut(b);
      const auto& gy = gref(y);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= gy[i];
    });
    return y;
  }

  Var mul(Var a, Var b) {
    val(a).check_same_shape(val(b), "mul");
    Var y = push(val(a).hadamard(val(b)));
    record(y, [this, a, b, y] {
      const auto& gy = gref(y);
      auto& ga = gmut(a);
      auto& gb = gmut(b);
      const auto& va = val(a);
      const auto& vb = val(b);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * vb[i];
        gb[i] += gy[i] * va[i];
      }
    });
    return y;
  }

  Var scale(Var a, T s) {
    Var y = push(val(a) * s);
    record(y, [this, a, y, s] {
      auto& ga = gmut(a);
      const auto& gy = gref(y);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * s;
    });
    return y;
  }

  Var add_const(Var a, T c) {
    Tensor<T> out = val(a);
    for (auto& x : out.vec()) x += c;
    Var y = push(std::move(out));
    record(y, [this, a, y] { accum(a, gref(y)); });
    return y;
  }

  Var relu(Var a) {
    Tensor<T> out = val(a);
    for (auto& x : out.vec()) x = x > T(0) ? x : T(0);
    Var y = push(std::move(out));
    record(y, [this, a, y] {
      auto& ga = gmut(a);
      const auto& gy = gref(y);
      const auto& va = val(a);
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (va[i] > T(0)) ga[i] += gy[i];
    });
    return y;
  }

  Var mask_mul(Var a, const Tensor<T>& mask) {
    val(a).check_same_shape(mask, "mask_mul");
    Var y = push(val(a).hadamard(mask));
    record(y, [this, a, y, mask] {
      auto& ga = gmut(a);
      const auto& gy = gref(y);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * mask[i];
    });
    return y;
  }

  // theta * (1 + sigma .* eps); eps is a frozen constant.
  Var reparam(Var theta, Var sigma, const Tensor<T>& eps) {
    val(theta).check_same_shape(val(sigma), "reparam");
    val(theta).check_same_shape(eps, "reparam");
    const auto& th = val(theta);
    const auto& sg = val(sigma);
    Tensor<T> out(th.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = th[i] * (T(1) + sg[i] * eps[i]);
    Var y = push(std::move(out));
    record(y, [this, theta, sigma, eps, y] {
      const auto& gy = gref(y);
      const auto& th = val(theta);
      const auto& sg = val(sigma);
      auto& gt = gmut(theta);
      auto& gs = gmut(sigma);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gt[i] += gy[i] * (T(1) + sg[i] * eps[i]);
        gs[i] += gy[i] * th[i] * eps[i];
      }
    });
    return y;
  }

  Var reshape(Var a, Shape s) {
    Var y = push(val(a).reshaped(std::move(s)));
    record(y, [this, a, y] {
      auto& ga = gmut(a);
      const auto& gy = gref(y);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    });
    return y;
  }

  // ---- reductions ----

  Var sum(Var a) {
    Var y = push(Tensor<T>({1}, std::vector<T>{val(a).sum()}));
    record(y, [this, a, y] {
      auto& ga = gmut(a);
      const T g = gref(y)[0];
      for (auto& x : ga.vec()) x += g;
    });
    return y;
  }

  Var mean(Var a) {
    const T inv = T(1) / static_cast<T>(val(a).size());
    Var y = push(Tensor<T>({1}, std::vector<T>{val(a).sum() * inv}));
    record(y, [this, a, y, inv] {
      auto& ga = gmut(a);
      const T g = gref(y)[0] * inv;
      for (auto& x : ga.vec()) x += g;
    });
    return y;
  }

  // ---- dense / batch ops ----

  // x[N,In] * w[Out,In]^T + b[Out] -> [N,Out]
  Var dense(Var x, Var w, Var b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const auto& bv = val(b);
    if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1 || xv.dim(1) != wv.dim(1) ||
        wv.dim(0) != bv.dim(0))
      throw std::invalid_argument("dense: shape mismatch");
    const int N = xv.dim(0), In = xv.dim(1), Out = wv.dim(0);
    Tensor<T> out({N, Out});
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Out; ++o) {
        T acc = bv[o];
        for (int i = 0; i < In; ++i) acc += xv[n * In + i] * wv[o * In + i];
        out[n * Out + o] = acc;
      }
    Var y = push(std::move(out));
    record(y, [this, x, w, b, y, N, In, Out] {
      const auto& gy = gref(y);
      const auto& xv = val(x);
      const auto& wv = val(w);
      auto& gx = gmut(x);
      auto& gw = gmut(w);
      auto& gb = gmut(b);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o) {
          const T g = gy[n * Out + o];
          gb[o] += g;
          for (int i = 0; i < In; ++i) {
            gx[n * In + i] += g * wv[o * In + i];
            gw[o * In + i] += g * xv[n * In + i];
          }
        }
    });
    return y;
  }

  Var slice_cols(Var x, int begin, int end) {
    const auto& xv = val(x);
    if (xv.ndim() != 2 || begin < 0 || end > xv.dim(1) || begin >= end)
      throw std::invalid_argument("slice_cols: bad range");
    const int N = xv.dim(0), M = xv.dim(1), C = end - begin;
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) out[n * C + c] = xv[n * M + begin + c];
    Var y = push(std::move(out));
    record(y, [this, x, y, begin, N, M, C] {
      auto& gx = gmut(x);
      const auto& gy = gref(y);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) gx[n * M + begin + c] += gy[n * C + c];
    });
    return y;
  }

  // y[n,c,i,j] = x[n,c,i,j] + b[c]
  Var bias_channels(Var x, Var b) {
    const auto& xv = val(x);
    const auto& bv = val(b);
    if (xv.ndim() != 4 || bv.ndim() != 1 || bv.dim(0) != xv.dim(1))
      throw std::invalid_argument("bias_channels: shape mismatch");
    const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor<T> out = xv;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        for (int k = 0; k < HW; ++k) out[base + k] += bv[c];
      }
    Var y = push(std::move(out));
    record(y, [this, x, b, y, N, C, HW] {
      const auto& gy = gref(y);
      auto& gx = gmut(x);
      auto& gb = gmut(b);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
          T acc = 0;
          for (int k = 0; k < HW; ++k) {
            gx[base + k] += gy[base + k];
            acc += gy[base + k];
          }
          gb[c] += acc;
        }
    });
    return y;
  }

  // y[n,c,i,j] = x[n,c,i,j] * s[n,c] + b[n,c]
  Var channel_affine(Var x, Var s, Var b) {
    const auto& xv = val(x);
    const auto& sv = val(s);
    if (xv.ndim() != 4 || sv.ndim() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != xv.dim(1))
      throw std::invalid_argument("channel_affine: shape mismatch");
    val(s).check_same_shape(val(b), "channel_affine");
    const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    const auto& bv = val(b);
    Tensor<T> out(xv.shape());
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T sc = sv[n * C + c], of = bv[n * C + c];
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        for (int k = 0; k < HW; ++k) out[base + k] = xv[base + k] * sc + of;
      }
    Var y = push(std::move(out));
    record(y, [this, x, s, b, y, N, C, HW] {
      const auto& gy = gref(y);
      const auto& xv = val(x);
      const auto& sv = val(s);
      auto& gx = gmut(x);
      auto& gs = gmut(s);
      auto& gb = gmut(b);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T sc = sv[n * C + c];
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
          T accs = 0, accb = 0;
          for (int k = 0; k < HW; ++k) {
            const T g = gy[base + k];
            gx[base + k] += g * sc;
            accs += g * xv[base + k];
            accb += g;
          }
          gs[n * C + c] += accs;
          gb[n * C + c] += accb;
        }
    });
    return y;
  }

  // ---- convolutions ----

  Var conv2d(Var x, Var w, int stride, Padding pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    Tensor<T> out = evade::conv2d(xv, wv, stride, pad);
    const bool batched = xv.ndim() == 4;
    const auto g = kernels::make_geom(batched ? xv.dim(0) : 1, xv.dim(batched ? 1 : 0),
                                      xv.dim(batched ? 2 : 1), xv.dim(batched ? 3 : 2), wv.dim(0),
                                      wv.dim(2), stride, pad);
    Var y = push(std::move(out));
    record(y, [this, x, w, y, g] {
      kernels::conv_backward_input(gref(y).data(), val(w).data(), gmut(x).data(), g);
      kernels::conv_backward_filter(val(x).data(), gref(y).data(), gmut(w).data(), g);
    });
    return y;
  }

  Var conv2d_transpose(Var x, Var w, int stride) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    Tensor<T> out = evade::conv2d_transpose(xv, wv, stride);
    const auto g = kernels::make_geom(xv.dim(0), wv.dim(1), xv.dim(2) * stride,
                                      xv.dim(3) * stride, xv.dim(1), wv.dim(2), stride,
                                      Padding::kSame);
    Var y = push(std::move(out));
    record(y, [this, x, w, y, g] {
      // Virtual forward maps the upsampled grid back down; see conv.hpp.
      kernels::conv_forward(gref(y).data(), val(w).data(), gmut(x).data(), g);
      kernels::conv_backward_filter(gref(y).data(), val(x).data(), gmut(w).data(), g);
    });
    return y;
  }

  // ---- losses ----

  // Mean elementwise sigmoid cross-entropy against {0,1} targets.
  Var bce_logits_mean(Var logits, const Tensor<T>& targets) {
    const auto& z = val(logits);
    z.check_same_shape(targets, "bce_logits_mean");
    const T inv = T(1) / static_cast<T>(z.size());
    T loss = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const T zi = z[i];
      loss += std::max(zi, T(0)) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    Var y = push(Tensor<T>({1}, std::vector<T>{loss * inv}));
    record(y, [this, logits, targets, y, inv] {
      const T g = gref(y)[0] * inv;
      const auto& z = val(logits);
      auto& gz = gmut(logits);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-z[i]));
        gz[i] += g * (s - targets[i]);
      }
    });
    return y;
  }

  // Mean categorical cross-entropy of logits[N,K] against integer labels.
  Var softmax_ce_mean(Var logits, const std::vector<int>& labels) {
    const auto& z = val(logits);
    if (z.ndim() != 2 || static_cast<std::size_t>(z.dim(0)) != labels.size())
      throw std::invalid_argument("softmax_ce_mean: shape mismatch");
    const int N = z.dim(0), K = z.dim(1);
    Tensor<T> lsm = log_softmax_values(z);
    T loss = 0;
    for (int n = 0; n < N; ++n) loss -= lsm[n * K + labels[n]];
    Var y = push(Tensor<T>({1}, std::vector<T>{loss / static_cast<T>(N)}));
    record(y, [this, logits, labels, y, lsm, N, K] {
      const T g = gref(y)[0] / static_cast<T>(N);
      auto& gz = gmut(logits);
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
          gz[n * K + k] += g * (std::exp(lsm[n * K + k]) - (k == labels[n] ? T(1) : T(0)));
    });
    return y;
  }

  Var mse_mean(Var pred, const Tensor<T>& target) {
    const auto& p = val(pred);
    p.check_same_shape(target, "mse_mean");
    const T inv = T(1) / static_cast<T>(p.size());
    T loss = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T d = p[i] - target[i];
      loss += d * d;
    }
    Var y = push(Tensor<T>({1}, std::vector<T>{loss * inv}));
    record(y, [this, pred, target, y, inv] {
      const T g = gref(y)[0] * inv * T(2);
      const auto& p = val(pred);
      auto& gp = gmut(pred);
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * (p[i] - target[i]);
    });
    return y;
  }

  Var log_softmax(Var logits) {
    const auto& z = val(logits);
    if (z.ndim() != 2) throw std::invalid_argument("log_softmax: expect [N,K]");
    const int N = z.dim(0), K = z.dim(1);
    Var y = push(log_softmax_values(z));
    record(y, [this, logits, y, N, K] {
      const auto& gy = gref(y);
      const auto& lsm = val(y);
      auto& gz = gmut(logits);
      for (int n = 0; n < N; ++n) {
        T rowsum = 0;
        for (int k = 0; k < K; ++k) rowsum += gy[n * K + k];
        for (int k = 0; k < K; ++k)
          gz[n * K + k] += gy[n * K + k] - std::exp(lsm[n * K + k]) * rowsum;
      }
    });
    return y;
  }

  Var gather_rows(Var x, const std::vector<int>& idx) {
    const auto& xv = val(x);
    if (xv.ndim() != 2 || static_cast<std::size_t>(xv.dim(0)) != idx.size())
      throw std::invalid_argument("gather_rows: shape mismatch");
    const int N = xv.dim(0), K = xv.dim(1);
    Tensor<T> out({N});
    for (int n = 0; n < N; ++n) out[n] = xv[n * K + idx[n]];
    Var y = push(std::move(out));
    record(y, [this, x, y, idx, N, K] {
      auto& gx = gmut(x);
      const auto& gy = gref(y);
      for (int n = 0; n < N; ++n) gx[n * K + idx[n]] += gy[n];
    });
    return y;
  }

  // Negated clipped-surrogate objective, averaged over the batch.
  // lp holds new log-probs of the taken actions; old log-probs and
  // advantages are frozen.
  Var ppo_clip_mean(Var lp, const Tensor<T>& lp_old, const Tensor<T>& adv, T clip) {
    const auto& p = val(lp);
    p.check_same_shape(lp_old, "ppo_clip_mean");
    p.check_same_shape(adv, "ppo_clip_mean");
    const int N = static_cast<int>(p.size());
    const T inv = T(1) / static_cast<T>(N);
    T loss = 0;
    for (int n = 0; n < N; ++n) {
      const T r = std::exp(p[n] - lp_old[n]);
      const T rc = std::min(std::max(r, T(1) - clip), T(1) + clip);
      loss -= std::min(r * adv[n], rc * adv[n]);
    }
    Var y = push(Tensor<T>({1}, std::vector<T>{loss * inv}));
    record(y, [this, lp, lp_old, adv, clip, y, N, inv] {
      const T g = gref(y)[0] * inv;
      const auto& p = val(lp);
      auto& gp = gmut(lp);
      for (int n = 0; n < N; ++n) {
        const T r = std::exp(p[n] - lp_old[n]);
        const T rc = std::min(std::max(r, T(1) - clip), T(1) + clip);
        const T unclipped = r * adv[n];
        const T clipped = rc * adv[n];
        // Ties resolve to the unclipped branch; the clipped branch only
        // contributes gradient while r is inside the band.
        if (unclipped <= clipped)
          gp[n] -= g * adv[n] * r;
        else if (r > T(1) - clip && r < T(1) + clip)
          gp[n] -= g * adv[n] * r;
      }
    });
    return y;
  }

  // Mean policy entropy of logits[N,K].
  Var entropy_mean(Var logits) {
    const auto& z = val(logits);
    if (z.ndim() != 2) throw std::invalid_argument("entropy_mean: expect [N,K]");
    const int N = z.dim(0), K = z.dim(1);
    Tensor<T> lsm = log_softmax_values(z);
    T h = 0;
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) h -= std::exp(lsm[n * K + k]) * lsm[n * K + k];
    Var y = push(Tensor<T>({1}, std::vector<T>{h / static_cast<T>(N)}));
    record(y, [this, logits, y, lsm, N, K] {
      const T g = gref(y)[0] / static_cast<T>(N);
      auto& gz = gmut(logits);
      for (int n = 0; n < N; ++n) {
        T hn = 0;
        for (int k = 0; k < K; ++k) hn -= std::exp(lsm[n * K + k]) * lsm[n * K + k];
        for (int k = 0; k < K; ++k) {
          const T pk = std::exp(lsm[n * K + k]);
          gz[n * K + k] += g * (-pk * (lsm[n * K + k] + hn));
        }
      }
    });
    return y;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> back;
  };

  static Tensor<T> log_softmax_values(const Tensor<T>& z) {
    const int N = z.dim(0), K = z.dim(1);
    Tensor<T> lsm(z.shape());
    for (int n = 0; n < N; ++n) {
      T mx = z[n * K];
      for (int k = 1; k < K; ++k) mx = std::max(mx, z[n * K + k]);
      T se = 0;
      for (int k = 0; k < K; ++k) se += std::exp(z[n * K + k] - mx);
      const T lse = mx + std::log(se);
      for (int k = 0; k < K; ++k) lsm[n * K + k] = z[n * K + k] - lse;
    }
    return lsm;
  }

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("invalid Var");
    return v.id;
  }

  Var push(Tensor<T> value) {
    Node n;
    if (grad_enabled_) n.grad = Tensor<T>::zeros(value.shape());
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void record(Var y, std::function<void()> back) {
    if (grad_enabled_) nodes_[y.id].back = std::move(back);
  }

  const Tensor<T>& gref(Var v) const { return nodes_[v.id].grad; }
  Tensor<T>& gmut(Var v) { return nodes_[v.id].grad; }
  void accum(Var v, const Tensor<T>& g) {
    auto& dst = gmut(v);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
};

// Max relative error between the tape gradient of f and central finite
// differences with step h. f builds a scalar from the leaf it is given.
template <typename F>
double grad_check(F f, const Tensor<double>& x, double h = 1e-5) {
  Tape<double> tape;
  Var vx = tape.leaf(x);
  Var loss = f(tape, vx);
  if (tape.val(loss).size() != 1) throw std::invalid_argument("grad_check: f must be scalar");
  tape.backward(loss);
  const Tensor<double> analytic = tape.grad(vx);

  double max_err = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    Tape<double> tp, tm;
    const double fp = tp.val(f(tp, tp.leaf(xp)))[0];
    const double fm = tm.val(f(tm, tm.leaf(xm)))[0];
    const double numeric = (fp - fm) / (2 * h);
    max_err = std::max(max_err,
                       std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return max_err;
}

}  // namespace evade
