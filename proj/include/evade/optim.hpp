#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "evade/tape.hpp"
#include "evade/tensor.hpp"

namespace evade {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> m, v;     // Adam moments
  Tensor<T> mask;     // empty = unstructured
  bool trainable = true;
  bool clamp_nonneg = false;  // dropout scales stay >= 0
};

template <typename T>
class ParamStore {
 public:
  int add(std::string name, Tensor<T> value, Tensor<T> mask = {}, bool trainable = true,
          bool clamp_nonneg = false) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter name " + name);
    Param<T> p;
    p.name = std::move(name);
    p.m = Tensor<T>::zeros(value.shape());
    p.v = Tensor<T>::zeros(value.shape());
    p.value = std::move(value);
    p.mask = std::move(mask);
    p.trainable = trainable;
    p.clamp_nonneg = clamp_nonneg;
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  Param<T>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param<T>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return params_.size(); }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Register one leaf per parameter on the tape; index-aligned with the store.
  std::vector<Var> bind(Tape<T>& tape) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.leaf(p.value));
    return vars;
  }

 private:
  std::vector<Param<T>> params_;
};

template <typename T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Adaptive-moment gradient descent. After every step, masked parameters
// are re-projected onto their structure mask and nonnegative parameters
// are clamped at zero.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  const AdamConfig<T>& config() const { return cfg_; }
  long step_count() const { return t_; }
  void set_state(long t) { t_ = t; }

  void step(ParamStore<T>& store, const Tape<T>& tape, const std::vector<Var>& vars) {
    ++t_;
    const T c1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[static_cast<int>(i)];
      if (!p.trainable) continue;
      const Tensor<T>& g = tape.grad(vars[i]);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        p.m[k] = cfg_.beta1 * p.m[k] + (T(1) - cfg_.beta1) * g[k];
        p.v[k] = cfg_.beta2 * p.v[k] + (T(1) - cfg_.beta2) * g[k] * g[k];
        const T mh = p.m[k] / c1;
        const T vh = p.v[k] / c2;
        p.value[k] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
      if (!p.mask.empty())
        for (std::size_t k = 0; k < p.value.size(); ++k)
          if (p.mask[k] == T(0)) {
            p.value[k] = T(0);
            p.m[k] = T(0);
            p.v[k] = T(0);
          }
      if (p.clamp_nonneg)
        for (auto& x : p.value.vec())
          if (x < T(0)) x = T(0);
    }
  }

 private:
  AdamConfig<T> cfg_;
  long t_ = 0;
};

}  // namespace evade
