#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evade/env.hpp"
#include "evade/optim.hpp"
#include "evade/tape.hpp"

namespace evade {

template <typename T>
struct PolicyConfig {
  int ch1 = 8;
  int ch2 = 8;
  int hidden = 32;
  T clip = T(0.2);
  T gamma = T(0.99);
  T entropy_coef = T(0.01);
  T value_coef = T(0.5);
  // few, large-batch updates per iteration; needs a hotter lr than the model
  AdamConfig<T> adam = {T(2e-2)};
};

// Small actor-critic conv net over stacked frames: two stride-2 convs,
// a shared dense trunk, then action-logit and state-value heads.
template <typename T>
class PolicyNet {
 public:
  PolicyNet(EnvSpec env, PolicyConfig<T> cfg, Rng& rng)
      : env_(std::move(env)), cfg_(cfg), optimizer_(cfg.adam) {
    if (env_.H % 4 != 0 || env_.W % 4 != 0)
      throw std::invalid_argument("policy: H and W must be divisible by 4");
    const int FC = env_.F * env_.C;
    add_conv("p1", cfg_.ch1, FC, 3, rng);
    add_conv("p2", cfg_.ch2, cfg_.ch1, 3, rng);
    const int flat = cfg_.ch2 * (env_.H / 4) * (env_.W / 4);
    add_dense("trunk", cfg_.hidden, flat, rng);
    add_dense("pi", env_.num_actions(), cfg_.hidden, rng);
    add_dense("vf", 1, cfg_.hidden, rng);
  }

  const EnvSpec& env_spec() const { return env_; }
  const PolicyConfig<T>& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Adam<T>& optimizer() { return optimizer_; }
  const Adam<T>& optimizer() const { return optimizer_; }

  struct ForwardVars {
    Var logits;  // [N,A]
    Var value;   // [N,1]
  };

  ForwardVars forward(Tape<T>& tape, const std::vector<Var>& vars, const Tensor<T>& obs) const {
    if (obs.ndim() != 4 || obs.dim(1) != env_.F * env_.C || obs.dim(2) != env_.H ||
        obs.dim(3) != env_.W)
      throw std::invalid_argument("policy forward: bad obs shape " + shape_str(obs.shape()));
    const int N = obs.dim(0);
    Var x = tape.leaf(obs);
    Var h = tape.relu(tape.bias_channels(tape.conv2d(x, v(vars, "p1.w"), 2, Padding::kSame),
                                         v(vars, "p1.b")));
    h = tape.relu(tape.bias_channels(tape.conv2d(h, v(vars, "p2.w"), 2, Padding::kSame),
                                     v(vars, "p2.b")));
    const int flat = cfg_.ch2 * (env_.H / 4) * (env_.W / 4);
    Var t = tape.relu(tape.dense(tape.reshape(h, {N, flat}), v(vars, "trunk.w"), v(vars, "trunk.b")));
    return {tape.dense(t, v(vars, "pi.w"), v(vars, "pi.b")),
            tape.dense(t, v(vars, "vf.w"), v(vars, "vf.b"))};
  }

  struct ActBatch {
    std::vector<int> actions;
    Tensor<T> logprobs;  // [N]
    Tensor<T> values;    // [N]
  };

  // Sample one action per row; consumes exactly one uniform draw per row.
  ActBatch act_batch(const Tensor<T>& obs, Rng& rng) const {
    Tape<T> tape(/*grad_enabled=*/false);
    auto vars = params_.bind(tape);
    auto out = forward(tape, vars, obs);
    const auto& z = tape.val(out.logits);
    const auto& vv = tape.val(out.value);
    const int N = z.dim(0), K = z.dim(1);
    ActBatch res;
    res.logprobs = Tensor<T>({N});
    res.values = Tensor<T>({N});
    for (int n = 0; n < N; ++n) {
      T mx = z[n * K];
      for (int k = 1; k < K; ++k) mx = std::max(mx, z[static_cast<std::size_t>(n) * K + k]);
      T se = 0;
      for (int k = 0; k < K; ++k) se += std::exp(z[static_cast<std::size_t>(n) * K + k] - mx);
      const T lse = mx + std::log(se);
      const double u = rng.uniform();
      double cum = 0;
      int a = K - 1;
      for (int k = 0; k < K; ++k) {
        cum += static_cast<double>(std::exp(z[static_cast<std::size_t>(n) * K + k] - lse));
        if (u < cum) {
          a = k;
          break;
        }
      }
      res.actions.push_back(a);
      res.logprobs[n] = z[static_cast<std::size_t>(n) * K + a] - lse;
      res.values[n] = vv[n];
    }
    return res;
  }

  int act(const Tensor<T>& obs_stack, Rng& rng) const {
    return act_batch(batch1(obs_stack), rng).actions[0];
  }

  int greedy(const Tensor<T>& obs_stack) const {
    Tape<T> tape(/*grad_enabled=*/false);
    auto vars = params_.bind(tape);
    auto out = forward(tape, vars, batch1(obs_stack));
    const auto& z = tape.val(out.logits);
    int arg = 0;
    for (int k = 1; k < z.dim(1); ++k)
      if (z[k] > z[arg]) arg = k;
    return arg;
  }

  Tensor<T> action_probs(const Tensor<T>& obs_stack) const {
    Tape<T> tape(/*grad_enabled=*/false);
    auto vars = params_.bind(tape);
    auto out = forward(tape, vars, batch1(obs_stack));
    const auto& z = tape.val(out.logits);
    const int K = z.dim(1);
    T mx = z[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, z[k]);
    T se = 0;
    for (int k = 0; k < K; ++k) se += std::exp(z[k] - mx);
    Tensor<T> p({K});
    for (int k = 0; k < K; ++k) p[k] = std::exp(z[k] - mx) / se;
    return p;
  }

 private:
  Tensor<T> batch1(const Tensor<T>& obs_stack) const {
    return obs_stack.reshaped({1, obs_stack.dim(0), obs_stack.dim(1), obs_stack.dim(2)});
  }

  Var v(const std::vector<Var>& vars, const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[static_cast<int>(i)].name == name) return vars[i];
    throw std::logic_error("unknown policy parameter " + name);
  }

  Tensor<T> uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const T s = T(1) / std::sqrt(static_cast<T>(fan_in));
    for (auto& x : t.vec()) x = static_cast<T>((rng.uniform() * 2.0 - 1.0)) * s;
    return t;
  }

  void add_conv(const std::string& name, int cout, int cin, int k, Rng& rng) {
    params_.add(name + ".w", uniform_fan_in({cout, cin, k, k}, cin * k * k, rng));
    params_.add(name + ".b", Tensor<T>::zeros({cout}));
  }

  void add_dense(const std::string& name, int out, int in, Rng& rng) {
    params_.add(name + ".w", uniform_fan_in({out, in}, in, rng));
    params_.add(name + ".b", Tensor<T>::zeros({out}));
  }

  EnvSpec env_;
  PolicyConfig<T> cfg_;
  ParamStore<T> params_;
  Adam<T> optimizer_;
};

}  // namespace evade
