#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "evade/dataset.hpp"
#include "evade/env.hpp"
#include "evade/layers.hpp"
#include "evade/optim.hpp"
#include "evade/tape.hpp"

namespace evade {

template <typename T>
struct ModelConfig {
  int enc1_ch = 8;
  int enc2_ch = 12;
  T sigma_init = T(0.1);
  bool train_sigma = true;
  bool use_noise = true;           // draw a fresh epsilon per minibatch
  bool bypass_evade_blocks = false;  // drop blocks A/B from the reward head
  T lambda_r = T(1);
  int batch = 16;
  AdamConfig<T> adam = {};
};

// One frozen posterior draw: epsilon per noisy bank, keyed by bank name.
// Immutable once drawn; id 0 is the mean sample (all epsilon zero).
template <typename T>
struct VariationalSample {
  std::uint64_t id = 0;
  std::map<std::string, Tensor<T>> eps;

  const Tensor<T>& at(const std::string& name) const {
    auto it = eps.find(name);
    if (it == eps.end()) throw std::logic_error("sample missing bank " + name);
    return it->second;
  }
};

// Joint next-frame + reward network. The transition path (encoder +
// decoder) is noise-free; only the reward head carries noisy banks:
// block A and block B (translation -> weighting -> interaction) plus a
// fully noisy final convolution.
template <typename T>
class WorldModel {
 public:
  struct BankRef {
    std::string name;
    BankKind kind;
    int c, m, c_out;
    int theta_idx, sigma_idx;
    Tensor<T> mask;
  };

  WorldModel(EnvSpec env, ModelConfig<T> cfg, Rng& rng)
      : env_(std::move(env)), cfg_(cfg), optimizer_(cfg.adam) {
    if (env_.H % 4 != 0 || env_.W % 4 != 0)
      throw std::invalid_argument("world model: H and W must be divisible by 4");
    const int FC = env_.F * env_.C;
    const int A = env_.num_actions();
    const int E1 = cfg_.enc1_ch, E2 = cfg_.enc2_ch;

    add_conv("enc1", E1, FC, 3, rng);
    add_conv("enc2", E2, E1, 3, rng);
    add_deconv("dec1", E1, E2, 3, rng);
    add_deconv("dec2", env_.C, E1, 3, rng);
    add_affine("act_dec1", E2, A);
    add_affine("act_dec2", E1, A);

    add_affine("act_rew1", E2, A);
    add_bank("rewardA.translation", BankKind::kTranslation, E2, 3);
    add_bank("rewardA.weighting", BankKind::kWeighting, E2, 1);
    add_bank("rewardA.interaction", BankKind::kInteraction, E2, 1);
    add_conv("rew_pen", E2, E2, 3, rng);
    add_affine("act_rew2", E2, A);
    add_bank("rewardB.translation", BankKind::kTranslation, E2, 3);
    add_bank("rewardB.weighting", BankKind::kWeighting, E2, 1);
    add_bank("rewardB.interaction", BankKind::kInteraction, E2, 1);
    add_noisy_conv("reward_final", E2, E2, 3, rng);
    const int flat = E2 * (env_.H / 4) * (env_.W / 4);
    add_dense("rew_out", env_.num_buckets(), flat, rng);
  }

  const EnvSpec& env_spec() const { return env_; }
  const ModelConfig<T>& config() const { return cfg_; }
  ModelConfig<T>& config() { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Adam<T>& optimizer() { return optimizer_; }
  const Adam<T>& optimizer() const { return optimizer_; }
  const std::vector<BankRef>& banks() const { return banks_; }

  std::size_t param_count() const { return params_.count_values(); }

  NoisyFilterBank<T> bank_view(const BankRef& ref) const {
    NoisyFilterBank<T> b;
    b.kind = ref.kind;
    b.c = ref.c;
    b.m = ref.m;
    b.c_out = ref.c_out;
    b.theta = params_[ref.theta_idx].value;
    b.sigma = params_[ref.sigma_idx].value;
    b.mask = ref.mask;
    return b;
  }

  VariationalSample<T> mean_sample() const {
    VariationalSample<T> s;
    s.id = 0;
    for (const auto& ref : banks_) s.eps[ref.name] = Tensor<T>::zeros(ref.mask.shape());
    return s;
  }

  // One epsilon ~ N(0,1) per masked-in reward-head parameter; the
  // transition path has none by construction.
  VariationalSample<T> draw_reward_sample(Rng& rng) {
    VariationalSample<T> s;
    s.id = ++sample_counter_;
    for (const auto& ref : banks_) s.eps[ref.name] = draw_epsilon(bank_view(ref), rng);
    return s;
  }

  struct ForwardVars {
    Var frame_logits;  // [N,C,H,W]
    Var reward_logits; // [N,K]
  };

  // Input/output feature maps of one named layer, captured on request.
  struct LayerTrace {
    std::string name;
    Tensor<T> input, output;
  };

  // sample == nullptr runs the mean model (no reparameterization op at all).
  ForwardVars forward(Tape<T>& tape, const std::vector<Var>& vars, const Tensor<T>& obs,
                      const std::vector<int>& actions, const VariationalSample<T>* sample,
                      std::vector<LayerTrace>* trace = nullptr) const {
    if (obs.ndim() != 4 || obs.dim(1) != env_.F * env_.C || obs.dim(2) != env_.H ||
        obs.dim(3) != env_.W)
      throw std::invalid_argument("world model forward: bad obs shape " + shape_str(obs.shape()));
    const int N = obs.dim(0);
    if (static_cast<int>(actions.size()) != N)
      throw std::invalid_argument("world model forward: actions/batch mismatch");

    Tensor<T> onehot({N, env_.num_actions()});
    for (int n = 0; n < N; ++n) {
      if (actions[n] < 0 || actions[n] >= env_.num_actions())
        throw std::invalid_argument("world model forward: bad action id");
      onehot[n * env_.num_actions() + actions[n]] = T(1);
    }
    Var act = tape.leaf(onehot);
    Var x = tape.leaf(obs);

    Var h1 = tape.relu(tape.bias_channels(tape.conv2d(x, v(vars, "enc1.w"), 2, Padding::kSame),
                                          v(vars, "enc1.b")));
    rec(tape, trace, "enc1", x, h1);
    Var z = tape.relu(tape.bias_channels(tape.conv2d(h1, v(vars, "enc2.w"), 2, Padding::kSame),
                                         v(vars, "enc2.b")));
    rec(tape, trace, "enc2", h1, z);

    Var d = affine(tape, vars, "act_dec1", z, act);
    d = tape.relu(tape.bias_channels(tape.conv2d_transpose(d, v(vars, "dec1.w"), 2),
                                     v(vars, "dec1.b")));
    d = affine(tape, vars, "act_dec2", d, act);
    Var frame_logits =
        tape.bias_channels(tape.conv2d_transpose(d, v(vars, "dec2.w"), 2), v(vars, "dec2.b"));

    Var r = affine(tape, vars, "act_rew1", z, act);
    if (!cfg_.bypass_evade_blocks) r = block(tape, vars, "rewardA", r, sample, trace);
    r = tape.relu(tape.bias_channels(tape.conv2d(r, v(vars, "rew_pen.w"), 1, Padding::kSame),
                                     v(vars, "rew_pen.b")));
    r = affine(tape, vars, "act_rew2", r, act);
    if (!cfg_.bypass_evade_blocks) r = block(tape, vars, "rewardB", r, sample, trace);
    Var rf_in = r;
    r = tape.relu(tape.bias_channels(
        tape.conv2d(r, bank_filters(tape, vars, "reward_final", sample), 1, Padding::kSame),
        v(vars, "reward_final.b")));
    rec(tape, trace, "reward_final", rf_in, r);
    const int flat = cfg_.enc2_ch * (env_.H / 4) * (env_.W / 4);
    Var rflat = tape.reshape(r, {N, flat});
    Var reward_logits = tape.dense(rflat, v(vars, "rew_out.w"), v(vars, "rew_out.b"));
    return {frame_logits, reward_logits};
  }

  struct Prediction {
    Tensor<T> frame_logits;  // [C,H,W]
    Tensor<T> reward_logits; // [K]
  };

  Prediction predict(const Tensor<T>& obs_stack, int action,
                     const VariationalSample<T>& sample) const {
    Tensor<T> batch = obs_stack.reshaped({1, obs_stack.dim(0), obs_stack.dim(1), obs_stack.dim(2)});
    Tape<T> tape(/*grad_enabled=*/false);
    auto vars = params_.bind(tape);
    auto out = forward(tape, vars, batch, {action}, &sample);
    return {tape.val(out.frame_logits).reshaped({env_.C, env_.H, env_.W}),
            tape.val(out.reward_logits).reshaped({env_.num_buckets()})};
  }

  // Batched inference used by simulated rollouts.
  struct BatchPrediction {
    Tensor<T> frame_logits;  // [N,C,H,W]
    Tensor<T> reward_logits; // [N,K]
  };

  BatchPrediction predict_batch(const Tensor<T>& obs, const std::vector<int>& actions,
                                const VariationalSample<T>& sample) const {
    Tape<T> tape(/*grad_enabled=*/false);
    auto vars = params_.bind(tape);
    auto out = forward(tape, vars, obs, actions, &sample);
    return {tape.val(out.frame_logits), tape.val(out.reward_logits)};
  }

 private:
  Var v(const std::vector<Var>& vars, const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("unknown parameter " + name);
    return vars[static_cast<std::size_t>(it->second)];
  }

  // action conditioning: per-channel scale (around 1) and shift
  Var affine(Tape<T>& tape, const std::vector<Var>& vars, const std::string& name, Var x,
             Var act) const {
    const int C = tape.val(x).dim(1);
    Var aff = tape.dense(act, v(vars, name + ".w"), v(vars, name + ".b"));
    Var sc = tape.add_const(tape.slice_cols(aff, 0, C), T(1));
    Var sh = tape.slice_cols(aff, C, 2 * C);
    return tape.channel_affine(x, sc, sh);
  }

  Var bank_filters(Tape<T>& tape, const std::vector<Var>& vars, const std::string& name,
                   const VariationalSample<T>* sample) const {
    Var theta = v(vars, name + ".theta");
    if (sample == nullptr) return tape.mask_mul(theta, bank_by_name(name).mask);
    return tape.mask_mul(tape.reparam(theta, v(vars, name + ".sigma"), sample->at(name)),
                         bank_by_name(name).mask);
  }

  Var block(Tape<T>& tape, const std::vector<Var>& vars, const std::string& prefix, Var x,
            const VariationalSample<T>* sample,
            std::vector<LayerTrace>* trace = nullptr) const {
    Var y = tape.conv2d(x, bank_filters(tape, vars, prefix + ".translation", sample), 1,
                        Padding::kSame);
    rec(tape, trace, prefix + ".translation", x, y);
    Var y2 = tape.conv2d(y, bank_filters(tape, vars, prefix + ".weighting", sample), 1,
                         Padding::kSame);
    rec(tape, trace, prefix + ".weighting", y, y2);
    Var y3 = tape.conv2d(y2, bank_filters(tape, vars, prefix + ".interaction", sample), 1,
                         Padding::kSame);
    rec(tape, trace, prefix + ".interaction", y2, y3);
    return y3;
  }

  static void rec(Tape<T>& tape, std::vector<LayerTrace>* trace, const std::string& name, Var in,
                  Var out) {
    if (trace) trace->push_back({name, tape.val(in), tape.val(out)});
  }

  const BankRef& bank_by_name(const std::string& name) const {
    for (const auto& b : banks_)
      if (b.name == name) return b;
    throw std::logic_error("unknown bank " + name);
  }

  Tensor<T> uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const T s = T(1) / std::sqrt(static_cast<T>(fan_in));
    for (auto& x : t.vec()) x = static_cast<T>((rng.uniform() * 2.0 - 1.0)) * s;
    return t;
  }

  void reg(const std::string& name, int idx) { index_[name] = idx; }

  void add_conv(const std::string& name, int cout, int cin, int k, Rng& rng) {
    reg(name + ".w", params_.add(name + ".w", uniform_fan_in({cout, cin, k, k}, cin * k * k, rng)));
    reg(name + ".b", params_.add(name + ".b", Tensor<T>::zeros({cout})));
  }

  void add_deconv(const std::string& name, int cout, int cin, int k, Rng& rng) {
    reg(name + ".w", params_.add(name + ".w", uniform_fan_in({cin, cout, k, k}, cin * k * k, rng)));
    reg(name + ".b", params_.add(name + ".b", Tensor<T>::zeros({cout})));
  }

  void add_dense(const std::string& name, int out, int in, Rng& rng) {
    reg(name + ".w", params_.add(name + ".w", uniform_fan_in({out, in}, in, rng)));
    reg(name + ".b", params_.add(name + ".b", Tensor<T>::zeros({out})));
  }

  void add_affine(const std::string& name, int channels, int actions) {
    // zero-initialized: identity conditioning until trained
    reg(name + ".w", params_.add(name + ".w", Tensor<T>::zeros({2 * channels, actions})));
    reg(name + ".b", params_.add(name + ".b", Tensor<T>::zeros({2 * channels})));
  }

  void add_bank(const std::string& name, BankKind kind, int c, int m) {
    NoisyFilterBank<T> b = make_bank<T>(kind, c, m, cfg_.sigma_init);
    BankRef ref;
    ref.name = name;
    ref.kind = kind;
    ref.c = c;
    ref.m = m;
    ref.c_out = b.c_out;
    ref.mask = b.mask;
    ref.theta_idx = params_.add(name + ".theta", b.theta, b.mask);
    ref.sigma_idx = params_.add(name + ".sigma", b.sigma, b.mask, cfg_.train_sigma,
                                /*clamp_nonneg=*/true);
    reg(name + ".theta", ref.theta_idx);
    reg(name + ".sigma", ref.sigma_idx);
    banks_.push_back(std::move(ref));
  }

  // Final reward convolution: ordinary random init, Gaussian dropout on
  // every weight (all-ones mask), so it acts as a noisy interaction filter.
  void add_noisy_conv(const std::string& name, int cout, int cin, int k, Rng& rng) {
    BankRef ref;
    ref.name = name;
    ref.kind = BankKind::kInteraction;
    ref.c = cin;
    ref.m = k;
    ref.c_out = cout;
    ref.mask = Tensor<T>::full({cout, cin, k, k}, T(1));
    ref.theta_idx =
        params_.add(name + ".theta", uniform_fan_in({cout, cin, k, k}, cin * k * k, rng), ref.mask);
    ref.sigma_idx = params_.add(name + ".sigma", Tensor<T>::full({cout, cin, k, k}, cfg_.sigma_init),
                                ref.mask, cfg_.train_sigma, /*clamp_nonneg=*/true);
    reg(name + ".theta", ref.theta_idx);
    reg(name + ".sigma", ref.sigma_idx);
    reg(name + ".b", params_.add(name + ".b", Tensor<T>::zeros({cout})));
    banks_.push_back(std::move(ref));
  }

  EnvSpec env_;
  ModelConfig<T> cfg_;
  ParamStore<T> params_;
  std::vector<BankRef> banks_;
  std::map<std::string, int> index_;
  Adam<T> optimizer_;
  std::uint64_t sample_counter_ = 0;

 public:
  std::uint64_t sample_counter() const { return sample_counter_; }
  void set_sample_counter(std::uint64_t c) { sample_counter_ = c; }
};

// Assemble a minibatch into dense tensors.
template <typename T>
struct Minibatch {
  Tensor<T> obs;                  // [N,FC,H,W]
  std::vector<int> actions;
  std::vector<int> reward_classes;
  Tensor<T> next_frames;          // [N,C,H,W]
};

template <typename T>
Minibatch<T> gather_minibatch(const Dataset<T>& data, const std::vector<std::size_t>& idx) {
  const auto& first = data[idx[0]];
  const int N = static_cast<int>(idx.size());
  Minibatch<T> mb;
  mb.obs = Tensor<T>({N, first.obs_stack.dim(0), first.obs_stack.dim(1), first.obs_stack.dim(2)});
  mb.next_frames =
      Tensor<T>({N, first.next_frame.dim(0), first.next_frame.dim(1), first.next_frame.dim(2)});
  for (int n = 0; n < N; ++n) {
    const auto& rec = data[idx[static_cast<std::size_t>(n)]];
    std::copy(rec.obs_stack.vec().begin(), rec.obs_stack.vec().end(),
              mb.obs.vec().begin() + static_cast<std::size_t>(n) * rec.obs_stack.size());
    std::copy(rec.next_frame.vec().begin(), rec.next_frame.vec().end(),
              mb.next_frames.vec().begin() + static_cast<std::size_t>(n) * rec.next_frame.size());
    mb.actions.push_back(rec.action);
    mb.reward_classes.push_back(rec.reward_class);
  }
  return mb;
}

// Sampled negative log-likelihood: per-pixel BCE on the next frame plus
// lambda_r-weighted categorical CE on the reward class, one fresh epsilon
// draw per minibatch.
template <typename T>
std::vector<T> train_model(WorldModel<T>& model, const Dataset<T>& data,
                           const std::vector<std::size_t>& pool, int steps, Rng& rng) {
  if (data.empty() || pool.empty()) throw std::invalid_argument("train_model: empty dataset");
  Rng rng_batch = rng.split(0);
  Rng rng_eps = rng.split(1);
  const auto& cfg = model.config();
  std::vector<T> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    VariationalSample<T> sample;
    if (cfg.use_noise) sample = model.draw_reward_sample(rng_eps);
    const auto idx = data.sample_indices(pool, static_cast<std::size_t>(cfg.batch), rng_batch);
    auto mb = gather_minibatch(data, idx);

    Tape<T> tape;
    auto vars = model.params().bind(tape);
    auto out = model.forward(tape, vars, mb.obs, mb.actions, cfg.use_noise ? &sample : nullptr);
    Var frame_loss = tape.bce_logits_mean(out.frame_logits, mb.next_frames);
    Var reward_loss = tape.softmax_ce_mean(out.reward_logits, mb.reward_classes);
    Var loss = tape.add(frame_loss, tape.scale(reward_loss, cfg.lambda_r));
    const T loss_val = tape.val(loss)[0];
    if (!std::isfinite(static_cast<double>(loss_val)))
      throw std::runtime_error("train_model: non-finite loss at step " + std::to_string(s));
    tape.backward(loss);
    model.optimizer().step(model.params(), tape, vars);
    losses.push_back(loss_val);
  }
  return losses;
}

template <typename T>
std::vector<T> train_model(WorldModel<T>& model, const Dataset<T>& data, int steps, Rng& rng) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return train_model(model, data, all, steps, rng);
}

template <typename T>
struct EvalStats {
  double frame_acc = 0;
  double reward_acc = 0;
  double nll = 0;
};

// Mean-model metrics over the given records.
template <typename T>
EvalStats<T> evaluate_model(const WorldModel<T>& model, const Dataset<T>& data,
                            const std::vector<std::size_t>& idx) {
  if (idx.empty()) return {};
  const auto sample = model.mean_sample();
  double correct_px = 0, total_px = 0, correct_r = 0, nll = 0;
  const std::size_t chunk = 64;
  for (std::size_t beg = 0; beg < idx.size(); beg += chunk) {
    std::vector<std::size_t> part(idx.begin() + beg,
                                  idx.begin() + std::min(idx.size(), beg + chunk));
    auto mb = gather_minibatch(data, part);
    Tape<T> tape(/*grad_enabled=*/false);
    auto vars = model.params().bind(tape);
    auto out = model.forward(tape, vars, mb.obs, mb.actions, &sample);
    Var frame_loss = tape.bce_logits_mean(out.frame_logits, mb.next_frames);
    Var reward_loss = tape.softmax_ce_mean(out.reward_logits, mb.reward_classes);
    const auto& fl = tape.val(out.frame_logits);
    for (std::size_t i = 0; i < fl.size(); ++i) {
      const bool pred = fl[i] > T(0);
      const bool tgt = mb.next_frames[i] > T(0.5);
      correct_px += pred == tgt ? 1 : 0;
      total_px += 1;
    }
    const auto& rl = tape.val(out.reward_logits);
    const int K = rl.dim(1);
    for (std::size_t n = 0; n < part.size(); ++n) {
      int arg = 0;
      for (int k = 1; k < K; ++k)
        if (rl[n * K + k] > rl[n * K + arg]) arg = k;
      correct_r += arg == mb.reward_classes[n] ? 1 : 0;
    }
    nll += static_cast<double>(tape.val(frame_loss)[0] +
                               model.config().lambda_r * tape.val(reward_loss)[0]) *
           static_cast<double>(part.size());
  }
  EvalStats<T> st;
  st.frame_acc = correct_px / total_px;
  st.reward_acc = correct_r / static_cast<double>(idx.size());
  st.nll = nll / static_cast<double>(idx.size());
  return st;
}

}  // namespace evade
