#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "evade/dataset.hpp"
#include "evade/env.hpp"
#include "evade/policy.hpp"
#include "evade/world_model.hpp"

namespace evade {

struct LoopConfig {
  int iterations = 30;        // outer loop length
  int k_real = 200;           // real env steps per iteration
  int k_sim = 5000;           // simulated env steps per iteration
  int model_steps_first = 2000;
  int model_steps_rest = 500;
  int rollout_horizon = 16;
  int update_frequency = 250;  // sim steps between policy updates
  int sim_batch = 16;          // parallel simulated rollouts
  int ppo_epochs = 5;          // gradient passes per policy update
  int eval_episodes = 5;       // final greedy evaluation

  void validate() const {
    if (iterations <= 0 || k_real <= 0 || model_steps_first <= 0 || model_steps_rest <= 0 ||
        rollout_horizon <= 0 || update_frequency <= 0 || sim_batch <= 0 || ppo_epochs <= 0 ||
        eval_episodes <= 0 || k_sim < 0)
      throw std::invalid_argument("loop config: fields must be positive (k_sim may be 0)");
  }
};

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct ReportRow {
  int iteration = 0;
  double real_return_mean = 0;
  double model_nll = 0;
  double reward_acc = 0;
  double sim_return_mean = 0;
  double seconds = 0;  // wall clock; kept out of the deterministic CSV
};

struct TrainingReport {
  std::vector<ReportRow> rows;
  double final_eval_return = 0;

  // Deterministic columns only; wall clock goes to timing_csv().
  std::string csv() const {
    std::string s = "iteration,real_return_mean,model_nll,reward_acc,sim_return_mean\n";
    for (const auto& r : rows)
      s += std::to_string(r.iteration) + "," + fmt_g(r.real_return_mean) + "," +
           fmt_g(r.model_nll) + "," + fmt_g(r.reward_acc) + "," + fmt_g(r.sim_return_mean) + "\n";
    s += "final_eval_return," + fmt_g(final_eval_return) + "\n";
    return s;
  }

  std::string timing_csv() const {
    std::string s = "iteration,seconds\n";
    for (const auto& r : rows)
      s += std::to_string(r.iteration) + "," + fmt_g(r.seconds) + "\n";
    return s;
  }
};

// Run the policy in the real environment for exactly k_real steps,
// appending every transition; episodes restart on termination. Returns
// the returns of episodes completed within the budget.
template <typename T>
std::vector<double> collect_real(const PolicyNet<T>& policy, GridWorld& env, int k_real,
                                 Dataset<T>& data, Rng& rng) {
  std::vector<double> returns;
  env.reset(rng.next_u64());
  FrameStack<T> stack(env.spec().F, env.render<T>());
  double ep_return = 0;
  for (int t = 0; t < k_real; ++t) {
    Tensor<T> obs = stack.stacked();
    const int a = policy.act(obs, rng);
    const auto res = env.step(a);
    Tensor<T> frame = env.render<T>();
    TransitionRecord<T> rec;
    rec.obs_stack = std::move(obs);
    rec.action = a;
    rec.reward_class = env.spec().bucket_index(res.reward);
    rec.next_frame = frame;
    data.add(std::move(rec));
    ep_return += res.reward;
    if (res.done) {
      returns.push_back(ep_return);
      ep_return = 0;
      env.reset(rng.next_u64());
      stack = FrameStack<T>(env.spec().F, env.render<T>());
    } else {
      stack.push(std::move(frame));
    }
  }
  return returns;
}

template <typename T>
struct SimStep {
  Tensor<T> next_obs_stack;
  double reward = 0;
};

// One deterministic step of the sampled model: per-pixel argmax frame,
// bucket-value reward; the frame stack shifts by one frame. Horizon
// bookkeeping is the caller's job.
template <typename T>
SimStep<T> simulate_step(const WorldModel<T>& model, const VariationalSample<T>& sample,
                         const Tensor<T>& obs_stack, int action) {
  const auto& env = model.env_spec();
  const auto pred = model.predict(obs_stack, action, sample);
  SimStep<T> out;
  out.next_obs_stack = Tensor<T>(obs_stack.shape());
  const std::size_t frame = static_cast<std::size_t>(env.C) * env.H * env.W;
  std::copy(obs_stack.vec().begin() + frame, obs_stack.vec().end(),
            out.next_obs_stack.vec().begin());
  const std::size_t tail = obs_stack.size() - frame;
  for (std::size_t i = 0; i < frame; ++i)
    out.next_obs_stack[tail + i] = pred.frame_logits[i] > T(0) ? T(1) : T(0);
  int arg = 0;
  for (int k = 1; k < env.num_buckets(); ++k)
    if (pred.reward_logits[k] > pred.reward_logits[arg]) arg = k;
  out.reward = env.reward_buckets[arg];
  return out;
}

struct SimStats {
  double mean_return = 0;
  int episodes = 0;
  int steps = 0;
};

// PPO inside the sampled model: sim_batch rollouts run in lockstep from
// uniformly drawn real observations; every update_frequency sim steps the
// buffered batch trains the policy for ppo_epochs passes with a clipped
// surrogate, one-step bootstrapped advantages, value and entropy terms.
template <typename T>
SimStats train_policy_in_sim(PolicyNet<T>& policy, const WorldModel<T>& model,
                             const VariationalSample<T>& sample, const Dataset<T>& data, int k_sim,
                             const LoopConfig& cfg, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_policy_in_sim: empty real dataset");
  const auto& env = model.env_spec();
  const auto& pcfg = policy.config();
  const int B = cfg.sim_batch;
  const int FC = env.F * env.C;

  struct Lane {
    Tensor<T> obs;
    int steps = 0;
    double ret = 0;
  };
  std::vector<Lane> lanes(static_cast<std::size_t>(B));
  auto reset_lane = [&](Lane& l) {
    l.obs = data[rng.uniform_int(data.size())].obs_stack;
    l.steps = 0;
    l.ret = 0;
  };
  for (auto& l : lanes) reset_lane(l);

  struct Buf {
    std::vector<Tensor<T>> obs, next_obs;
    std::vector<int> actions;
    std::vector<T> lp_old, v_old, rewards;
    std::size_t size() const { return obs.size(); }
    void clear() {
      obs.clear();
      next_obs.clear();
      actions.clear();
      lp_old.clear();
      v_old.clear();
      rewards.clear();
    }
  } buf;

  auto stack_obs = [&](const std::vector<Tensor<T>>& frames) {
    Tensor<T> out({static_cast<int>(frames.size()), FC, env.H, env.W});
    std::size_t off = 0;
    for (const auto& f : frames) {
      std::copy(f.vec().begin(), f.vec().end(), out.vec().begin() + off);
      off += f.size();
    }
    return out;
  };

  auto flush = [&] {
    if (buf.size() == 0) return;
    const int M = static_cast<int>(buf.size());
    Tensor<T> obs_all = stack_obs(buf.obs);
    Tensor<T> next_all = stack_obs(buf.next_obs);

    Tensor<T> vnext({M});
    {
      Tape<T> tape(/*grad_enabled=*/false);
      auto vars = policy.params().bind(tape);
      auto out = policy.forward(tape, vars, next_all);
      const auto& vv = tape.val(out.value);
      for (int m = 0; m < M; ++m) vnext[m] = vv[m];
    }
    Tensor<T> adv({M}), vtarget({M}), lp_old({M});
    for (int m = 0; m < M; ++m) {
      vtarget[m] = static_cast<T>(buf.rewards[m]) + pcfg.gamma * vnext[m];
      adv[m] = vtarget[m] - buf.v_old[m];
      lp_old[m] = buf.lp_old[m];
    }
    for (int e = 0; e < cfg.ppo_epochs; ++e) {
      Tape<T> tape;
      auto vars = policy.params().bind(tape);
      auto out = policy.forward(tape, vars, obs_all);
      Var lp = tape.gather_rows(tape.log_softmax(out.logits), buf.actions);
      Var vpred = tape.reshape(out.value, {M});
      Var loss = tape.ppo_clip_mean(lp, lp_old, adv, pcfg.clip);
      loss = tape.add(loss, tape.scale(tape.mse_mean(vpred, vtarget), pcfg.value_coef));
      loss = tape.add(loss, tape.scale(tape.entropy_mean(out.logits), -pcfg.entropy_coef));
      const T lv = tape.val(loss)[0];
      if (!std::isfinite(static_cast<double>(lv)))
        throw std::runtime_error("train_policy_in_sim: non-finite loss");
      tape.backward(loss);
      policy.optimizer().step(policy.params(), tape, vars);
    }
    buf.clear();
  };

  SimStats stats;
  double ret_sum = 0;
  int steps_done = 0, since_update = 0;
  while (steps_done < k_sim) {
    std::vector<Tensor<T>> frames;
    frames.reserve(static_cast<std::size_t>(B));
    for (auto& l : lanes) frames.push_back(l.obs);
    Tensor<T> obs_all = stack_obs(frames);
    auto act = policy.act_batch(obs_all, rng);
    auto pred = model.predict_batch(obs_all, act.actions, sample);

    const std::size_t frame = static_cast<std::size_t>(env.C) * env.H * env.W;
    const std::size_t stack_sz = static_cast<std::size_t>(FC) * env.H * env.W;
    for (int b = 0; b < B; ++b) {
      Lane& l = lanes[static_cast<std::size_t>(b)];
      Tensor<T> next(l.obs.shape());
      std::copy(l.obs.vec().begin() + frame, l.obs.vec().end(), next.vec().begin());
      const std::size_t base = static_cast<std::size_t>(b) * frame;
      for (std::size_t i = 0; i < frame; ++i)
        next[stack_sz - frame + i] = pred.frame_logits[base + i] > T(0) ? T(1) : T(0);
      int arg = 0;
      const int K = env.num_buckets();
      for (int k = 1; k < K; ++k)
        if (pred.reward_logits[static_cast<std::size_t>(b) * K + k] >
            pred.reward_logits[static_cast<std::size_t>(b) * K + arg])
          arg = k;
      const double reward = env.reward_buckets[arg];

      buf.obs.push_back(l.obs);
      buf.next_obs.push_back(next);
      buf.actions.push_back(act.actions[static_cast<std::size_t>(b)]);
      buf.lp_old.push_back(act.logprobs[static_cast<std::size_t>(b)]);
      buf.v_old.push_back(act.values[static_cast<std::size_t>(b)]);
      buf.rewards.push_back(static_cast<T>(reward));

      l.ret += reward;
      if (++l.steps >= cfg.rollout_horizon) {
        ret_sum += l.ret;
        ++stats.episodes;
        reset_lane(l);
      } else {
        l.obs = std::move(next);
      }
    }
    steps_done += B;
    since_update += B;
    if (since_update >= cfg.update_frequency) {
      flush();
      since_update = 0;
    }
  }
  flush();
  stats.steps = steps_done;
  stats.mean_return = stats.episodes > 0 ? ret_sum / stats.episodes : 0.0;
  return stats;
}

template <typename T>
double greedy_episode_return(const PolicyNet<T>& policy, GridWorld& env, std::uint64_t seed) {
  env.reset(seed);
  FrameStack<T> stack(env.spec().F, env.render<T>());
  double ret = 0;
  while (true) {
    const int a = policy.greedy(stack.stacked());
    const auto res = env.step(a);
    ret += res.reward;
    if (res.done) return ret;
    stack.push(env.render<T>());
  }
}

// Approximate PSRL with simulated policy learning: per iteration, collect
// real experience, refit the variational model, freeze one posterior
// sample, and train the policy inside it. All per-iteration randomness is
// derived from (seed, stream, iteration), so a restored run continues the
// identical trajectory.
template <typename T>
class SimpleLoop {
 public:
  SimpleLoop(EnvSpec env, ModelConfig<T> mcfg, PolicyConfig<T> pcfg, LoopConfig cfg,
             std::uint64_t seed)
      : cfg_(cfg), seed_(seed), env_(env), init_rng_(seed, kStreamInit),
        model_(env, mcfg, init_rng_), policy_(env, pcfg, init_rng_) {
    cfg_.validate();
  }

  const LoopConfig& loop_config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  GridWorld& env() { return env_; }
  WorldModel<T>& model() { return model_; }
  const WorldModel<T>& model() const { return model_; }
  PolicyNet<T>& policy() { return policy_; }
  const PolicyNet<T>& policy() const { return policy_; }
  Dataset<T>& dataset() { return data_; }
  const Dataset<T>& dataset() const { return data_; }
  TrainingReport& report() { return report_; }
  const TrainingReport& report() const { return report_; }
  int iteration() const { return iter_; }
  void set_iteration(int i) { iter_ = i; }

  using IterCallback = std::function<void(SimpleLoop&, int)>;

  void run_iteration() {
    const auto t0 = std::chrono::steady_clock::now();
    const int i = iter_;
    try {
      Rng rng_env = Rng(seed_, kStreamEnv).split(static_cast<std::uint64_t>(i));
      const auto returns = collect_real(policy_, env_, cfg_.k_real, data_, rng_env);

      Rng rng_model = Rng(seed_, kStreamModel).split(static_cast<std::uint64_t>(i));
      const int steps = i == 0 ? cfg_.model_steps_first : cfg_.model_steps_rest;
      train_model(model_, data_, data_.train_indices(), steps, rng_model);

      VariationalSample<T> sample;
      if (model_.config().use_noise) {
        Rng rng_sample = Rng(seed_, kStreamSample).split(static_cast<std::uint64_t>(i));
        sample = model_.draw_reward_sample(rng_sample);
      } else {
        sample = model_.mean_sample();
      }

      Rng rng_policy = Rng(seed_, kStreamPolicy).split(static_cast<std::uint64_t>(i));
      const auto sim = train_policy_in_sim(policy_, model_, sample, data_, cfg_.k_sim, cfg_,
                                           rng_policy);

      const auto heldout = data_.heldout_indices();
      const auto ev = evaluate_model(model_, data_, heldout.empty() ? data_.train_indices()
                                                                    : heldout);
      ReportRow row;
      row.iteration = i;
      row.real_return_mean =
          returns.empty() ? 0.0
                          : std::accumulate(returns.begin(), returns.end(), 0.0) /
                                static_cast<double>(returns.size());
      row.model_nll = ev.nll;
      row.reward_acc = ev.reward_acc;
      row.sim_return_mean = sim.mean_return;
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      report_.rows.push_back(row);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("iteration " + std::to_string(i) + ": " + e.what());
    }
    ++iter_;
  }

  void run(const IterCallback& on_iter = {}) {
    while (iter_ < cfg_.iterations) {
      run_iteration();
      if (on_iter) on_iter(*this, iter_ - 1);
    }
    double sum = 0;
    Rng rng_eval(seed_, kStreamEval);
    for (int e = 0; e < cfg_.eval_episodes; ++e)
      sum += greedy_episode_return(policy_, env_, rng_eval.next_u64());
    report_.final_eval_return = sum / cfg_.eval_episodes;
  }

  static constexpr std::uint64_t kStreamInit = 0x11;
  static constexpr std::uint64_t kStreamEnv = 0x22;
  static constexpr std::uint64_t kStreamModel = 0x33;
  static constexpr std::uint64_t kStreamSample = 0x44;
  static constexpr std::uint64_t kStreamPolicy = 0x55;
  static constexpr std::uint64_t kStreamEval = 0x66;

 private:
  LoopConfig cfg_;
  std::uint64_t seed_;
  GridWorld env_;
  Rng init_rng_;
  WorldModel<T> model_;
  PolicyNet<T> policy_;
  Dataset<T> data_;
  TrainingReport report_;
  int iter_ = 0;
};

// Evade on: noisy banks active, sigma trainable. Evade off: identity
// banks with sigma frozen at 0 and the mean model everywhere.
template <typename T>
void apply_evade_flag(ModelConfig<T>& mcfg, bool evade_on) {
  if (evade_on) {
    mcfg.use_noise = true;
  } else {
    mcfg.sigma_init = T(0);
    mcfg.train_sigma = false;
    mcfg.use_noise = false;
  }
}

template <typename T>
TrainingReport run_evade_simple(EnvSpec env, ModelConfig<T> mcfg, PolicyConfig<T> pcfg,
                                LoopConfig cfg, bool evade_on, std::uint64_t seed,
                                const typename SimpleLoop<T>::IterCallback& on_iter = {}) {
  apply_evade_flag(mcfg, evade_on);
  SimpleLoop<T> loop(std::move(env), mcfg, pcfg, cfg, seed);
  loop.run(on_iter);
  return loop.report();
}

}  // namespace evade
