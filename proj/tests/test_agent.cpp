#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evade/agent.hpp"

using namespace evade;

namespace {

// Zeroing the policy head makes the action distribution exactly uniform.
PolicyNet<float> uniform_policy(std::uint64_t seed = 1) {
  EnvSpec env;
  Rng rng(seed);
  PolicyNet<float> p(env, PolicyConfig<float>{}, rng);
  auto* w = p.params().find("pi.w");
  auto* b = p.params().find("pi.b");
  REQUIRE(w != nullptr);
  for (auto& x : w->value.vec()) x = 0.0f;
  for (auto& x : b->value.vec()) x = 0.0f;
  return p;
}

// Monte-Carlo oracle: uniform-random episodes played directly against the
// environment, no policy or model code involved.
std::pair<double, double> random_return_mc(int episodes, std::uint64_t seed) {
  Rng rng(seed);
  double sum = 0, sum2 = 0;
  for (int e = 0; e < episodes; ++e) {
    GridWorld env;
    env.reset(rng.next_u64());
    double ret = 0;
    while (!env.state().done) ret += env.step(static_cast<int>(rng.uniform_int(5))).reward;
    sum += ret;
    sum2 += ret * ret;
  }
  const double mean = sum / episodes;
  const double se = std::sqrt((sum2 / episodes - mean * mean) / episodes);
  return {mean, se};
}

}  // namespace

TEST_CASE("collect_real records exactly k_real transitions deterministically") {
  auto policy = uniform_policy();
  GridWorld env;
  Dataset<float> a, b;
  Rng ra(5), rb(5);
  const auto ret_a = collect_real(policy, env, 137, a, ra);
  const auto ret_b = collect_real(policy, env, 137, b, rb);
  CHECK(a.size() == 137);
  CHECK(b.size() == 137);
  CHECK(ret_a == ret_b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].action == b[i].action);
    CHECK(a[i].reward_class == b[i].reward_class);
    CHECK(a[i].obs_stack == b[i].obs_stack);
    CHECK(a[i].next_frame == b[i].next_frame);
  }
  // returns come from completed episodes only, so they can't exceed steps/1
  CHECK(ret_a.size() <= 137);
}

TEST_CASE("uniform policy matches the Monte-Carlo return oracle") {
  const auto [mc_mean, mc_se] = random_return_mc(10000, 7);
  auto policy = uniform_policy();
  GridWorld env;
  Dataset<float> data;
  Rng rng(11);
  std::vector<double> returns;
  for (int chunk = 0; chunk < 40; ++chunk) {
    Dataset<float> scratch;
    const auto r = collect_real(policy, env, 500, scratch, rng);
    returns.insert(returns.end(), r.begin(), r.end());
  }
  double sum = 0, sum2 = 0;
  for (double r : returns) {
    sum += r;
    sum2 += r * r;
  }
  const double mean = sum / returns.size();
  const double se =
      std::sqrt((sum2 / returns.size() - mean * mean) / static_cast<double>(returns.size()));
  const double tol = 2.0 * std::sqrt(mc_se * mc_se + se * se);
  INFO("policy mean " << mean << " mc mean " << mc_mean << " tol " << tol);
  CHECK(std::abs(mean - mc_mean) < tol);
}

TEST_CASE("simulate_step is deterministic and rolls the frame stack") {
  EnvSpec env;
  Rng rng(1);
  WorldModel<float> model(env, ModelConfig<float>{}, rng);
  Dataset<float> data;
  {
    auto policy = uniform_policy();
    GridWorld world;
    Rng r2(2);
    collect_real(policy, world, 8, data, r2);
  }
  const auto sample = model.mean_sample();
  const auto& obs = data[3].obs_stack;
  const auto s1 = simulate_step(model, sample, obs, kRight);
  const auto s2 = simulate_step(model, sample, obs, kRight);
  CHECK(s1.next_obs_stack == s2.next_obs_stack);
  CHECK(s1.reward == s2.reward);
  // frames 1..F-1 of the input become frames 0..F-2 of the output
  const std::size_t frame = static_cast<std::size_t>(env.C) * env.H * env.W;
  for (std::size_t i = 0; i < (env.F - 1) * frame; ++i)
    CHECK(s1.next_obs_stack[i] == obs[frame + i]);
  // the new frame is binary
  for (std::size_t i = (env.F - 1) * frame; i < s1.next_obs_stack.size(); ++i)
    CHECK((s1.next_obs_stack[i] == 0.0f || s1.next_obs_stack[i] == 1.0f));
  // the predicted reward is one of the bucket values
  CHECK_NOTHROW(env.bucket_index(s1.reward));
}

TEST_CASE("PPO in a hand-made bandit model learns the rewarded action") {
  EnvSpec env;
  ModelConfig<float> mc;
  PolicyConfig<float> pc;
  LoopConfig lc;
  Rng rng(1);
  WorldModel<float> model(env, mc, rng);
  PolicyNet<float> policy(env, pc, rng);
  GridWorld world(env);

  // dataset whose reward label depends only on the action taken
  Dataset<float> data;
  Rng r2(2);
  {
    auto randp = uniform_policy(2);
    collect_real(randp, world, 300, data, r2);
  }
  Dataset<float> relabeled;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto rec = data[i];
    rec.reward_class = env.bucket_index(rec.action == kRight ? 1.0 : 0.0);
    relabeled.add(std::move(rec));
  }
  Rng r3(3);
  train_model(model, relabeled, 800, r3);
  const auto ev = evaluate_model(model, relabeled, relabeled.train_indices());
  REQUIRE(ev.reward_acc > 0.99);  // the model must encode the bandit first

  const auto sample = model.mean_sample();
  Rng r4(4);
  const auto stats = train_policy_in_sim(policy, model, sample, relabeled, 5000, lc, r4);
  // lanes advance in lockstep, so the step count rounds up to a full batch
  CHECK(stats.steps >= 5000);
  CHECK(stats.steps < 5000 + lc.sim_batch);
  double minp = 1.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto p = policy.action_probs(relabeled[i * 7].obs_stack);
    minp = std::min(minp, static_cast<double>(p[kRight]));
  }
  INFO("min P(right) " << minp);
  CHECK(minp > 0.95);
}

TEST_CASE("k_sim = 0 leaves the policy bitwise untouched") {
  EnvSpec env;
  Rng rng(1);
  WorldModel<float> model(env, ModelConfig<float>{}, rng);
  PolicyNet<float> policy(env, PolicyConfig<float>{}, rng);
  Dataset<float> data;
  {
    auto randp = uniform_policy();
    GridWorld world;
    Rng r2(2);
    collect_real(randp, world, 20, data, r2);
  }
  std::vector<Tensor<float>> before;
  for (std::size_t i = 0; i < policy.params().size(); ++i)
    before.push_back(policy.params()[static_cast<int>(i)].value);
  Rng r3(3);
  const auto stats = train_policy_in_sim(policy, model, model.mean_sample(), data, 0,
                                         LoopConfig{}, r3);
  CHECK(stats.steps == 0);
  for (std::size_t i = 0; i < policy.params().size(); ++i)
    CHECK(policy.params()[static_cast<int>(i)].value == before[i]);
}

TEST_CASE("large entropy bonus keeps the policy near uniform") {
  EnvSpec env;
  ModelConfig<float> mc;
  PolicyConfig<float> pc;
  pc.entropy_coef = 10.0f;
  LoopConfig lc;
  Rng rng(1);
  WorldModel<float> model(env, mc, rng);
  PolicyNet<float> policy(env, pc, rng);
  Dataset<float> data;
  Rng r2(2);
  {
    auto randp = uniform_policy(2);
    GridWorld world;
    collect_real(randp, world, 100, data, r2);
  }
  Rng r3(3);
  train_policy_in_sim(policy, model, model.mean_sample(), data, 2000, lc, r3);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto p = policy.action_probs(data[i * 5].obs_stack);
    float mx = 0;
    for (std::size_t k = 0; k < p.size(); ++k) mx = std::max(mx, p[k]);
    CHECK(mx < 0.4f);
  }
}

TEST_CASE("two-iteration smoke run is fast, reported and repeatable") {
  LoopConfig lc;
  lc.iterations = 2;
  lc.k_real = 50;
  lc.k_sim = 500;
  lc.model_steps_first = 200;
  lc.model_steps_rest = 100;
  lc.eval_episodes = 2;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep1 = run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc,
                                     /*evade_on=*/true, /*seed=*/42);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  CHECK(rep1.rows.size() == 2);
  CHECK(rep1.rows[0].iteration == 0);
  CHECK(rep1.rows[1].iteration == 1);
  const auto rep2 = run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc,
                                     true, 42);
  CHECK(rep1.csv() == rep2.csv());
  // a different seed gives a different trajectory
  const auto rep3 = run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc,
                                     true, 43);
  CHECK_FALSE(rep1.csv() == rep3.csv());
}

TEST_CASE("apply_evade_flag switches the model into the mean path") {
  ModelConfig<float> on;
  apply_evade_flag(on, true);
  CHECK(on.use_noise);
  CHECK(on.sigma_init > 0.0f);
  CHECK(on.train_sigma);
  ModelConfig<float> off;
  apply_evade_flag(off, false);
  CHECK_FALSE(off.use_noise);
  CHECK(off.sigma_init == 0.0f);
  CHECK_FALSE(off.train_sigma);
}

TEST_CASE("loop config validation") {
  LoopConfig lc;
  lc.k_sim = 0;
  CHECK_NOTHROW(lc.validate());
  lc.k_real = 0;
  CHECK_THROWS_AS(lc.validate(), std::invalid_argument);
}
