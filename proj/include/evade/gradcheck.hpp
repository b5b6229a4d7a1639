#pragma once

#include <string>
#include <vector>

#include "evade/layers.hpp"
#include "evade/policy.hpp"
#include "evade/tape.hpp"
#include "evade/world_model.hpp"

namespace evade {

struct GradCheckResult {
  std::string name;
  double max_err = 0;
};

namespace detail {

// Analytic gradients of a scalar loss wrt every trainable parameter vs
// central differences on a few sampled elements per parameter.
template <typename LossFn>
double store_grad_check(ParamStore<double>& store, LossFn loss_of_vars, int elems_per_param,
                        double h = 1e-5) {
  Tape<double> tape;
  auto vars = store.bind(tape);
  Var loss = loss_of_vars(tape, vars);
  tape.backward(loss);

  auto loss_value = [&] {
    Tape<double> t(/*grad_enabled=*/false);
    auto vs = store.bind(t);
    return t.val(loss_of_vars(t, vs))[0];
  };

  double max_err = 0;
  Rng pick(0x9dc5u);
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& param = store[static_cast<int>(p)];
    if (!param.trainable) continue;
    const Tensor<double>& g = tape.grad(vars[p]);
    for (int e = 0; e < elems_per_param; ++e) {
      const std::size_t i = pick.uniform_int(param.value.size());
      if (!param.mask.empty() && param.mask[i] == 0) continue;
      const double orig = param.value[i];
      param.value[i] = orig + h;
      const double fp = loss_value();
      param.value[i] = orig - h;
      const double fm = loss_value();
      param.value[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      max_err = std::max(max_err,
                         std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return max_err;
}

}  // namespace detail

// Double-precision gradient checks for every differentiable building
// block plus the full model and policy objectives.
inline std::vector<GradCheckResult> grad_check_suite() {
  std::vector<GradCheckResult> results;
  Rng rng(0x6ad5u);

  {
    const Tensor<double> w = Tensor<double>::randn({3, 2, 3, 3}, rng);
    const Tensor<double> x = Tensor<double>::randn({2, 2, 6, 5}, rng);
    results.push_back({"conv2d wrt input", grad_check(
        [&](Tape<double>& t, Var vx) {
          return t.sum(t.conv2d(vx, t.leaf(w), 2, Padding::kSame));
        }, x)});
    results.push_back({"conv2d wrt filters", grad_check(
        [&](Tape<double>& t, Var vw) {
          return t.sum(t.conv2d(t.leaf(x), vw, 2, Padding::kSame));
        }, w)});
  }
  {
    const Tensor<double> w = Tensor<double>::randn({2, 3, 3, 3}, rng);
    const Tensor<double> x = Tensor<double>::randn({2, 2, 3, 4}, rng);
    results.push_back({"conv2d_transpose wrt input", grad_check(
        [&](Tape<double>& t, Var vx) {
          return t.sum(t.conv2d_transpose(vx, t.leaf(w), 2));
        }, x)});
    results.push_back({"conv2d_transpose wrt weights", grad_check(
        [&](Tape<double>& t, Var vw) {
          return t.sum(t.conv2d_transpose(t.leaf(x), vw, 2));
        }, w)});
  }

  for (BankKind kind :
       {BankKind::kInteraction, BankKind::kWeighting, BankKind::kTranslation}) {
    const int c = 3, m = kind == BankKind::kWeighting ? 1 : 3;
    auto bank = make_bank<double>(kind, c, m, 0.3);
    bank.theta = bank.theta + Tensor<double>::randn(bank.theta.shape(), rng, 0.2).hadamard(bank.mask);
    Rng erng(17);
    const Tensor<double> eps = draw_epsilon(bank, erng);
    const Tensor<double> x = Tensor<double>::randn({1, c, 5, 5}, rng);
    const Tensor<double> probe = Tensor<double>::randn({1, bank.c_out, 5, 5}, rng);
    auto forward_loss = [&](Tape<double>& t, Var theta, Var sigma) {
      Var w = t.mask_mul(t.reparam(theta, sigma, eps), bank.mask);
      Var y = t.conv2d(t.leaf(x), w, 1, Padding::kSame);
      return t.sum(t.mul(y, t.leaf(probe)));
    };
    const std::string kn = bank_kind_name(kind);
    results.push_back({kn + " wrt theta", grad_check(
        [&](Tape<double>& t, Var th) { return forward_loss(t, th, t.leaf(bank.sigma)); },
        bank.theta)});
    results.push_back({kn + " wrt sigma", grad_check(
        [&](Tape<double>& t, Var sg) { return forward_loss(t, t.leaf(bank.theta), sg); },
        bank.sigma)});
  }

  {
    EnvSpec env;
    ModelConfig<double> cfg;
    cfg.enc1_ch = 4;
    cfg.enc2_ch = 6;
    Rng mrng(3);
    WorldModel<double> model(env, cfg, mrng);
    // make every trainable path active: random thetas, nonzero eps
    for (std::size_t p = 0; p < model.params().size(); ++p) {
      auto& param = model.params()[static_cast<int>(p)];
      Tensor<double> jitter = Tensor<double>::randn(param.value.shape(), mrng, 0.15);
      param.value += param.mask.empty() ? jitter : jitter.hadamard(param.mask);
    }
    Rng srng(4);
    const auto sample = model.draw_reward_sample(srng);
    const int N = 2;
    Rng xrng(5);
    Tensor<double> obs({N, env.F * env.C, env.H, env.W});
    for (auto& v : obs.vec()) v = xrng.uniform() < 0.2 ? 1.0 : 0.0;
    Tensor<double> target({N, env.C, env.H, env.W});
    for (auto& v : target.vec()) v = xrng.uniform() < 0.2 ? 1.0 : 0.0;
    const std::vector<int> actions = {1, 3};
    const std::vector<int> classes = {1, 2};
    auto loss_fn = [&](Tape<double>& t, const std::vector<Var>& vars) {
      auto out = model.forward(t, vars, obs, actions, &sample);
      return t.add(t.bce_logits_mean(out.frame_logits, target),
                   t.softmax_ce_mean(out.reward_logits, classes));
    };
    results.push_back({"world model loss (sampled params)",
                       detail::store_grad_check(model.params(), loss_fn, 4)});
  }

  {
    EnvSpec env;
    PolicyConfig<double> cfg;
    cfg.ch1 = 4;
    cfg.ch2 = 4;
    cfg.hidden = 12;
    Rng prng(6);
    PolicyNet<double> policy(env, cfg, prng);
    const int N = 6;
    Rng xrng(8);
    Tensor<double> obs({N, env.F * env.C, env.H, env.W});
    for (auto& v : obs.vec()) v = xrng.uniform() < 0.2 ? 1.0 : 0.0;
    std::vector<int> actions;
    Tensor<double> lp_old({N}), adv({N}), vtarget({N});
    for (int n = 0; n < N; ++n) {
      actions.push_back(static_cast<int>(xrng.uniform_int(env.num_actions())));
      lp_old[n] = -std::log(double(env.num_actions())) + 0.3 * xrng.normal();
      adv[n] = xrng.normal();
      vtarget[n] = xrng.normal();
    }
    auto loss_fn = [&](Tape<double>& t, const std::vector<Var>& vars) {
      auto out = policy.forward(t, vars, obs);
      Var lp = t.gather_rows(t.log_softmax(out.logits), actions);
      Var loss = t.ppo_clip_mean(lp, lp_old, adv, cfg.clip);
      loss = t.add(loss, t.scale(t.mse_mean(t.reshape(out.value, {N}), vtarget), cfg.value_coef));
      return t.add(loss, t.scale(t.entropy_mean(out.logits), -cfg.entropy_coef));
    };
    results.push_back({"policy objective (sampled params)",
                       detail::store_grad_check(policy.params(), loss_fn, 4)});
  }

  return results;
}

}  // namespace evade
