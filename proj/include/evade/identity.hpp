#pragma once

#include <string>
#include <vector>

#include "evade/layers.hpp"
#include "evade/world_model.hpp"

namespace evade {

struct IdentityCheck {
  std::string label;
  bool pass = false;
  double max_err = 0;
};

// Identity-configuration sweep: every layer kind, c in 1..8, kernel size
// in {1,3,5} (weighting layers are 1x1 by definition), double precision,
// bit-exact pass/fail.
inline std::vector<IdentityCheck> identity_check_suite() {
  std::vector<IdentityCheck> out;
  Rng rng(0x1d5u);
  for (BankKind kind :
       {BankKind::kInteraction, BankKind::kWeighting, BankKind::kTranslation}) {
    for (int c = 1; c <= 8; ++c)
      for (int m : {1, 3, 5}) {
        if (kind == BankKind::kWeighting && m != 1) continue;
        const auto bank = identity_config<double>(kind, c, m);
        const Tensor<double> eps = Tensor<double>::zeros(bank.theta.shape());
        const Tensor<double> x = Tensor<double>::randn({c, 7, 9}, rng);
        const Tensor<double> y = bank_forward(x, bank, eps);
        IdentityCheck chk;
        chk.label = std::string(bank_kind_name(kind)) + " c=" + std::to_string(c) +
                    " m=" + std::to_string(m);
        chk.max_err = max_abs_diff(x, y);
        chk.pass = x == y;
        out.push_back(std::move(chk));
      }
  }
  return out;
}

// Inserting the (identity-initialized) noisy blocks into the reward head
// must leave model outputs unchanged relative to a block-free model with
// the same initialization.
template <typename T>
IdentityCheck identity_model_check(double tol = 1e-6) {
  EnvSpec env;
  ModelConfig<T> cfg;
  Rng r1(0xabcu), r2(0xabcu);
  WorldModel<T> with_blocks(env, cfg, r1);
  ModelConfig<T> cfg_off = cfg;
  cfg_off.bypass_evade_blocks = true;
  WorldModel<T> without(env, cfg_off, r2);

  Rng rx(7);
  Tensor<T> obs = Tensor<T>::randn({env.F * env.C, env.H, env.W}, rx);
  const auto s1 = with_blocks.mean_sample();
  const auto s2 = without.mean_sample();
  double err = 0;
  for (int a = 0; a < env.num_actions(); ++a) {
    const auto p1 = with_blocks.predict(obs, a, s1);
    const auto p2 = without.predict(obs, a, s2);
    err = std::max(err, static_cast<double>(max_rel_diff(p1.reward_logits, p2.reward_logits)));
    err = std::max(err, static_cast<double>(max_rel_diff(p1.frame_logits, p2.frame_logits)));
  }
  IdentityCheck chk;
  chk.label = "world model identity stacks";
  chk.max_err = err;
  chk.pass = err <= tol;
  return chk;
}

}  // namespace evade
