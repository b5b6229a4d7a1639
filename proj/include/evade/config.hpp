#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "evade/agent.hpp"
#include "evade/env.hpp"
#include "evade/policy.hpp"
#include "evade/world_model.hpp"

namespace evade {

// Experiment description. Every field has a default; unknown JSON keys
// are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool evade_on = true;
  std::string precision = "single";
  EnvSpec env;
  ModelConfig<float> model;
  PolicyConfig<float> policy;
  LoopConfig loop;

  void validate() const {
    env.validate();
    loop.validate();
    if (precision != "single")
      throw std::invalid_argument("config: only precision \"single\" is supported");
  }

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: parse error in " + path + ": " + e.what());
    }
    return from_json(j);
  }

  nlohmann::json to_json() const;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& allowed,
                           const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || a == key;
    if (!ok) throw std::invalid_argument("config: unknown key \"" + where + key + "\"");
  }
}

template <typename U>
void read(const nlohmann::json& j, const char* key, U& out) {
  if (j.contains(key)) out = j.at(key).get<U>();
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::reject_unknown(j, {"seed", "out_dir", "evade", "precision", "env", "model", "policy",
                             "loop"},
                         "");
  detail::read(j, "seed", c.seed);
  detail::read(j, "out_dir", c.out_dir);
  detail::read(j, "precision", c.precision);
  if (j.contains("evade")) {
    const std::string v = j.at("evade").get<std::string>();
    if (v != "on" && v != "off") throw std::invalid_argument("config: evade must be on|off");
    c.evade_on = v == "on";
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    detail::reject_unknown(e,
                           {"layout", "step_cap", "frames", "gem_reward", "big_gem_reward",
                            "hazard_reward", "reward_buckets"},
                           "env.");
    if (e.contains("layout")) {
      c.env.layout = e.at("layout").get<std::vector<std::string>>();
      c.env.H = static_cast<int>(c.env.layout.size());
      c.env.W = c.env.layout.empty() ? 0 : static_cast<int>(c.env.layout[0].size());
    }
    detail::read(e, "step_cap", c.env.step_cap);
    detail::read(e, "frames", c.env.F);
    detail::read(e, "gem_reward", c.env.gem_reward);
    detail::read(e, "big_gem_reward", c.env.big_gem_reward);
    detail::read(e, "hazard_reward", c.env.hazard_reward);
    detail::read(e, "reward_buckets", c.env.reward_buckets);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(
        m, {"enc1_ch", "enc2_ch", "sigma_init", "train_sigma", "lambda_r", "batch", "lr"},
        "model.");
    detail::read(m, "enc1_ch", c.model.enc1_ch);
    detail::read(m, "enc2_ch", c.model.enc2_ch);
    detail::read(m, "sigma_init", c.model.sigma_init);
    detail::read(m, "train_sigma", c.model.train_sigma);
    detail::read(m, "lambda_r", c.model.lambda_r);
    detail::read(m, "batch", c.model.batch);
    detail::read(m, "lr", c.model.adam.lr);
  }
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    detail::reject_unknown(
        p, {"ch1", "ch2", "hidden", "clip", "gamma", "entropy_coef", "value_coef", "lr"},
        "policy.");
    detail::read(p, "ch1", c.policy.ch1);
    detail::read(p, "ch2", c.policy.ch2);
    detail::read(p, "hidden", c.policy.hidden);
    detail::read(p, "clip", c.policy.clip);
    detail::read(p, "gamma", c.policy.gamma);
    detail::read(p, "entropy_coef", c.policy.entropy_coef);
    detail::read(p, "value_coef", c.policy.value_coef);
    detail::read(p, "lr", c.policy.adam.lr);
  }
  if (j.contains("loop")) {
    const auto& l = j.at("loop");
    detail::reject_unknown(l,
                           {"iterations", "k_real", "k_sim", "model_steps_first",
                            "model_steps_rest", "rollout_horizon", "update_frequency", "sim_batch",
                            "ppo_epochs", "eval_episodes"},
                           "loop.");
    detail::read(l, "iterations", c.loop.iterations);
    detail::read(l, "k_real", c.loop.k_real);
    detail::read(l, "k_sim", c.loop.k_sim);
    detail::read(l, "model_steps_first", c.loop.model_steps_first);
    detail::read(l, "model_steps_rest", c.loop.model_steps_rest);
    detail::read(l, "rollout_horizon", c.loop.rollout_horizon);
    detail::read(l, "update_frequency", c.loop.update_frequency);
    detail::read(l, "sim_batch", c.loop.sim_batch);
    detail::read(l, "ppo_epochs", c.loop.ppo_epochs);
    detail::read(l, "eval_episodes", c.loop.eval_episodes);
  }
  c.validate();
  return c;
}

inline nlohmann::json RunConfig::to_json() const {
  return nlohmann::json{
      {"seed", seed},
      {"out_dir", out_dir},
      {"evade", evade_on ? "on" : "off"},
      {"precision", precision},
      {"env",
       {{"layout", env.layout},
        {"step_cap", env.step_cap},
        {"frames", env.F},
        {"gem_reward", env.gem_reward},
        {"big_gem_reward", env.big_gem_reward},
        {"hazard_reward", env.hazard_reward},
        {"reward_buckets", env.reward_buckets}}},
      {"model",
       {{"enc1_ch", model.enc1_ch},
        {"enc2_ch", model.enc2_ch},
        {"sigma_init", model.sigma_init},
        {"train_sigma", model.train_sigma},
        {"lambda_r", model.lambda_r},
        {"batch", model.batch},
        {"lr", model.adam.lr}}},
      {"policy",
       {{"ch1", policy.ch1},
        {"ch2", policy.ch2},
        {"hidden", policy.hidden},
        {"clip", policy.clip},
        {"gamma", policy.gamma},
        {"entropy_coef", policy.entropy_coef},
        {"value_coef", policy.value_coef},
        {"lr", policy.adam.lr}}},
      {"loop",
       {{"iterations", loop.iterations},
        {"k_real", loop.k_real},
        {"k_sim", loop.k_sim},
        {"model_steps_first", loop.model_steps_first},
        {"model_steps_rest", loop.model_steps_rest},
        {"rollout_horizon", loop.rollout_horizon},
        {"update_frequency", loop.update_frequency},
        {"sim_batch", loop.sim_batch},
        {"ppo_epochs", loop.ppo_epochs},
        {"eval_episodes", loop.eval_episodes}}}};
}

}  // namespace evade
