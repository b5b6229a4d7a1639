#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evade/activations.hpp"
#include "evade/agent.hpp"
#include "evade/checkpoint.hpp"
#include "evade/config.hpp"
#include "evade/gradcheck.hpp"
#include "evade/identity.hpp"
#include "evade/metrics.hpp"

namespace fs = std::filesystem;
using namespace evade;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string evade_flag;
  std::int64_t seed = -1;
};

RunConfig resolve_config(const CommonOpts& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : RunConfig::from_file(o.config_path);
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.evade_flag.empty()) {
    if (o.evade_flag != "on" && o.evade_flag != "off")
      throw std::invalid_argument("--evade must be on or off");
    cfg.evade_on = o.evade_flag == "on";
  }
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

int cmd_train(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/config.json", cfg.to_json().dump(2) + "\n");

  ModelConfig<float> mcfg = cfg.model;
  apply_evade_flag(mcfg, cfg.evade_on);
  SimpleLoop<float> loop(cfg.env, mcfg, cfg.policy, cfg.loop, cfg.seed);
  loop.run([&](SimpleLoop<float>& l, int it) {
    save_checkpoint(cfg.out_dir + "/checkpoint.bin", snapshot_loop(l));
    const auto& row = l.report().rows.back();
    std::printf("iter %d real_return %.3f nll %.4f reward_acc %.3f sim_return %.3f (%.1fs)\n", it,
                row.real_return_mean, row.model_nll, row.reward_acc, row.sim_return_mean,
                row.seconds);
    std::fflush(stdout);
  });
  write_text(cfg.out_dir + "/report.csv", loop.report().csv());
  write_text(cfg.out_dir + "/timing.csv", loop.report().timing_csv());
  std::printf("final greedy return: %.3f\n", loop.report().final_eval_return);
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, int episodes) {
  RunConfig cfg = resolve_config(opts);
  ModelConfig<float> mcfg = cfg.model;
  apply_evade_flag(mcfg, cfg.evade_on);
  SimpleLoop<float> loop(cfg.env, mcfg, cfg.policy, cfg.loop, cfg.seed);
  restore_loop(load_checkpoint(ckpt_path), loop);
  double sum = 0;
  Rng rng(cfg.seed, SimpleLoop<float>::kStreamEval);
  for (int e = 0; e < episodes; ++e) {
    const double r = greedy_episode_return(loop.policy(), loop.env(), rng.next_u64());
    std::printf("episode %d return %.3f\n", e, r);
    sum += r;
  }
  std::printf("mean greedy return over %d episodes: %.3f\n", episodes, sum / episodes);
  return 0;
}

int cmd_identity_check() {
  bool ok = true;
  for (const auto& chk : identity_check_suite()) {
    std::printf("%-28s %s\n", chk.label.c_str(), chk.pass ? "PASS" : "FAIL");
    ok = ok && chk.pass;
  }
  const auto model_chk = identity_model_check<float>();
  std::printf("%-28s %s (max rel err %.3g)\n", model_chk.label.c_str(),
              model_chk.pass ? "PASS" : "FAIL", model_chk.max_err);
  ok = ok && model_chk.pass;
  return ok ? 0 : 1;
}

int cmd_grad_check() {
  bool ok = true;
  for (const auto& r : grad_check_suite()) {
    const bool pass = r.max_err <= 1e-6;
    std::printf("%-38s max rel err %.3g  %s\n", r.name.c_str(), r.max_err,
                pass ? "PASS" : "FAIL");
    ok = ok && pass;
  }
  return ok ? 0 : 1;
}

int cmd_metrics(const std::string& tables_dir) {
  const auto rep = reproduce_paper_metrics(tables_dir);
  std::fputs(rep.text().c_str(), stdout);
  return rep.all_pass ? 0 : 1;
}

int cmd_dump(const CommonOpts& opts, const std::string& ckpt_path,
             const std::vector<std::string>& layers, int action) {
  RunConfig cfg = resolve_config(opts);
  ModelConfig<float> mcfg = cfg.model;
  apply_evade_flag(mcfg, cfg.evade_on);
  SimpleLoop<float> loop(cfg.env, mcfg, cfg.policy, cfg.loop, cfg.seed);
  if (!ckpt_path.empty()) restore_loop(load_checkpoint(ckpt_path), loop);
  fs::create_directories(cfg.out_dir);
  loop.env().reset(cfg.seed);
  FrameStack<float> stack(cfg.env.F, loop.env().render<float>());
  const auto sample = loop.model().mean_sample();
  dump_activations(loop.model(), stack.stacked(), action, sample, layers, cfg.out_dir);
  std::printf("wrote activation maps for %zu layers to %s\n", layers.size(), cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EVaDE simulated-policy-learning harness"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string ckpt_path, tables_dir = "data/paper_tables";
  std::vector<std::string> layers = {"rewardA.translation", "rewardA.weighting",
                                     "rewardA.interaction"};
  int episodes = 5, action = 4;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON config path");
    cmd->add_option("--seed", opts.seed, "seed override");
    cmd->add_option("--out", opts.out_dir, "output directory override");
    cmd->add_option("--evade", opts.evade_flag, "evade on|off override");
  };

  auto* train = app.add_subcommand("train", "run the full training loop");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "greedy episodes from a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  eval->add_option("--episodes", episodes, "number of greedy episodes");
  app.add_subcommand("identity-check", "identity-representation suite");
  app.add_subcommand("grad-check", "finite-difference gradient checks");
  auto* dump = app.add_subcommand("dump-activations", "export layer activation maps");
  add_common(dump);
  dump->add_option("--checkpoint", ckpt_path, "checkpoint path (fresh model if absent)");
  dump->add_option("--layers", layers, "layer names");
  dump->add_option("--action", action, "conditioning action id");
  auto* metrics = app.add_subcommand("reproduce-paper-metrics",
                                     "recompute published aggregates from bundled tables");
  metrics->add_option("--tables", tables_dir, "score tables directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(opts);
    if (app.got_subcommand("eval")) return cmd_eval(opts, ckpt_path, episodes);
    if (app.got_subcommand("identity-check")) return cmd_identity_check();
    if (app.got_subcommand("grad-check")) return cmd_grad_check();
    if (app.got_subcommand("dump-activations")) return cmd_dump(opts, ckpt_path, layers, action);
    if (app.got_subcommand("reproduce-paper-metrics")) return cmd_metrics(tables_dir);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "numerical/runtime abort: %s\n", e.what());
    return 2;
  }
  return 1;
}
