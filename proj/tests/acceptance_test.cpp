// Acceptance gate: one line per criterion, nonzero exit if any fail.
// Heavy learning runs execute with the serial kernels and run-level
// parallelism (one full training run per thread).

#include <sys/resource.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include "evade/agent.hpp"
#include "evade/checkpoint.hpp"
#include "evade/gradcheck.hpp"
#include "evade/identity.hpp"
#include "evade/metrics.hpp"

using namespace evade;

namespace {

int failures = 0;

double now() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// total process CPU time (user + system, all threads), in seconds
double cpu_now() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return ru.ru_utime.tv_sec + ru.ru_utime.tv_usec * 1e-6 + ru.ru_stime.tv_sec +
         ru.ru_stime.tv_usec * 1e-6;
}

void report(int idx, const std::string& name, bool pass, double secs, const std::string& note) {
  std::printf("criterion %d: %-46s %s  (%.1f s)%s%s\n", idx, name.c_str(),
              pass ? "PASS" : "FAIL", secs, note.empty() ? "" : "  -- ", note.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string tables_dir() {
  const char* d = std::getenv("EVADE_TABLES_DIR");
  return d ? d : "data/paper_tables";
}

// ---- criterion 3 helpers: independent brute-force oracles ----

template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& f, int stride, Padding pad) {
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = f.dim(0), K = f.dim(2);
  int Hout, Wout, pt = 0, pl = 0;
  if (pad == Padding::kSame) {
    Hout = (H + stride - 1) / stride;
    Wout = (W + stride - 1) / stride;
    pt = std::max((Hout - 1) * stride + K - H, 0) / 2;
    pl = std::max((Wout - 1) * stride + K - W, 0) / 2;
  } else {
    Hout = (H - K) / stride + 1;
    Wout = (W - K) / stride + 1;
  }
  Tensor<T> y({N, Cout, Hout, Wout});
  for (int n = 0; n < N; ++n)
    for (int ci = 0; ci < Cin; ++ci)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int co = 0; co < Cout; ++co)
            for (int ki = 0; ki < K; ++ki)
              for (int kj = 0; kj < K; ++kj) {
                const int hs = h + pt - ki, ws = w + pl - kj;
                if (hs < 0 || ws < 0 || hs % stride || ws % stride) continue;
                const int ho = hs / stride, wo = ws / stride;
                if (ho >= Hout || wo >= Wout) continue;
                y.at4(n, co, ho, wo) += x.at4(n, ci, h, w) * f.at4(co, ci, ki, kj);
              }
  return y;
}

template <typename T>
Tensor<T> bank_oracle(const Tensor<T>& x, const NoisyFilterBank<T>& bank, const Tensor<T>& eps) {
  Tensor<T> f(bank.theta.shape());
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = bank.mask[i] == T(0) ? T(0) : bank.theta[i] * (T(1) + bank.sigma[i] * eps[i]);
  const Tensor<T> x4 = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  return conv_oracle(x4, f, 1, Padding::kSame).reshaped({bank.c_out, x.dim(1), x.dim(2)});
}

template <typename T>
int oracle_cases(double tol, std::uint64_t seed) {
  Rng rng(seed);
  int cases = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 1 + static_cast<int>(rng.uniform_int(2));
    const int Cin = 1 + static_cast<int>(rng.uniform_int(4));
    const int Cout = 1 + static_cast<int>(rng.uniform_int(4));
    const int K = 1 + 2 * static_cast<int>(rng.uniform_int(3));
    const int H = K + static_cast<int>(rng.uniform_int(7));
    const int W = K + static_cast<int>(rng.uniform_int(7));
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    for (Padding pad : {Padding::kSame, Padding::kValid}) {
      const auto x = Tensor<T>::randn({N, Cin, H, W}, rng);
      const auto f = Tensor<T>::randn({Cout, Cin, K, K}, rng);
      if (max_rel_diff(conv2d(x, f, stride, pad), conv_oracle(x, f, stride, pad)) >= tol)
        return -1;
      ++cases;
    }
  }
  for (BankKind kind : {BankKind::kInteraction, BankKind::kWeighting, BankKind::kTranslation})
    for (int trial = 0; trial < 10; ++trial) {
      const int m = kind == BankKind::kWeighting ? 1 : 3;
      auto bank = make_bank<T>(kind, 4, m, T(0.25));
      for (std::size_t i = 0; i < bank.theta.size(); ++i)
        if (bank.mask[i] != T(0)) bank.theta[i] += T(0.5) * static_cast<T>(rng.normal());
      const auto x = Tensor<T>::randn({4, 6, 5}, rng);
      const auto eps = draw_epsilon(bank, rng);
      if (max_rel_diff(bank_forward(x, bank, eps), bank_oracle(x, bank, eps)) >= tol) return -1;
      ++cases;
    }
  return cases;
}

// ---- criterion 7 helpers ----

struct RunOut {
  double final_ret = 0;
  double best_frame_acc = 0;
  double best_reward_acc = 0;
  bool failed = false;
};

RunOut full_default_run(std::uint64_t seed, bool evade_on) {
  RunOut out;
  try {
    auto cb = [&out](SimpleLoop<float>& loop, int it) {
      if (it > 10) return;
      const auto st =
          evaluate_model(loop.model(), loop.dataset(), loop.dataset().heldout_indices());
      out.best_frame_acc = std::max(out.best_frame_acc, st.frame_acc);
      out.best_reward_acc = std::max(out.best_reward_acc, st.reward_acc);
    };
    const auto rep = run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{},
                                      LoopConfig{}, evade_on, seed, cb);
    out.final_ret = rep.final_eval_return;
  } catch (const std::exception&) {
    out.failed = true;
  }
  return out;
}

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
  return {mean, std::sqrt((sum2 / episodes - mean * mean) / episodes)};
}

LoopConfig small_cfg() {
  LoopConfig lc;
  lc.iterations = 3;
  lc.k_real = 60;
  lc.k_sim = 600;
  lc.model_steps_first = 200;
  lc.model_steps_rest = 100;
  lc.eval_episodes = 2;
  return lc;
}

char fmt_buf[256];
std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  std::snprintf(fmt_buf, sizeof(fmt_buf), f, a, b, c);
  return fmt_buf;
}

}  // namespace

int main() {
  // 1. published-aggregate reproduction from the bundled tables
  {
    const double t0 = now();
    bool ok = false;
    std::string note;
    try {
      const auto rep = reproduce_paper_metrics(tables_dir());
      ok = rep.all_pass && rep.checks.size() == 13;
      if (!rep.all_pass)
        for (const auto& c : rep.checks)
          if (!c.pass) note += c.name + " ";
    } catch (const std::exception& e) {
      note = e.what();
    }
    const double secs = now() - t0;
    report(1, "published-metrics reproduction", ok && secs < 5.0, secs, note);
  }

  // 2. identity-representation sweep + model insertion
  {
    const double t0 = now();
    bool ok = true;
    std::string note;
    for (const auto& c : identity_check_suite())
      if (!c.pass) {
        ok = false;
        note += c.label + " ";
      }
    const auto mc = identity_model_check<double>(1e-6);
    if (!mc.pass) {
      ok = false;
      note += mc.label;
    }
    const double secs = now() - t0;
    report(2, "identity representations (layers + model)", ok && secs < 30.0, secs, note);
  }

  // 3. brute-force convolution oracle equivalence
  {
    const double t0 = now();
    const int cd = oracle_cases<double>(1e-10, 101);
    const int cs = oracle_cases<float>(1e-5, 202);
    const bool ok = cd > 0 && cs > 0 && cd + cs >= 200;
    const double secs = now() - t0;
    report(3, "oracle equivalence (conv + layer forwards)", ok && secs < 60.0, secs,
           fmt("%.0f double + %.0f single cases", cd, cs));
  }

  // 4. gradient correctness
  {
    const double t0 = now();
    bool ok = true;
    std::string note;
    for (const auto& r : grad_check_suite())
      if (!(r.max_err <= 1e-6)) {
        ok = false;
        note += r.name + " ";
      }
    const double secs = now() - t0;
    report(4, "gradient checks at 1e-6 (double)", ok && secs < 120.0, secs, note);
  }

  // 5. dropout statistics of a random bank, per element
  {
    const double t0 = now();
    auto bank = make_bank<double>(BankKind::kInteraction, 3, 3, 0.2);
    Rng jitter(7);
    for (std::size_t i = 0; i < bank.theta.size(); ++i)
      if (bank.mask[i] != 0.0) bank.theta[i] = 0.5 + jitter.uniform();  // keep theta away from 0
    Rng rng(11);
    const int n = 100000;
    bool ok = true;
    double worst_sd = 0, worst_mean = 0;
    for (std::size_t i = 0; i < bank.theta.size() && ok; ++i) {
      if (bank.mask[i] == 0.0) continue;
      const double th = bank.theta[i], sg = bank.sigma[i];
      double sum = 0, sum2 = 0;
      for (int k = 0; k < n; ++k) {
        const double w = th * (1.0 + sg * rng.normal());
        sum += w;
        sum2 += w * w;
      }
      const double mean = sum / n;
      const double sd = std::sqrt(sum2 / n - mean * mean);
      const double mean_err = std::abs(mean - th) / (std::abs(th) * sg / std::sqrt(n));
      const double sd_err = std::abs(sd - std::abs(th * sg)) / std::abs(th * sg);
      worst_mean = std::max(worst_mean, mean_err);
      worst_sd = std::max(worst_sd, sd_err);
      if (mean_err > 3.0 || sd_err > 0.02) ok = false;
    }
    const double secs = now() - t0;
    report(5, "sampled-weight statistics (1e5 draws/elem)", ok && secs < 30.0, secs,
           fmt("worst mean z %.2f, worst sd rel err %.4f", worst_mean, worst_sd));
  }

  // 6. sigma = 0 collapse onto the plain baseline, byte-identical reports
  {
    const double t0 = now();
    bool ok = false;
    std::string note;
    try {
      ModelConfig<float> zero_sigma;
      zero_sigma.sigma_init = 0.0f;
      zero_sigma.train_sigma = false;
      const auto on = run_evade_simple(EnvSpec{}, zero_sigma, PolicyConfig<float>{}, small_cfg(),
                                       /*evade_on=*/true, 5);
      const auto off = run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{},
                                        small_cfg(), /*evade_on=*/false, 5);
      ok = on.csv() == off.csv();
      if (!ok) note = "reports differ";
    } catch (const std::exception& e) {
      note = e.what();
    }
    report(6, "sigma-collapse equals baseline byte-for-byte", ok, now() - t0, note);
  }

  // 7. desk-scale learning: 10 seeds x {on, off} at default scale,
  //    one run per thread on the serial kernels
  {
    const double t0 = now();
    const double c0 = cpu_now();
    const bool saved = kernels::parallel_enabled();
    kernels::parallel_enabled() = false;
    const int S = 10;
    std::vector<std::future<RunOut>> fon, foff;
    for (int s = 0; s < S; ++s) {
      fon.push_back(std::async(std::launch::async, full_default_run, s, true));
      foff.push_back(std::async(std::launch::async, full_default_run, s, false));
    }
    std::vector<RunOut> on, off;
    bool any_failed = false;
    for (int s = 0; s < S; ++s) {
      on.push_back(fon[s].get());
      off.push_back(foff[s].get());
      any_failed = any_failed || on.back().failed || off.back().failed;
    }
    kernels::parallel_enabled() = saved;

    // (a) model accuracy by iteration 10, evade-on runs
    double min_frame = 1, min_reward = 1;
    for (const auto& r : on) {
      min_frame = std::min(min_frame, r.best_frame_acc);
      min_reward = std::min(min_reward, r.best_reward_acc);
    }
    const bool a_ok = min_frame > 0.95 && min_reward > 0.90;

    // (b) final greedy return vs the random-policy Monte-Carlo mean, 5 seeds
    const auto [mc_mean, mc_se] = random_return_mc(10000, 99);
    (void)mc_se;
    double ret5 = 0;
    for (int s = 0; s < 5; ++s) ret5 += on[s].final_ret;
    ret5 /= 5;
    const bool b_ok = ret5 > mc_mean;

    // (c) directional on-vs-off check with a pooled standard error
    double mon = 0, moff = 0;
    for (const auto& r : on) mon += r.final_ret;
    for (const auto& r : off) moff += r.final_ret;
    mon /= S;
    moff /= S;
    double von = 0, voff = 0;
    for (const auto& r : on) von += (r.final_ret - mon) * (r.final_ret - mon);
    for (const auto& r : off) voff += (r.final_ret - moff) * (r.final_ret - moff);
    von /= S - 1;
    voff /= S - 1;
    const double pooled_se = std::sqrt(von / S + voff / S);
    const bool c_ok = mon >= moff - pooled_se;

    const double secs = now() - t0;
    // 30-minute budget on an 8-core machine, stated as core-seconds so it is
    // checkable on machines with fewer cores: 20 runs must fit in 8 * 1800 s
    // of CPU work. Wall time meets the bound whenever >= cpu/1800 cores exist.
    const double cpu = cpu_now() - c0;
    const bool time_ok = cpu < 8.0 * 1800.0;
    std::string note = fmt("acc %.4f/%.4f; ", min_frame, min_reward);
    note += fmt("ret5 %.3f vs random %.3f; ", ret5, mc_mean);
    note += fmt("on %.3f vs off %.3f - se %.3f; ", mon, moff, pooled_se);
    note += fmt("cpu %.0f s of 14400 (%.0f cores)", cpu,
                static_cast<double>(std::thread::hardware_concurrency()));
    report(7, "desk-scale learning (20 default runs)",
           !any_failed && a_ok && b_ok && c_ok && time_ok, secs, note);
  }

  // 8. determinism and persistence
  {
    const double t0 = now();
    bool ok = false;
    std::string note;
    try {
      const auto lc = small_cfg();
      const auto r1 =
          run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc, true, 9);
      const auto r2 =
          run_evade_simple(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc, true, 9);
      const bool det = r1.csv() == r2.csv();

      SimpleLoop<float> full(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc, 9);
      full.run();
      SimpleLoop<float> part(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc, 9);
      part.run_iteration();
      const std::string path = "/tmp/evade_acceptance_ck.bin";
      save_checkpoint(path, snapshot_loop(part));
      const auto ck = load_checkpoint(path);
      std::remove(path.c_str());

      bool round = ck.seed == 9;
      for (const auto& [name, tensor] : snapshot_loop(part).blocks)
        round = round && ck.at(name) == tensor;

      SimpleLoop<float> resumed(EnvSpec{}, ModelConfig<float>{}, PolicyConfig<float>{}, lc, 9);
      restore_loop(ck, resumed);
      resumed.run();
      bool resume = resumed.report().final_eval_return == full.report().final_eval_return &&
                    resumed.report().rows.size() == 2;
      for (std::size_t i = 0; i < resumed.report().rows.size(); ++i) {
        const auto& a = resumed.report().rows[i];
        const auto& b = full.report().rows[i + 1];
        resume = resume && a.iteration == b.iteration &&
                 a.real_return_mean == b.real_return_mean && a.model_nll == b.model_nll &&
                 a.reward_acc == b.reward_acc && a.sim_return_mean == b.sim_return_mean;
      }
      ok = det && round && resume;
      if (!det) note += "reports not byte-identical; ";
      if (!round) note += "checkpoint round trip not bit-exact; ";
      if (!resume) note += "resume diverged";
    } catch (const std::exception& e) {
      note = e.what();
    }
    report(8, "determinism, checkpoint round trip, resume", ok, now() - t0, note);
  }

  if (failures) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all 8 criteria pass\n");
  return 0;
}
