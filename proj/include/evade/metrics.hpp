#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evade {

// Human-normalized score.
inline double hns(double agent, double random_score, double human) {
  if (human == random_score) throw std::invalid_argument("hns: human == random");
  return (agent - random_score) / (human - random_score);
}

// Interquartile mean: sort, drop floor(n/4) from each tail, average the rest.
inline double iqm(std::vector<double> v) {
  if (v.size() < 4) throw std::invalid_argument("iqm: need at least 4 values");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 4;
  double s = 0;
  for (std::size_t i = k; i < v.size() - k; ++i) s += v[i];
  return s / static_cast<double>(v.size() - 2 * k);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

// Regularized incomplete beta I_x(a,b) by Lentz continued fraction.
inline double betacf(double a, double b, double x) {
  const double eps = 3e-14, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < eps) break;
  }
  return h;
}

inline double betainc(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double lnbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front = std::exp(a * std::log(x) + b * std::log(1 - x) - lnbeta);
  if (x < (a + 1) / (a + b + 2)) return front * betacf(a, b, x) / a;
  return 1 - std::exp(b * std::log(1 - x) + a * std::log(x) - lnbeta) * betacf(b, a, 1 - x) / b;
}

}  // namespace detail

// P(T_nu > t) for Student's t.
inline double t_upper_tail(double t, double nu) {
  const double x = nu / (nu + t * t);
  const double half = 0.5 * detail::betainc(nu / 2, 0.5, x);
  return t >= 0 ? half : 1 - half;
}

struct TTest {
  double t = 0;
  double p = 0;  // one-tailed, upper
};

// Paired one-tailed t-test of H1: mean(a) > mean(b).
inline TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double m = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double x : d) ss += (x - m) * (x - m);
  const double var = ss / static_cast<double>(n - 1);
  if (var == 0) throw std::invalid_argument("paired_t_test: zero-variance differences");
  TTest r;
  r.t = m / std::sqrt(var / static_cast<double>(n));
  r.p = t_upper_tail(r.t, static_cast<double>(n - 1));
  return r;
}

// ---- bundled score tables ----

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("csv: missing column " + name);
  }
};

inline CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw std::invalid_argument("csv: ragged row in " + path);
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw std::invalid_argument("csv: empty file " + path);
  return t;
}

struct Baseline {
  double human = 0, random_score = 0;
};

inline std::map<std::string, Baseline> load_baselines(const std::string& path) {
  const CsvTable t = load_csv(path);
  const int gc = t.col("game"), hc = t.col("human"), rc = t.col("random");
  std::map<std::string, Baseline> out;
  for (const auto& r : t.rows) {
    Baseline b{std::stod(r[hc]), std::stod(r[rc])};
    if (b.human == b.random_score)
      throw std::invalid_argument("baseline: human == random for " + r[gc]);
    out[r[gc]] = b;
  }
  return out;
}

struct MetricCheck {
  std::string name;
  double value = 0;
  double expected = 0;
  double tol = 0;       // tol < 0 means "pass iff value <= expected"
  bool pass = false;
};

struct MetricsReport {
  std::vector<MetricCheck> checks;
  bool all_pass = true;

  void add(std::string name, double value, double expected, double tol) {
    MetricCheck c;
    c.name = std::move(name);
    c.value = value;
    c.expected = expected;
    c.tol = tol;
    c.pass = tol < 0 ? value <= expected : std::abs(value - expected) <= tol;
    all_pass = all_pass && c.pass;
    checks.push_back(std::move(c));
  }

  std::string text() const {
    std::string s;
    char buf[160];
    for (const auto& c : checks) {
      if (c.tol < 0)
        std::snprintf(buf, sizeof(buf), "%-34s %10.5f <= %.5f            %s\n", c.name.c_str(),
                      c.value, c.expected, c.pass ? "PASS" : "FAIL");
      else
        std::snprintf(buf, sizeof(buf), "%-34s %10.5f vs %.5f +/- %.3f  %s\n", c.name.c_str(),
                      c.value, c.expected, c.tol, c.pass ? "PASS" : "FAIL");
      s += buf;
    }
    s += all_pass ? "ALL CHECKS PASS\n" : "CHECKS FAILED\n";
    return s;
  }
};

// Recompute the published aggregates from the bundled per-game score
// tables and compare each against its published value.
inline MetricsReport reproduce_paper_metrics(const std::string& tables_dir) {
  const auto base = load_baselines(tables_dir + "/baseline_scores.csv");
  const CsvTable means = load_csv(tables_dir + "/mean_scores.csv");
  const int gc = means.col("game");

  auto per_game_hns = [&](const std::string& method) {
    const int mc = means.col(method);
    std::map<std::string, double> out;
    for (const auto& r : means.rows) {
      const auto& b = base.at(r[gc]);
      out[r[gc]] = hns(std::stod(r[mc]), b.random_score, b.human);
    }
    return out;
  };
  auto values_of = [](const std::map<std::string, double>& m) {
    std::vector<double> v;
    for (const auto& [k, x] : m) v.push_back(x);
    return v;
  };
  auto mean_of = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };

  // Per-run HNS values from a runs_{method}.csv, optionally restricted to
  // a game subset; also yields per-game means of the 5 runs.
  struct Runs {
    std::vector<double> all_hns;
    std::map<std::string, double> game_mean_hns;
  };
  auto load_runs = [&](const std::string& file, const std::vector<std::string>* subset) {
    const CsvTable t = load_csv(tables_dir + "/" + file);
    const int g = t.col("game");
    Runs out;
    for (const auto& r : t.rows) {
      if (subset &&
          std::find(subset->begin(), subset->end(), r[g]) == subset->end())
        continue;
      const auto& b = base.at(r[g]);
      double sum = 0;
      for (int i = 1; i <= 5; ++i) {
        const double s = std::stod(r[t.col("run" + std::to_string(i))]);
        sum += s;
        out.all_hns.push_back(hns(s, b.random_score, b.human));
      }
      out.game_mean_hns[r[g]] = hns(sum / 5, b.random_score, b.human);
    }
    return out;
  };

  MetricsReport rep;
  const auto evade_pg = per_game_hns("evade");
  const auto simple30_pg = per_game_hns("simple30");
  const auto curl_pg = per_game_hns("curl");

  rep.add("evade mean HNS", mean_of(values_of(evade_pg)), 0.682, 0.005);
  rep.add("evade median HNS", median(values_of(evade_pg)), 0.267, 0.005);
  rep.add("simple30 mean HNS", mean_of(values_of(simple30_pg)), 0.525, 0.005);
  rep.add("curl mean HNS", mean_of(values_of(curl_pg)), 0.381, 0.005);

  const Runs evade_runs = load_runs("runs_evade.csv", nullptr);
  const Runs simple30_runs = load_runs("runs_simple30.csv", nullptr);
  rep.add("evade IQM", iqm(evade_runs.all_hns), 0.339, 0.01);
  rep.add("simple30 IQM", iqm(simple30_runs.all_hns), 0.202, 0.01);

  int wins = 0, losses = 0;
  for (const auto& [g, v] : simple30_pg) {
    if (v > evade_pg.at(g)) ++wins;
    if (v < evade_pg.at(g)) ++losses;
  }
  rep.add("simple30 vs evade wins", wins, 3, 0);
  rep.add("simple30 vs evade losses", losses, 23, 0);

  // 12-game ablation subset: the games listed in the ablation run tables.
  std::vector<std::string> games12;
  {
    const CsvTable t = load_csv(tables_dir + "/runs_interaction.csv");
    const int g = t.col("game");
    for (const auto& r : t.rows) games12.push_back(r[g]);
  }
  const Runs s30_12 = load_runs("runs_simple30.csv", &games12);
  const Runs evade_12 = load_runs("runs_evade.csv", &games12);
  rep.add("ablation simple30 HNS (12g)", mean_of(values_of(s30_12.game_mean_hns)), 0.52, 0.01);
  rep.add("ablation evade HNS (12g)", mean_of(values_of(evade_12.game_mean_hns)), 0.77, 0.01);
  rep.add("ablation simple30 IQM (12g)", iqm(s30_12.all_hns), 0.22, 0.01);
  rep.add("ablation evade IQM (12g)", iqm(evade_12.all_hns), 0.4, 0.01);

  std::vector<double> a, b;
  for (const auto& [g, v] : evade_pg) {
    a.push_back(v);
    b.push_back(simple30_pg.at(g));
  }
  rep.add("paired t one-tailed p", paired_t_test(a, b).p, 5e-3, -1);
  return rep;
}

}  // namespace evade
