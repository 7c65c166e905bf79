// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "poarx/poarx.hpp"

using namespace poarx;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

std::size_t worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

MarginSpec poarx11(std::size_t covariates = 0) { return {{1}, {1}, covariates, true}; }

// 1
Outcome copula_normalization() {
  double total2 = 0.0;
  const std::vector<double> lam2{2.0, 3.0};
  for (Count a = 0; a <= 60; ++a) {
    for (Count b = 0; b <= 60; ++b) {
      const std::vector<Count> y{a, b};
      total2 += copula_poisson_pmf(y, lam2, Dependence::frank(2.5));
    }
  }
  double total3 = 0.0;
  const std::vector<double> lam3{1.0, 2.0, 3.0};
  for (Count a = 0; a <= 40; ++a) {
    for (Count b = 0; b <= 40; ++b) {
      for (Count c = 0; c <= 40; ++c) {
        const std::vector<Count> y{a, b, c};
        total3 += copula_poisson_pmf(y, lam3, Dependence::frank(2.0));
      }
    }
  }
  const bool pass = std::abs(total2 - 1.0) <= 1e-8 && std::abs(total3 - 1.0) <= 1e-8;
  return {pass, fmt("K=2 sum-1=%.2e, K=3 sum-1=%.2e (tol 1e-8)", total2 - 1.0, total3 - 1.0)};
}

// 2
Outcome independence_limit() {
  double worst = 0.0;
  for (int i = 1; i <= 9; ++i) {
    for (int j = 1; j <= 9; ++j) {
      const std::vector<double> u{0.1 * i, 0.1 * j};
      worst = std::max(worst, std::abs(frank_cdf(u, 1e-6) - u[0] * u[1]));
    }
  }
  return {worst < 1e-5, fmt("max |C - u1 u2| = %.2e (tol 1e-5)", worst)};
}

// 3
Outcome generator_roundtrip() {
  double worst = 0.0;
  for (double rho : {-20.0, -2.0, -0.1, 0.1, 2.0, 20.0}) {
    for (int i = 1; i <= 99; ++i) {
      const double t = 0.01 * i;
      worst = std::max(worst, std::abs(frank_generator_inverse(frank_generator(t, rho), rho) - t));
    }
  }
  return {worst <= 1e-10, fmt("max roundtrip error = %.2e (tol 1e-10)", worst)};
}

// 4
Outcome score_correctness() {
  const MarginSpec spec{{1, 2}, {1}, 1, true};
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    MarginParams p;
    p.omega = 0.3 + 2.0 * unif(rng);
    const double budget = 0.95 * unif(rng);
    const double a1 = unif(rng), a2 = unif(rng), b1 = unif(rng), tot = a1 + a2 + b1;
    p.alpha = {budget * a1 / tot, budget * a2 / tot};
    p.beta = {budget * b1 / tot};
    p.eta = {unif(rng)};
    SimConfig sc;
    sc.spec = {{spec}, Dependence::Kind::independence};
    sc.theta = {{p}, std::nullopt};
    sc.n = 200;
    sc.burn_in = 100;
    sc.seed = 500 + static_cast<std::uint64_t>(rep);
    const auto sim = simulate_poarx(sc);
    const auto& y = sim.data.y[0];
    const auto& x = sim.data.x[0];
    const auto init = InitPolicy::sample_mean();
    const auto analytic = marginal_score(spec, p, y, x, init);
    const auto v = p.to_vector(spec);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(v[i]));
      auto up = v, down = v;
      up[i] += h;
      down[i] -= h;
      const double fd = (marginal_log_lik(spec, MarginParams::from_vector(spec, up), y, x, init) -
                         marginal_log_lik(spec, MarginParams::from_vector(spec, down), y, x, init)) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(analytic(static_cast<Eigen::Index>(i)) - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return {worst <= 1e-4, fmt("max relative gap = %.2e (tol 1e-4)", worst)};
}

// 5
Outcome parameter_recovery() {
  const ModelSpec spec{{poarx11(), poarx11()}, Dependence::Kind::frank};
  const MarginParams truth{1.0, {0.3}, {0.4}, {}};
  const ThetaFull theta{{truth, truth}, 2.5};
  constexpr std::size_t seeds = 50;
  std::vector<int> covered(seeds, 0), total(seeds, 0), rho_ok(seeds, 0);
  std::vector<std::string> failures(seeds);
  parallel_for(seeds, worker_threads(), [&](std::size_t s) {
    try {
      SimConfig sc;
      sc.spec = spec;
      sc.theta = theta;
      sc.n = 5000;
      sc.burn_in = kStationaryBurnIn;
      sc.seed = 10000 + s;
      const auto data = simulate_poarx(sc).data;
      const auto fit = fit_ifm(spec, data);
      const auto tv = truth.to_vector(spec.margins[0]);
      for (std::size_t j = 0; j < 2; ++j) {
        const auto est = fit.margins[j].params.to_vector(spec.margins[j]);
        for (std::size_t i = 0; i < est.size(); ++i) {
          ++total[s];
          if (fit.margins[j].se_available && std::abs(est[i] - tv[i]) <= 3.0 * fit.margins[j].se[i]) ++covered[s];
        }
      }
      ++total[s];
      if (fit.rho && std::isfinite(fit.rho->se) && std::abs(fit.rho->value - 2.5) <= 3.0 * fit.rho->se) ++covered[s];
      if (fit.rho && fit.rho->value >= 1.8 && fit.rho->value <= 3.2) rho_ok[s] = 1;
    } catch (const std::exception& e) {
      failures[s] = e.what();
      total[s] = 7;
    }
  });
  int cov = 0, tot = 0, rho = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    cov += covered[s];
    tot += total[s];
    rho += rho_ok[s];
  }
  const double coverage = static_cast<double>(cov) / tot;
  const double rho_rate = static_cast<double>(rho) / seeds;
  return {coverage >= 0.85 && rho_rate >= 0.90,
          fmt("coverage %.3f (need >= 0.85), rho in [1.8, 3.2] for %.2f of seeds (need >= 0.90)", coverage, rho_rate)};
}

// 6
Outcome non_poisson_two_step() {
  const double l1 = 3.0, c = 1.0, a = 0.4;
  const auto p = two_step_mixture_pmf(l1, c, a);
  long double mean = 0.0L, second = 0.0L;
  for (std::size_t y = 0; y < p.size(); ++y) {
    mean += p[y] * static_cast<long double>(y);
    second += p[y] * static_cast<long double>(y) * static_cast<long double>(y);
  }
  const double var = static_cast<double>(second - mean * mean);
  const double ratio = var / static_cast<double>(mean);
  double pgf_gap = 0.0;
  for (double z : {0.1, 0.5, 0.9}) {
    long double g = 0.0L;
    for (std::size_t y = 0; y < p.size(); ++y) g += p[y] * std::pow(static_cast<long double>(z), static_cast<long double>(y));
    const double analytic = std::exp((z - 1.0) * c + l1 * (std::exp((z - 1.0) * a) - 1.0));
    pgf_gap = std::max(pgf_gap, std::abs(static_cast<double>(g) - analytic));
  }
  // lambda_{t+2|t} = c + alpha_1 * lambda_{t+1|t}
  const double mean_gap = std::abs(static_cast<double>(mean) - (c + a * l1));
  return {ratio > 1.05 && pgf_gap <= 1e-10 && mean_gap <= 1e-8,
          fmt("var/mean %.4f (> 1.05), pgf gap %.2e (<= 1e-10), mean gap %.2e (<= 1e-8)", ratio, pgf_gap, mean_gap)};
}

// 7
Outcome interval_calibration() {
  const ModelSpec spec{{poarx11(), poarx11()}, Dependence::Kind::frank};
  const ThetaFull theta{{MarginParams{1.0, {0.4}, {0.3}, {}}, MarginParams{2.0, {0.3}, {0.4}, {}}}, 3.0};
  SimConfig sc;
  sc.spec = spec;
  sc.theta = theta;
  sc.n = 500;
  sc.burn_in = 200;
  sc.seed = 77;
  const auto data = simulate_poarx(sc).data;
  const auto ctx = make_forecast_context(spec, theta, data, {CovariateMatrix(0, 0), CovariateMatrix(0, 0)});
  const std::size_t B = 10000;
  const auto draws = simulate_forecast_paths(ctx, 2, B, 4242, worker_threads());
  double worst = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    const auto exact = two_step_pmf_exact(ctx, j);
    std::vector<double> emp(exact.size(), 0.0);
    double outside = 0.0;
    for (Count d : draws[j][1]) {
      if (static_cast<std::size_t>(d) < emp.size()) emp[static_cast<std::size_t>(d)] += 1.0 / B;
      else outside += 1.0 / B;
    }
    double tv = outside;
    for (std::size_t y = 0; y < exact.size(); ++y) tv += std::abs(exact[y] - emp[y]);
    worst = std::max(worst, 0.5 * tv);
  }
  return {worst < 0.02, fmt("max TV distance %.4f (tol 0.02)", worst)};
}

// 8
Outcome stationarity() {
  const ModelSpec spec{{poarx11()}, Dependence::Kind::independence};
  const ThetaFull theta{{MarginParams{1.0, {0.3}, {0.4}, {}}}, std::nullopt};
  auto mean_lambda = [&](std::uint64_t seed, double presample) {
    SimConfig sc;
    sc.spec = spec;
    sc.theta = theta;
    sc.n = 100000;
    sc.burn_in = 1000;
    sc.seed = seed;
    sc.presample = std::vector<double>{presample};
    const auto res = simulate_poarx(sc);
    double s = 0.0;
    for (double l : res.lambda[0]) s += l;
    return s / static_cast<double>(res.lambda[0].size());
  };
  const double target = 10.0 / 3.0;
  const double a = mean_lambda(808, target), b = mean_lambda(909, 100.0);
  const double gap = std::abs(a - target) / target, agree = std::abs(a - b) / std::max(a, b);
  return {gap <= 0.02 && agree <= 0.02,
          fmt("mean lambda %.4f (rel gap %.4f <= 0.02), init agreement %.4f (<= 0.02)", a, gap, agree)};
}

io::Config pipeline_config(std::uint64_t seed) {
  auto doc = io::json::parse(R"({
    "series": [
      {"name": "entries", "column": "in", "covariates": ["load", "event"],
       "theta": {"omega": 0.5, "alpha": [0.3], "beta": [0.3], "eta": [1.0, 1.5]}},
      {"name": "exits", "column": "out", "covariates": ["load", "event"],
       "theta": {"omega": 0.8, "alpha": [0.25], "beta": [0.35], "eta": [0.8, 1.2]}}
    ],
    "dependence": "frank",
    "rho": 3.0,
    "simulate": {"n": 5000, "burn_in": 500},
    "evaluate": {"train": 4000, "menu": true}
  })");
  doc["seed"] = seed;
  return io::parse_config(doc);
}

// 9
Outcome pipeline_replication() {
  constexpr std::size_t seeds = 20;
  std::vector<int> best(seeds, 0);
  std::vector<std::string> errors(seeds);
  parallel_for(seeds, worker_threads(), [&](std::size_t s) {
    try {
      const auto cfg = pipeline_config(600 + s);
      const auto data = io::parse_dataset(cmd::cmd_simulate(cfg), cfg.schema()).data;
      const auto report = io::json::parse(cmd::cmd_evaluate(cfg, data).report);
      best[s] = report.at("best_holdout") == "frank+covariates" ? 1 : 0;
    } catch (const std::exception& e) {
      errors[s] = e.what();
    }
  });
  int wins = 0;
  for (int b : best) wins += b;
  const double rate = static_cast<double>(wins) / seeds;
  return {rate >= 0.80, fmt("frank+covariates best in %.0f of 20 seeds (need >= 16)", static_cast<double>(wins))};
}

// 10
Outcome determinism() {
  const fs::path demo = POARX_DEMO_DIR;
  const auto cfg = io::load_config(demo / "config.json");
  const auto data = io::load_dataset(demo / "data.csv", cfg.schema());
  const fs::path dir = fs::temp_directory_path() / "poarx_acceptance_golden";
  fs::create_directories(dir);
  std::vector<std::string> names;
  bool identical = true;
  for (int run = 0; run < 2; ++run) {
    const std::string tag = std::to_string(run);
    const std::size_t threads = run == 0 ? 1 : 4;
    io::write_file_atomic(dir / ("fit" + tag + ".json"), cmd::cmd_fit(cfg, data.data, threads));
    io::write_file_atomic(dir / ("simulate" + tag + ".csv"), cmd::cmd_simulate(cfg));
    io::write_file_atomic(dir / ("evaluate" + tag + ".json"), cmd::cmd_evaluate(cfg, data.data, threads).report);
  }
  for (const char* stem : {"fit", "simulate", "evaluate"}) {
    const std::string ext = std::string(stem) == "simulate" ? ".csv" : ".json";
    const auto a = io::read_file(dir / (std::string(stem) + "0" + ext));
    const auto b = io::read_file(dir / (std::string(stem) + "1" + ext));
    if (a != b || a.empty()) {
      identical = false;
      names.emplace_back(stem);
    }
  }
  fs::remove_all(dir);
  std::string detail = identical ? "fit, simulate, evaluate files byte-identical" : "differs:";
  for (const auto& n : names) detail += " " + n;
  return {identical, detail};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "copula normalization", 10, copula_normalization},
      {2, "independence limit", 1, independence_limit},
      {3, "generator roundtrip", 1, generator_roundtrip},
      {4, "score correctness", 30, score_correctness},
      {5, "parameter recovery", 600, parameter_recovery},
      {6, "non-Poisson two-step forecast", 1, non_poisson_two_step},
      {7, "interval calibration", 30, interval_calibration},
      {8, "stationarity", 30, stationarity},
      {9, "pipeline replication", 900, pipeline_replication},
      {10, "determinism", 60, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = out.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s criterion %d (%s): %s; %.2fs (limit %.0fs)%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                out.detail.c_str(), secs, c.limit_seconds, in_time ? "" : " over time");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
