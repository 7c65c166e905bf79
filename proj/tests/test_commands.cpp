#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "poarx/commands.hpp"

using namespace poarx;
using namespace poarx::io;
namespace fs = std::filesystem;

namespace {

const fs::path kDemo = POARX_DEMO_DIR;

Config demo_config() { return load_config(kDemo / "config.json"); }

Dataset demo_data(const Config& cfg) { return load_dataset(kDemo / "data.csv", cfg.schema()); }

Config small_config(const std::string& dependence) {
  auto doc = json::parse(R"({
    "series": [
      {"name": "a", "column": "a", "theta": {"omega": 1.0, "alpha": [0.3], "beta": [0.4]}},
      {"name": "b", "column": "b", "theta": {"omega": 2.0, "alpha": [0.2], "beta": [0.3]}}
    ],
    "rho": 2.0,
    "seed": 5,
    "simulate": {"n": 400, "burn_in": 100}
  })");
  doc["dependence"] = dependence;
  return parse_config(doc);
}

int run_cli(const std::string& args) {
  const std::string command = std::string(POARX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("poarx_cmd_" + name); }

}  // namespace

TEST(Fit, IndependenceReportsDash) {
  const auto cfg = small_config("independence");
  const auto data = parse_dataset(cmd::cmd_simulate(cfg), cfg.schema()).data;
  const auto report = json::parse(cmd::cmd_fit(cfg, data));
  EXPECT_EQ(report["fit"]["rho"], "-");
  EXPECT_EQ(report["command"], "fit");
  EXPECT_EQ(report["config"]["dependence"], "independence");
}

TEST(Fit, CoefficientCountMatchesParameters) {
  const auto cfg = demo_config();
  const auto data = demo_data(cfg).data;
  const auto report = json::parse(cmd::cmd_fit(cfg, data, 2));
  std::size_t count = report["fit"]["rho"].is_object() ? 1 : 0;
  for (const auto& s : report["fit"]["series"]) count += s["coefficients"].size();
  EXPECT_EQ(count, report["fit"]["n_params"].get<std::size_t>());
  EXPECT_EQ(count, cfg.model_spec().n_params());
  EXPECT_TRUE(report["fit"]["series"][0]["coefficients"][0].contains("sandwich_se"));
}

TEST(Fit, ByteIdenticalAcrossRunsAndThreads) {
  const auto cfg = demo_config();
  const auto data = demo_data(cfg).data;
  const auto a = cmd::cmd_fit(cfg, data, 1);
  EXPECT_EQ(a, cmd::cmd_fit(cfg, data, 1));
  EXPECT_EQ(a, cmd::cmd_fit(cfg, data, 4));
}

TEST(Fit, ReportRoundTripsParameters) {
  const auto cfg = small_config("frank");
  const auto data = parse_dataset(cmd::cmd_simulate(cfg), cfg.schema()).data;
  const auto report = json::parse(cmd::cmd_fit(cfg, data));
  const auto theta = cmd::theta_from_report(report, cfg.model_spec());
  const auto fit = fit_ifm(cfg.model_spec(), data, cmd::fit_options(cfg, 1));
  EXPECT_EQ(theta.margins[0].to_vector(cfg.model_spec().margins[0]), fit.margins[0].params.to_vector(cfg.model_spec().margins[0]));
  EXPECT_EQ(*theta.rho, fit.rho->value);
}

TEST(Forecast, FirstHorizonIsOneStepIntensity) {
  const auto cfg = demo_config();
  const auto ds = demo_data(cfg);
  const auto out = cmd::cmd_forecast(cfg, ds, std::nullopt);
  const auto table = parse_csv(out.csv);
  EXPECT_EQ(table.header, (std::vector<std::string>{"series", "horizon", "intensity", "lower", "upper"}));
  ASSERT_EQ(table.rows.size(), 2u * cfg.forecast.horizon);
  const auto ctx = make_forecast_context(cfg.model_spec(), *cfg.theta(), ds.data, ds.future_x, cfg.estimation.init);
  const auto one = one_step_intensity(ctx);
  EXPECT_EQ(table.rows[0][1], "1");
  EXPECT_EQ(parse_double(table.rows[0][2]).value(), one[0]);
  EXPECT_EQ(parse_double(table.rows[cfg.forecast.horizon][2]).value(), one[1]);
  for (const auto& row : table.rows) {
    const double point = std::round(parse_double(row[2]).value());
    EXPECT_LE(parse_double(row[3]).value(), point);
    EXPECT_GE(parse_double(row[4]).value(), point);
  }
  const auto tidy = parse_csv(out.tidy);
  EXPECT_EQ(tidy.rows.size(), 3u * table.rows.size());
}

TEST(Forecast, InterceptOnlyIsConstant) {
  const auto cfg = parse_config(json::parse(R"({
    "series": [{"column": "y", "obs_lags": [], "mean_lags": [], "theta": {"omega": 4.0}}],
    "forecast": {"horizon": 5, "replicates": 200}
  })"));
  const auto ds = parse_dataset("y\n3\n5\n4\n", cfg.schema());
  const auto table = parse_csv(cmd::cmd_forecast(cfg, ds, std::nullopt).csv);
  ASSERT_EQ(table.rows.size(), 5u);
  for (const auto& row : table.rows) EXPECT_EQ(row[2], "4");
}

TEST(Forecast, MissingFutureCovariates) {
  const auto cfg = demo_config();
  const auto ds = demo_data(cfg);
  try {
    cmd::cmd_forecast(cfg, ds, std::nullopt, ds.future_x[0].rows() + 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("needs " + std::to_string(ds.future_x[0].rows() + 1)), std::string::npos);
  }
}

TEST(Forecast, UsesModelFile) {
  const auto cfg = demo_config();
  const auto ds = demo_data(cfg);
  const auto report = json::parse(cmd::cmd_fit(cfg, ds.data));
  const auto a = cmd::cmd_forecast(cfg, ds, report, 1);
  Config no_theta = cfg;
  for (auto& s : no_theta.series) s.theta.reset();
  EXPECT_EQ(a.csv, cmd::cmd_forecast(no_theta, ds, std::nullopt, 1).csv);
}

TEST(Simulate, LoadsBackIdentically) {
  const auto cfg = demo_config();
  const auto text = cmd::cmd_simulate(cfg, 300);
  const auto ds = parse_dataset(text, cfg.schema());
  EXPECT_EQ(ds.data.length(), 300u);
  EXPECT_EQ(format_dataset(ds.data, cfg.schema()), text);
  EXPECT_EQ(ds.data.x[0], ds.data.x[1]);
}

TEST(Simulate, SeedControlsOutput) {
  auto cfg = small_config("frank");
  const auto a = cmd::cmd_simulate(cfg);
  EXPECT_EQ(a, cmd::cmd_simulate(cfg));
  cfg.seed += 1;
  EXPECT_NE(a, cmd::cmd_simulate(cfg));
}

TEST(Simulate, RefusesUnstableOrMissingTheta) {
  auto cfg = small_config("independence");
  cfg.series[0].theta->alpha = {0.7};
  EXPECT_THROW(cmd::cmd_simulate(cfg), ConfigError);
  cfg.series[0].theta.reset();
  EXPECT_THROW(cmd::cmd_simulate(cfg), ConfigError);
}

TEST(Evaluate, NoHoldoutSectionWithoutTestRows) {
  const auto cfg = small_config("frank");
  const auto data = parse_dataset(cmd::cmd_simulate(cfg), cfg.schema()).data;
  const auto report = json::parse(cmd::cmd_evaluate(cfg, data).report);
  EXPECT_EQ(report["split"]["test"], 0);
  ASSERT_EQ(report["models"].size(), 1u);
  EXPECT_FALSE(report["models"][0].contains("holdout_log_score"));
  EXPECT_FALSE(report.contains("best_holdout"));
}

TEST(Evaluate, MenuHasFourModels) {
  const auto cfg = demo_config();
  const auto data = demo_data(cfg).data;
  const auto out = cmd::cmd_evaluate(cfg, data, 4);
  const auto report = json::parse(out.report);
  ASSERT_EQ(report["models"].size(), 4u);
  std::vector<std::string> names;
  for (const auto& m : report["models"]) {
    names.push_back(m["model"]);
    EXPECT_TRUE(m.contains("holdout_log_score"));
    EXPECT_TRUE(m.contains("cv"));
  }
  EXPECT_EQ(names, (std::vector<std::string>{"independence", "frank", "independence+covariates", "frank+covariates"}));
  EXPECT_EQ(report["models"][0]["rho"], "-");
  EXPECT_TRUE(report.contains("best_holdout"));
  EXPECT_EQ(out.report, cmd::cmd_evaluate(cfg, data, 1).report);
}

TEST(Evaluate, SplitOutOfRange) {
  auto cfg = small_config("independence");
  const auto data = parse_dataset(cmd::cmd_simulate(cfg), cfg.schema()).data;
  cfg.evaluate.train = data.length() + 1;
  EXPECT_THROW(cmd::cmd_evaluate(cfg, data), ConfigError);
}

TEST(Cli, ExitCodes) {
  const std::string config = (kDemo / "config.json").string();
  const std::string data = (kDemo / "data.csv").string();
  const auto out = temp_file("fit.json");
  EXPECT_EQ(run_cli("fit --config " + config + " --data " + data + " --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out));
  EXPECT_EQ(run_cli("--bogus"), 1);
  EXPECT_EQ(run_cli("fit --data " + data), 1);
  EXPECT_EQ(run_cli("fit --config " + config + " --data /nonexistent.csv"), 2);
  EXPECT_EQ(run_cli("forecast --config " + config + " --data " + data + " --horizon 50"), 2);

  const auto bad = temp_file("negative.csv");
  write_file_atomic(bad, "t,in,out,activity\n1,1,2,0.5\n2,-3,1,0.5\n");
  EXPECT_EQ(run_cli("fit --config " + config + " --data " + bad.string()), 2);

  const auto unstable = temp_file("unstable.json");
  auto doc = json::parse(read_file(config));
  doc["series"][0]["theta"]["alpha"] = {0.8, 0.2};
  write_file_atomic(unstable, dump(doc));
  EXPECT_EQ(run_cli("simulate --config " + unstable.string()), 1);

  const auto sim_a = temp_file("sim_a.csv"), sim_b = temp_file("sim_b.csv");
  EXPECT_EQ(run_cli("simulate --config " + config + " --n 50 --seed 9 --out " + sim_a.string()), 0);
  EXPECT_EQ(run_cli("simulate --config " + config + " --n 50 --seed 9 --out " + sim_b.string()), 0);
  EXPECT_EQ(read_file(sim_a), read_file(sim_b));
  for (const auto& p : {out, bad, unstable, sim_a, sim_b}) fs::remove(p);
}
