// poarx: fit, forecast, simulate and evaluate multivariate Poisson
// autoregressions from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical or convergence error.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "poarx/poarx.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct GlobalFlags {
  std::string config;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 1;
};

poarx::io::Config load(const GlobalFlags& g) {
  if (g.config.empty()) throw poarx::ConfigError("--config is required");
  auto cfg = poarx::io::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

poarx::io::Dataset load_data(const GlobalFlags& g, const poarx::io::Config& cfg) {
  if (g.data.empty()) throw poarx::ConfigError("--data is required");
  return poarx::io::load_dataset(g.data, cfg.schema());
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    poarx::io::write_file_atomic(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multivariate Poisson autoregression with Frank copula dependence"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--data", g.data, "CSV dataset");
  app.add_option("--seed", g.seed, "Random seed (overrides the configuration)");
  app.add_option("--out", g.out, "Output file (default: stdout)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* fit = app.add_subcommand("fit", "Two-stage estimation; writes a JSON report");

  std::string model_path, tidy_out;
  std::optional<std::size_t> horizon;
  auto* fc = app.add_subcommand("forecast", "Intensities and prediction intervals; writes CSV");
  fc->add_option("--model", model_path, "Fit report to take parameters from");
  fc->add_option("--horizon", horizon, "Forecast horizon")->check(CLI::PositiveNumber);
  fc->add_option("--tidy-out", tidy_out, "Also write a long-format CSV");

  std::optional<std::size_t> n;
  auto* sim = app.add_subcommand("simulate", "Simulate a dataset from configured parameters");
  sim->add_option("--n", n, "Number of observations")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("evaluate", "Log scores, AIC and BIC; writes a JSON report");
  ev->add_option("--tidy-out", tidy_out, "Also write a long-format CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const auto cfg = load(g);
    if (*fit) {
      const auto data = load_data(g, cfg);
      emit(g.out, poarx::cmd::cmd_fit(cfg, data.data, g.threads));
    } else if (*fc) {
      const auto data = load_data(g, cfg);
      std::optional<poarx::io::json> model;
      if (!model_path.empty()) {
        try {
          model = poarx::io::json::parse(poarx::io::read_file(model_path));
        } catch (const poarx::io::json::parse_error& e) {
          throw poarx::ConfigError("model file " + model_path + ": " + e.what());
        }
      }
      const auto res = poarx::cmd::cmd_forecast(cfg, data, model, horizon, g.threads);
      emit(g.out, res.csv);
      if (!tidy_out.empty()) emit(tidy_out, res.tidy);
    } else if (*sim) {
      emit(g.out, poarx::cmd::cmd_simulate(cfg, n));
    } else if (*ev) {
      const auto data = load_data(g, cfg);
      const auto res = poarx::cmd::cmd_evaluate(cfg, data.data, g.threads);
      emit(g.out, res.report);
      if (!tidy_out.empty()) emit(tidy_out, res.tidy);
    }
  } catch (const poarx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const poarx::DomainError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const poarx::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const poarx::ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << '\n';
    return kNumerical;
  } catch (const poarx::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
