#pragma once

// The four user-facing commands. Each returns the text of its output files
// so callers decide where and when to write them.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "poarx/errors.hpp"
#include "poarx/estimation.hpp"
#include "poarx/evaluation.hpp"
#include "poarx/forecasting.hpp"
#include "poarx/io.hpp"
#include "poarx/random.hpp"
#include "poarx/simulation.hpp"

namespace poarx::cmd {

using io::Config;
using io::json;

inline FitOptions fit_options(const Config& cfg, std::size_t threads) {
  FitOptions o;
  o.init = cfg.estimation.init;
  o.tolerance = cfg.estimation.tolerance;
  o.max_iterations = cfg.estimation.max_iterations;
  o.threads = threads;
  o.sandwich = cfg.estimation.sandwich;
  return o;
}

inline json fit_json(const Config& cfg, const FitResult& fit, const SeriesData& data) {
  std::optional<Eigen::MatrixXd> sandwich;
  std::vector<std::string> warnings = fit.warnings;
  if (cfg.estimation.sandwich) sandwich = sandwich_covariance(fit, data, &warnings);

  json series = json::array();
  Eigen::Index offset = 0;
  for (std::size_t j = 0; j < fit.margins.size(); ++j) {
    const auto& ms = fit.spec.margins[j];
    const auto& fm = fit.margins[j];
    const auto names = ms.parameter_names();
    const auto values = fm.params.to_vector(ms);
    json coefs = json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
      json c{{"name", names[i]}, {"estimate", values[i]}};
      c["se"] = fm.se_available ? json(fm.se[i]) : json(nullptr);
      if (sandwich) {
        const auto k = offset + static_cast<Eigen::Index>(i);
        c["sandwich_se"] = std::sqrt(std::max(0.0, (*sandwich)(k, k)));
      }
      coefs.push_back(std::move(c));
    }
    offset += static_cast<Eigen::Index>(names.size());
    series.push_back({{"name", cfg.series[j].name},
                      {"coefficients", std::move(coefs)},
                      {"loglik", fm.loglik},
                      {"n_obs", fm.n_obs},
                      {"stability_margin", fm.stability.margin},
                      {"converged", fm.convergence.converged},
                      {"iterations", fm.convergence.iterations},
                      {"start", fm.convergence.start}});
  }
  json rho = "-";
  if (fit.rho) {
    rho = {{"estimate", fit.rho->value},
           {"se", std::isfinite(fit.rho->se) ? json(fit.rho->se) : json(nullptr)},
           {"profile_loglik", fit.rho->profile_loglik},
           {"independence_loglik", fit.rho->independence_loglik}};
    if (sandwich) rho["sandwich_se"] = std::sqrt(std::max(0.0, (*sandwich)(offset, offset)));
  }
  const auto ic = information_criteria(fit.joint_loglik, fit.n_params, fit.n_obs);
  json out;
  out["series"] = std::move(series);
  out["rho"] = std::move(rho);
  out["loglik"] = fit.joint_loglik;
  out["aic"] = ic.aic;
  out["bic"] = ic.bic;
  out["n_params"] = fit.n_params;
  out["n_obs"] = fit.n_obs;
  out["init_policy"] = fit.init.name();
  out["clamped_rectangles"] = fit.clamped;
  out["warnings"] = warnings;
  return out;
}

/// Fit report: coefficient tables with standard errors, rho ("-" under
/// independence), likelihood, criteria and the resolved configuration.
inline std::string cmd_fit(const Config& cfg, const SeriesData& data, std::size_t threads = 1) {
  const ModelSpec spec = cfg.model_spec();
  const FitResult fit = fit_ifm(spec, data, fit_options(cfg, threads));
  json report;
  report["command"] = "fit";
  report["seed"] = cfg.seed;
  report["fit"] = fit_json(cfg, fit, data);
  report["config"] = io::config_json(cfg);
  return io::dump(report);
}

/// Parameters from a fit report written by cmd_fit.
inline ThetaFull theta_from_report(const json& report, const ModelSpec& spec) {
  try {
    const json& fit = report.at("fit");
    const json& series = fit.at("series");
    if (series.size() != spec.dim()) throw ConfigError("model file has a different number of series");
    ThetaFull theta;
    for (std::size_t j = 0; j < spec.dim(); ++j) {
      std::vector<double> v;
      for (const auto& c : series[j].at("coefficients")) v.push_back(c.at("estimate").get<double>());
      if (v.size() != spec.margins[j].n_params()) throw ConfigError("model file does not match the configured lags");
      theta.margins.push_back(MarginParams::from_vector(spec.margins[j], v));
    }
    if (spec.is_frank()) {
      if (!fit.at("rho").is_object()) throw ConfigError("model file has no rho for a Frank model");
      theta.rho = fit["rho"].at("estimate").get<double>();
    }
    return theta;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
}

struct ForecastOutput {
  std::string csv;
  std::string tidy;
};

/// Per-series, per-horizon intensities and prediction intervals. Parameters
/// come from `model` (a fit report), else from the configuration, else from
/// a fit on the data.
inline ForecastOutput cmd_forecast(const Config& cfg, const io::Dataset& dataset, const std::optional<json>& model,
                                   std::optional<std::size_t> horizon = std::nullopt, std::size_t threads = 1) {
  const ModelSpec spec = cfg.model_spec();
  const std::size_t h = horizon.value_or(cfg.forecast.horizon);
  if (h < 1) throw ConfigError("forecast horizon must be at least 1");
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    if (spec.margins[j].n_covariates > 0 && static_cast<std::size_t>(dataset.future_x[j].rows()) < h) {
      throw DataError("forecast to horizon " + std::to_string(h) + " needs " + std::to_string(h) +
                      " future covariate rows after the last observation, found " +
                      std::to_string(dataset.future_x[j].rows()));
    }
  }
  ThetaFull theta;
  if (model) {
    theta = theta_from_report(*model, spec);
  } else if (const auto given = cfg.theta()) {
    theta = *given;
  } else {
    theta = fit_ifm(spec, dataset.data, fit_options(cfg, threads)).theta();
  }
  const auto ctx = make_forecast_context(spec, theta, dataset.data, dataset.future_x, cfg.estimation.init);
  ForecastOptions opts;
  opts.horizon = h;
  opts.replicates = cfg.forecast.replicates;
  opts.level = cfg.forecast.level;
  opts.seed = cfg.seed;
  opts.threads = threads;
  const ForecastResult res = forecast(ctx, opts);

  ForecastOutput out;
  out.csv = io::csv_line({"series", "horizon", "intensity", "lower", "upper"});
  out.tidy = io::csv_line({"series", "horizon", "quantity", "value"});
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    const std::string& name = cfg.series[j].name;
    for (std::size_t k = 0; k < h; ++k) {
      const auto& iv = (*res.intervals)[j][k];
      const std::string hk = std::to_string(k + 1);
      const std::string lam = io::format_double(res.intensities[j][k]);
      out.csv += io::csv_line({name, hk, lam, std::to_string(iv.lower), std::to_string(iv.upper)});
      out.tidy += io::csv_line({name, hk, "intensity", lam});
      out.tidy += io::csv_line({name, hk, "lower", std::to_string(iv.lower)});
      out.tidy += io::csv_line({name, hk, "upper", std::to_string(iv.upper)});
    }
  }
  return out;
}

/// Dataset CSV simulated from the parameters in the configuration.
/// Covariate columns are generated once per column name, so series that
/// share a column share its values.
inline std::string cmd_simulate(const Config& cfg, std::optional<std::size_t> n_override = std::nullopt) {
  const ModelSpec spec = cfg.model_spec();
  const auto theta = cfg.theta();
  if (!theta) throw ConfigError("simulate needs theta for every series (and rho for a Frank model)");
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    if (!check_stability(theta->margins[j]).stable) {
      throw ConfigError("series '" + cfg.series[j].name + "': sum of alpha and beta must be below 1");
    }
  }
  SimConfig sim;
  sim.spec = spec;
  sim.theta = *theta;
  sim.n = n_override.value_or(cfg.simulate.n);
  sim.burn_in = cfg.simulate.burn_in;
  sim.seed = cfg.seed;
  if (sim.n == 0) throw ConfigError("simulate: n must be positive");

  const std::size_t total = sim.burn_in + sim.n;
  std::vector<std::string> names;
  std::vector<CovariateMatrix> columns;
  auto column_of = [&](const std::string& name) -> const CovariateMatrix& {
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == name) return columns[c];
    }
    Rng rng(derive_seed(cfg.seed, 1000 + names.size()));
    names.push_back(name);
    columns.push_back(synthetic_covariates(total, 1, rng));
    return columns.back();
  };
  bool any = false;
  std::vector<CovariateMatrix> x(spec.dim());
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    const auto& cols = cfg.series[j].covariates;
    x[j] = CovariateMatrix(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      x[j].col(static_cast<Eigen::Index>(k)) = column_of(cols[k]).col(0);
      any = true;
    }
  }
  if (any) sim.covariates = std::move(x);

  SimResult res = simulate_poarx(sim);
  if (cfg.time_column) {
    res.data.time.resize(sim.n);
    for (std::size_t t = 0; t < sim.n; ++t) res.data.time[t] = static_cast<std::int64_t>(t + 1);
  }
  return io::format_dataset(res.data, cfg.schema());
}

/// The four-model comparison menu: independence or Frank dependence, with
/// and without the configured covariates.
inline std::vector<std::pair<std::string, Config>> model_menu(const Config& cfg) {
  if (cfg.series.size() < 2) throw ConfigError("the model menu needs at least two series");
  std::vector<std::pair<std::string, Config>> menu;
  for (const bool covariates : {false, true}) {
    for (const auto dep : {Dependence::Kind::independence, Dependence::Kind::frank}) {
      Config c = cfg;
      c.dependence = dep;
      for (auto& s : c.series) {
        s.theta.reset();
        if (!covariates) {
          s.covariates.clear();
          s.margin.n_covariates = 0;
        }
      }
      std::string name = dep == Dependence::Kind::frank ? "frank" : "independence";
      if (covariates) name += "+covariates";
      menu.emplace_back(std::move(name), std::move(c));
    }
  }
  return menu;
}

struct ModelScore {
  std::string name;
  FitResult fit;
  std::optional<ScoreReport> cv;
  std::optional<double> holdout;
};

namespace detail {

// Menu entries without covariates drop the loaded covariate columns.
inline SeriesData drop_unused_covariates(const Config& cfg, SeriesData data) {
  for (std::size_t j = 0; j < cfg.series.size(); ++j) {
    if (cfg.series[j].covariates.empty()) data.x[j] = CovariateMatrix(data.x[j].rows(), 0);
  }
  return data;
}

}  // namespace detail

/// Fits one model on the training rows and scores it.
inline ModelScore score_model(const std::string& name, const Config& cfg, const SeriesData& train_in,
                              const SeriesData& test_in, std::size_t threads) {
  const ModelSpec spec = cfg.model_spec();
  const SeriesData train = detail::drop_unused_covariates(cfg, train_in);
  const SeriesData test = detail::drop_unused_covariates(cfg, test_in);
  ModelScore out;
  out.name = name;
  out.fit = fit_ifm(spec, train, fit_options(cfg, threads));
  if (cfg.evaluate.folds > 0) {
    CvOptions cv;
    cv.n_folds = cfg.evaluate.folds;
    cv.fold_length = cfg.evaluate.fold_length;
    cv.fit = fit_options(cfg, threads);
    cv.full_fit_criteria = false;
    out.cv = cv_log_score(spec, train, cv);
  }
  if (test.length() > 0) out.holdout = holdout_log_score(out.fit, train, test);
  return out;
}

struct EvaluateOutput {
  std::string report;
  std::string tidy;
};

/// Score report: per-model likelihood, AIC, BIC, cross-validated and holdout
/// log scores. The holdout section is absent when all rows are training rows.
inline EvaluateOutput cmd_evaluate(const Config& cfg, const SeriesData& data, std::size_t threads = 1) {
  const std::size_t n = data.length();
  const std::size_t train_n = cfg.evaluate.train.value_or(n);
  if (train_n == 0 || train_n > n) {
    throw ConfigError("evaluate: training split " + std::to_string(train_n) + " is outside [1, " +
                      std::to_string(n) + "]");
  }
  const SeriesData train = data.slice(0, train_n);
  const SeriesData test = data.slice(train_n, n);

  std::vector<std::pair<std::string, Config>> models;
  if (cfg.evaluate.menu) {
    models = model_menu(cfg);
  } else {
    models.emplace_back(cfg.dependence == Dependence::Kind::frank ? "frank" : "independence", cfg);
  }

  EvaluateOutput out;
  out.tidy = io::csv_line({"model", "metric", "value"});
  json rows = json::array();
  std::optional<std::pair<std::string, double>> best;
  for (const auto& [name, mcfg] : models) {
    const ModelScore s = score_model(name, mcfg, train, test, threads);
    const auto ic = information_criteria(s.fit.joint_loglik, s.fit.n_params, s.fit.n_obs);
    json row{{"model", name},
             {"n_params", s.fit.n_params},
             {"n_obs", s.fit.n_obs},
             {"loglik", s.fit.joint_loglik},
             {"aic", ic.aic},
             {"bic", ic.bic}};
    row["rho"] = s.fit.rho ? json(s.fit.rho->value) : json("-");
    std::vector<std::pair<std::string, double>> metrics = {
        {"loglik", s.fit.joint_loglik}, {"aic", ic.aic}, {"bic", ic.bic}};
    if (s.cv) {
      json folds = json::array();
      for (const auto& f : s.cv->per_fold) {
        json fj{{"start", f.start}, {"length", f.length}, {"n_scored", f.n_scored}, {"skipped", f.skipped}};
        fj["log_score"] = f.skipped ? json(nullptr) : json(f.log_score);
        if (f.skipped) fj["message"] = f.message;
        folds.push_back(std::move(fj));
      }
      row["cv"] = {{"log_score", s.cv->log_score},
                   {"scored_observations", s.cv->scored_observations},
                   {"floored", s.cv->floored},
                   {"folds", std::move(folds)}};
      metrics.emplace_back("cv_log_score", s.cv->log_score);
    }
    if (s.holdout) {
      row["holdout_log_score"] = *s.holdout;
      metrics.emplace_back("holdout_log_score", *s.holdout);
      if (!best || *s.holdout > best->second) best.emplace(name, *s.holdout);
    }
    for (const auto& [metric, value] : metrics) out.tidy += io::csv_line({name, metric, io::format_double(value)});
    rows.push_back(std::move(row));
  }

  json report;
  report["command"] = "evaluate";
  report["seed"] = cfg.seed;
  report["split"] = {{"train", train_n}, {"test", n - train_n}};
  report["models"] = std::move(rows);
  if (best) report["best_holdout"] = best->first;
  report["config"] = io::config_json(cfg);
  out.report = io::dump(report);
  return out;
}

}  // namespace poarx::cmd
