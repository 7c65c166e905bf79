#pragma once

// Forecasting: intensity recursions for horizon h, exact one- and two-step
// predictive distributions, and simulation-based prediction intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "poarx/copula.hpp"
#include "poarx/dists.hpp"
#include "poarx/errors.hpp"
#include "poarx/model.hpp"
#include "poarx/parallel.hpp"
#include "poarx/random.hpp"
#include "poarx/simulation.hpp"

namespace poarx {

/// Upper tail mass left out when truncating predictive pmfs.
inline constexpr double kPmfTailMass = 1e-12;

/// Everything known at the forecast origin t: parameters, the observed
/// history with its filtered intensities, and covariate rows x_t, x_{t+1}, ...
/// (row k feeds lambda_{t+k+1}).
struct ForecastContext {
  ModelSpec spec;
  ThetaFull theta;
  SeriesData history;
  std::vector<std::vector<double>> lambda;
  std::vector<CovariateMatrix> future_x;
  InitPolicy init;
};

inline ForecastContext make_forecast_context(ModelSpec spec, ThetaFull theta, SeriesData history,
                                             std::vector<CovariateMatrix> future_x,
                                             const InitPolicy& init = InitPolicy::sample_mean()) {
  spec.normalize();
  history.validate(spec);
  if (theta.margins.size() != spec.dim()) throw DomainError("forecast: theta does not match the spec");
  if (future_x.size() != spec.dim()) throw DataError("forecast: one future covariate matrix per series is required");
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    if (static_cast<std::size_t>(future_x[j].cols()) != spec.margins[j].n_covariates) {
      throw DataError("forecast: future covariates of series " + std::to_string(j + 1) +
                      " have the wrong number of columns");
    }
  }
  if (history.length() < static_cast<std::size_t>(std::max_element(spec.margins.begin(), spec.margins.end(),
                                                                     [](const auto& a, const auto& b) {
                                                                       return a.max_lag() < b.max_lag();
                                                                     })->max_lag())) {
    throw DataError("forecast: history is shorter than the largest lag");
  }
  ForecastContext ctx{std::move(spec), std::move(theta), std::move(history), {}, std::move(future_x), init};
  ctx.lambda = filter_all(ctx.spec, ctx.theta, ctx.history, init);
  return ctx;
}

namespace detail {

/// Recursion states positioned at the forecast origin.
inline std::vector<IntensityState> origin_states(const ForecastContext& ctx) {
  std::vector<IntensityState> states;
  states.reserve(ctx.spec.dim());
  for (std::size_t j = 0; j < ctx.spec.dim(); ++j) {
    const auto pre = resolve_presample(ctx.init, ctx.spec.margins[j], ctx.history.y[j]);
    IntensityState s(ctx.spec.margins[j], ctx.theta.margins[j], pre.y, pre.lambda);
    for (std::size_t t = 0; t < ctx.history.length(); ++t) {
      s.push(static_cast<double>(ctx.history.y[j][t]), ctx.lambda[j][t]);
    }
    states.push_back(std::move(s));
  }
  return states;
}

inline std::span<const double> future_row(const ForecastContext& ctx, std::size_t j, std::size_t k) {
  const auto& x = ctx.future_x[j];
  if (x.cols() == 0) return {};
  if (static_cast<std::size_t>(x.rows()) <= k) {
    throw DataError("forecast: series " + std::to_string(j + 1) + " needs covariate rows for " +
                    std::to_string(k + 1) + " future steps, only " + std::to_string(x.rows()) + " supplied");
  }
  return covariate_row(x, k);
}

}  // namespace detail

/// lambda_{t+1|t} for every series.
inline std::vector<double> one_step_intensity(const ForecastContext& ctx) {
  const auto states = detail::origin_states(ctx);
  std::vector<double> out(ctx.spec.dim());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = states[j].next_intensity(detail::future_row(ctx, j, 0));
  return out;
}

/// lambda_{t+k|t}, k = 1..h, per series. Unobserved counts are replaced by
/// their conditional means.
inline std::vector<std::vector<double>> h_step_intensity(const ForecastContext& ctx, std::size_t h) {
  if (h < 1) throw DomainError("h_step_intensity: horizon must be at least 1");
  auto states = detail::origin_states(ctx);
  std::vector<std::vector<double>> out(ctx.spec.dim(), std::vector<double>(h));
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t k = 0; k < h; ++k) {
      const double lam = states[j].next_intensity(detail::future_row(ctx, j, k));
      out[j][k] = lam;
      states[j].push(lam, lam);
    }
  }
  return out;
}

/// Poisson pmf truncated at y_max, or where the upper tail drops below
/// kPmfTailMass when y_max is not given.
inline std::vector<double> truncated_poisson_pmf(double lambda, std::optional<Count> y_max = std::nullopt) {
  std::vector<double> pmf;
  if (y_max) {
    for (Count y = 0; y <= *y_max; ++y) pmf.push_back(poisson_pmf(y, lambda));
    return pmf;
  }
  PoissonCdfWalker walk(lambda);
  pmf.push_back(walk.term());
  while (walk.cdf() < 1.0 - kPmfTailMass || static_cast<double>(walk.count()) < lambda) {
    walk.advance();
    pmf.push_back(poisson_pmf(walk.count(), lambda));
    if (walk.saturated()) break;
  }
  return pmf;
}

inline std::vector<double> one_step_pmf(const ForecastContext& ctx, std::size_t j,
                                        std::optional<Count> y_max = std::nullopt) {
  if (j >= ctx.spec.dim()) throw DomainError("one_step_pmf: series index out of range");
  return truncated_poisson_pmf(one_step_intensity(ctx)[j], y_max);
}

/// Two-step predictive pmf as the Poisson mixture
///   pmf(y) = sum_k Poisson(k; lambda1) Poisson(y; c + alpha1 k),
/// i.e. the distribution with generating function
///   exp((z - 1) c) exp(lambda1 (e^{(z - 1) alpha1} - 1)).
/// With alpha1 = 0 this is exactly Poisson(c).
inline std::vector<double> two_step_mixture_pmf(double lambda1, double c, double alpha1,
                                                std::optional<Count> y_max = std::nullopt) {
  if (!(c >= 0.0) || !(alpha1 >= 0.0) || !std::isfinite(c) || !std::isfinite(alpha1)) {
    throw DomainError("two_step_mixture_pmf: c and alpha1 must be finite and non-negative");
  }
  if (alpha1 == 0.0) {
    if (c > 0.0) return truncated_poisson_pmf(c, y_max);
    std::vector<double> point_mass(y_max ? static_cast<std::size_t>(*y_max) + 1 : 1, 0.0);
    point_mass[0] = 1.0;
    return point_mass;
  }
  detail::require_intensity(lambda1, "two_step_mixture_pmf");
  // Mixing weights over y_{t+1}, truncated where the Poisson(lambda1) tail is negligible.
  std::vector<double> weights;
  PoissonCdfWalker walk(lambda1);
  weights.push_back(walk.term());
  while (walk.cdf() < 1.0 - kPmfTailMass || static_cast<double>(walk.count()) < lambda1) {
    walk.advance();
    weights.push_back(poisson_pmf(walk.count(), lambda1));
    if (walk.saturated()) break;
  }
  Count top = 0;
  if (y_max) {
    top = *y_max;
  } else {
    const double m = c + alpha1 * static_cast<double>(weights.size() - 1);
    top = static_cast<Count>(std::ceil(m + 12.0 * std::sqrt(m) + 20.0));
  }
  std::vector<double> pmf(static_cast<std::size_t>(top) + 1, 0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double mu = c + alpha1 * static_cast<double>(k);
    if (mu == 0.0) {
      pmf[0] += weights[k];
      continue;
    }
    for (Count y = 0; y <= top; ++y) pmf[static_cast<std::size_t>(y)] += weights[k] * poisson_pmf(y, mu);
  }
  return pmf;
}

/// Components of the two-step law for series j: lambda_{t+1|t}, the part
/// c_{t+2} of lambda_{t+2} known at t, and the lag-1 observation coefficient.
struct TwoStepComponents {
  double lambda1 = 0.0;
  double c = 0.0;
  double alpha1 = 0.0;
};

inline TwoStepComponents two_step_components(const ForecastContext& ctx, std::size_t j) {
  if (j >= ctx.spec.dim()) throw DomainError("two_step_pmf_exact: series index out of range");
  auto states = detail::origin_states(ctx);
  TwoStepComponents out;
  out.lambda1 = states[j].next_intensity(detail::future_row(ctx, j, 0));
  // Every term of lambda_{t+2} except alpha_1 y_{t+1}: evaluate with y_{t+1} = 0.
  states[j].push(0.0, out.lambda1);
  out.c = states[j].next_intensity(detail::future_row(ctx, j, 1));
  const auto& lags = ctx.spec.margins[j].obs_lags;
  const auto it = std::find(lags.begin(), lags.end(), 1);
  if (it != lags.end()) out.alpha1 = ctx.theta.margins[j].alpha[static_cast<std::size_t>(it - lags.begin())];
  return out;
}

inline std::vector<double> two_step_pmf_exact(const ForecastContext& ctx, std::size_t j,
                                              std::optional<Count> y_max = std::nullopt) {
  const auto parts = two_step_components(ctx, j);
  return two_step_mixture_pmf(parts.lambda1, parts.c, parts.alpha1, y_max);
}

/// Simulated counts draws[j][k][b] for series j, horizon k + 1, replicate b.
/// Replicate b uses the stream derived from (seed, b).
inline std::vector<std::vector<std::vector<Count>>> simulate_forecast_paths(const ForecastContext& ctx,
                                                                            std::size_t h, std::size_t replicates,
                                                                            std::uint64_t seed,
                                                                            std::size_t threads = 1) {
  if (h < 1) throw DomainError("simulate_forecast_paths: horizon must be at least 1");
  const std::size_t dim = ctx.spec.dim();
  for (std::size_t j = 0; j < dim; ++j) {
    if (ctx.spec.margins[j].n_covariates > 0) (void)detail::future_row(ctx, j, h - 1);
  }
  const Dependence dep = ctx.spec.is_frank() && ctx.theta.rho ? ctx.theta.dependence()
                                                               : Dependence::independence();
  const auto origin = detail::origin_states(ctx);
  std::vector<std::vector<std::vector<Count>>> draws(
      dim, std::vector<std::vector<Count>>(h, std::vector<Count>(replicates)));
  parallel_for(replicates, threads, [&](std::size_t b) {
    Rng rng = make_stream(seed, b);
    auto states = origin;
    std::vector<double> lam(dim);
    for (std::size_t k = 0; k < h; ++k) {
      for (std::size_t j = 0; j < dim; ++j) lam[j] = states[j].next_intensity(detail::future_row(ctx, j, k));
      const auto u = draw_coupling_uniforms(dep, dim, rng);
      for (std::size_t j = 0; j < dim; ++j) {
        const Count y = count_from_uniform(u[j], lam[j]);
        draws[j][k][b] = y;
        states[j].push(static_cast<double>(y), lam[j]);
      }
    }
  });
  return draws;
}

struct Interval {
  Count lower = 0;
  Count upper = 0;
};

/// Nearest-rank quantile interval at levels a/2 and 1 - a/2, a = 1 - level.
inline Interval empirical_interval(std::vector<Count> sample, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("interval level must lie in (0, 1)");
  if (sample.empty()) throw DomainError("empirical_interval: empty sample");
  std::sort(sample.begin(), sample.end());
  const double a = 1.0 - level;
  const auto n = static_cast<double>(sample.size());
  auto rank = [&](double p) {
    const double r = std::ceil(p * n - 1e-9);
    return static_cast<std::size_t>(std::clamp(r, 1.0, n)) - 1;
  };
  return {sample[rank(a / 2.0)], sample[rank(1.0 - a / 2.0)]};
}

/// intervals[j][k] for series j and horizon k + 1 from B simulated paths.
inline std::vector<std::vector<Interval>> prediction_intervals(const ForecastContext& ctx, std::size_t h,
                                                               std::size_t replicates, double level,
                                                               std::uint64_t seed, std::size_t threads = 1) {
  if (replicates < 100) throw DomainError("prediction_intervals: at least 100 replicates are required");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("prediction_intervals: level must lie in (0, 1)");
  const auto draws = simulate_forecast_paths(ctx, h, replicates, seed, threads);
  std::vector<std::vector<Interval>> out(ctx.spec.dim(), std::vector<Interval>(h));
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t k = 0; k < h; ++k) out[j][k] = empirical_interval(draws[j][k], level);
  }
  return out;
}

struct ForecastOptions {
  std::size_t horizon = 1;
  std::size_t replicates = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool intervals = true;
  bool pmfs = false;
};

struct ForecastResult {
  std::vector<std::vector<double>> intensities;      // [series][horizon]
  std::vector<std::vector<double>> point_forecasts;  // conditional means
  std::optional<std::vector<std::vector<Interval>>> intervals;
  double level = 0.95;
  std::optional<std::vector<std::vector<double>>> pmf_1step;
  std::optional<std::vector<std::vector<double>>> pmf_2step_exact;
};

inline ForecastResult forecast(const ForecastContext& ctx, const ForecastOptions& options) {
  ForecastResult out;
  out.intensities = h_step_intensity(ctx, options.horizon);
  out.point_forecasts = out.intensities;
  out.level = options.level;
  if (options.intervals) {
    out.intervals = prediction_intervals(ctx, options.horizon, options.replicates, options.level, options.seed,
                                         options.threads);
  }
  if (options.pmfs) {
    out.pmf_1step.emplace();
    for (std::size_t j = 0; j < ctx.spec.dim(); ++j) out.pmf_1step->push_back(one_step_pmf(ctx, j));
    if (options.horizon >= 2) {
      out.pmf_2step_exact.emplace();
      for (std::size_t j = 0; j < ctx.spec.dim(); ++j) out.pmf_2step_exact->push_back(two_step_pmf_exact(ctx, j));
    }
  }
  return out;
}

}  // namespace poarx
