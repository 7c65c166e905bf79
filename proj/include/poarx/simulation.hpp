#pragma once

// Trajectory generation. Each step computes the intensities from the
// recursion, draws a copula uniform vector (or independent uniforms) and maps
// it through the Poisson quantile function, which realizes the conditional
// law Y_t^j = N_t^j(lambda_t^j) jointly coupled by Frank's copula.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "poarx/copula.hpp"
#include "poarx/dists.hpp"
#include "poarx/errors.hpp"
#include "poarx/model.hpp"
#include "poarx/random.hpp"

namespace poarx {

/// Burn-in used when a stationary start is requested.
inline constexpr std::size_t kStationaryBurnIn = 500;

struct SimConfig {
  ModelSpec spec;
  ThetaFull theta;
  std::size_t n = 0;
  /// Per-series covariates with burn_in + n rows. When absent and the spec
  /// has covariates, a synthetic generator is used.
  std::optional<std::vector<CovariateMatrix>> covariates;
  /// Pre-sample y and lambda per series; defaults to the unconditional mean.
  std::optional<std::vector<double>> presample;
  std::size_t burn_in = 0;
  std::uint64_t seed = 0;
};

struct SimResult {
  SeriesData data;
  std::vector<std::vector<double>> lambda;
  bool synthetic_covariates = false;
};

/// Stationary AR(1) covariates clipped at zero. Test scaffolding only.
inline CovariateMatrix synthetic_covariates(std::size_t rows, std::size_t cols, Rng& rng) {
  CovariateMatrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  constexpr double mean = 1.0, phi = 0.7, sigma = 0.5;
  for (std::size_t k = 0; k < cols; ++k) {
    double prev = mean;
    for (std::size_t t = 0; t < rows; ++t) {
      // Box-Muller normal from two uniforms.
      const double z = std::sqrt(-2.0 * std::log(uniform_open01(rng))) *
                       std::cos(6.283185307179586 * uniform01(rng));
      prev = mean * (1.0 - phi) + phi * prev + sigma * z;
      x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = std::max(0.0, prev);
    }
  }
  return x;
}

/// Draws the uniform vector coupling the K counts at one time point.
template <class URBG>
std::vector<double> draw_coupling_uniforms(const Dependence& dep, std::size_t dim, URBG& rng) {
  if (dim >= 2 && !dep.acts_as_independence()) return frank_sample(dim, dep.rho(), rng);
  std::vector<double> u(dim);
  for (auto& v : u) v = uniform01(rng);
  return u;
}

/// Count with Poisson(lambda) law at quantile level u; zero intensity gives 0.
inline Count count_from_uniform(double u, double lambda) {
  if (lambda == 0.0) return 0;
  constexpr double below_one = 0x1.fffffffffffffp-1;
  return poisson_quantile(std::min(u, below_one), lambda);
}

inline SimResult simulate_poarx(const SimConfig& config) {
  ModelSpec spec = config.spec;
  spec.normalize();
  const std::size_t dim = spec.dim();
  if (config.theta.margins.size() != dim) throw DomainError("simulate_poarx: theta does not match the spec");
  for (std::size_t j = 0; j < dim; ++j) {
    config.theta.margins[j].validate(spec.margins[j]);
    if (!check_stability(config.theta.margins[j]).stable) {
      throw DomainError("simulate_poarx: parameters of series " + std::to_string(j + 1) +
                        " violate the stability condition");
    }
  }
  const Dependence dep = spec.is_frank() && config.theta.rho ? config.theta.dependence()
                                                             : Dependence::independence();
  if (dep.is_frank()) detail::require_rho(dep.rho(), dim, "simulate_poarx");

  const std::size_t total = config.burn_in + config.n;
  Rng rng(derive_seed(config.seed, 0));
  SimResult out;

  std::vector<CovariateMatrix> x(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    const std::size_t r = spec.margins[j].n_covariates;
    if (r == 0) {
      x[j] = CovariateMatrix(static_cast<Eigen::Index>(total), 0);
    } else if (config.covariates) {
      const auto& given = (*config.covariates).at(j);
      if (static_cast<std::size_t>(given.cols()) != r || static_cast<std::size_t>(given.rows()) < total) {
        throw DataError("simulate_poarx: covariates for series " + std::to_string(j + 1) +
                        " need burn_in + n rows and " + std::to_string(r) + " columns");
      }
      x[j] = given.topRows(static_cast<Eigen::Index>(total));
    } else {
      Rng cov_rng(derive_seed(config.seed, 1 + j));
      x[j] = synthetic_covariates(total, r, cov_rng);
      out.synthetic_covariates = true;
    }
  }

  std::vector<IntensityState> states;
  states.reserve(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    double pre = 0.0;
    if (config.presample) {
      pre = config.presample->at(j);
    } else {
      double cov_effect = 0.0;
      const auto& p = config.theta.margins[j];
      for (std::size_t k = 0; k < p.eta.size(); ++k) {
        cov_effect += p.eta[k] * x[j].col(static_cast<Eigen::Index>(k)).mean();
      }
      pre = unconditional_mean(p, cov_effect);
    }
    states.emplace_back(spec.margins[j], config.theta.margins[j], pre, pre);
  }

  out.data.y.assign(dim, std::vector<Count>(config.n));
  out.lambda.assign(dim, std::vector<double>(config.n));
  std::vector<double> lam(dim);
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t j = 0; j < dim; ++j) {
      lam[j] = states[j].next_intensity(covariate_row(x[j], t));
      if (!std::isfinite(lam[j])) throw NumericalError("simulate_poarx: non-finite intensity");
    }
    const auto u = draw_coupling_uniforms(dep, dim, rng);
    for (std::size_t j = 0; j < dim; ++j) {
      const Count y = count_from_uniform(u[j], lam[j]);
      states[j].push(static_cast<double>(y), lam[j]);
      if (t >= config.burn_in) {
        out.data.y[j][t - config.burn_in] = y;
        out.lambda[j][t - config.burn_in] = lam[j];
      }
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    out.data.x.push_back(x[j].bottomRows(static_cast<Eigen::Index>(config.n)));
  }
  return out;
}

}  // namespace poarx
