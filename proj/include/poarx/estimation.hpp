#pragma once

// Two-stage inference-functions-for-margins (IFM) estimation: every margin is
// fitted by maximum likelihood on its own, then the Frank dependence
// parameter is fitted on the profile joint likelihood with margins held fixed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poarx/copula.hpp"
#include "poarx/dists.hpp"
#include "poarx/errors.hpp"
#include "poarx/model.hpp"
#include "poarx/optimize.hpp"
#include "poarx/parallel.hpp"

namespace poarx {

/// Lower floor on omega during optimization.
inline constexpr double kOmegaMin = 1e-8;
/// Candidate parameters with sum alpha + sum beta >= 1 - kStabilityEps are infeasible.
inline constexpr double kStabilityEps = 1e-6;
/// Relative finite-difference step for Hessians on the natural scale.
inline constexpr double kHessianStep = 1e-4;
/// Tolerance of the scalar dependence search.
inline constexpr double kRhoTolerance = 1e-6;

struct FitOptions {
  InitPolicy init = InitPolicy::sample_mean();
  double tolerance = 1e-8;
  int max_iterations = 500;
  std::size_t threads = 1;
  bool sandwich = false;
};

struct ConvergenceInfo {
  bool converged = false;
  int iterations = 0;
  int start = -1;  // index of the multi-start that produced the estimate
  std::string message;
  std::vector<double> loglik_trace;  // log-likelihood at accepted iterates
};

struct FitMargin {
  MarginParams params;
  double loglik = 0.0;
  std::vector<double> se;
  Eigen::MatrixXd hessian_inverse;  // inverse observed information
  bool se_available = false;
  ConvergenceInfo convergence;
  InitPolicy init_policy;
  StabilityCheck stability;
  std::size_t n_obs = 0;
  std::vector<std::string> warnings;
};

/// Thrown when no start converges; carries the best fit found.
class MarginConvergenceError : public ConvergenceError {
 public:
  MarginConvergenceError(const std::string& what, FitMargin best)
      : ConvergenceError(what), best_(std::move(best)) {}
  const FitMargin& best() const noexcept { return best_; }

 private:
  FitMargin best_;
};

struct RhoEstimate {
  double value = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double profile_loglik = 0.0;
  double independence_loglik = 0.0;
  bool at_boundary = false;
  bool independence_recommended = false;
  std::size_t clamped = 0;
};

struct FitResult {
  ModelSpec spec;
  std::vector<FitMargin> margins;
  std::optional<RhoEstimate> rho;
  double joint_loglik = 0.0;
  std::size_t n_params = 0;
  std::size_t n_obs = 0;
  std::size_t clamped = 0;
  InitPolicy init;
  std::optional<Eigen::MatrixXd> sandwich_cov;
  std::vector<std::string> warnings;

  ThetaFull theta() const {
    ThetaFull t;
    for (const auto& m : margins) t.margins.push_back(m.params);
    if (rho) t.rho = rho->value;
    return t;
  }
};

// --------------------------------------------------------------------------
// Marginal likelihood and score

struct MarginEvaluation {
  double loglik = 0.0;
  Eigen::VectorXd gradient;       // d loglik / d theta (natural scale)
  Eigen::MatrixXd contributions;  // per-observation score rows (optional)
  std::vector<double> lambda;
  std::size_t first_scored = 0;
};

enum class EvalMode { value, gradient, contributions };

/// Log-likelihood of one margin and, on request, its analytic score. The
/// intensity derivatives follow the recursion
///   d lambda_t = base_t + sum_l beta_l d lambda_{t-l},
/// with pre-sample intensities held fixed.
inline MarginEvaluation evaluate_margin(const MarginSpec& spec, const MarginParams& params,
                                        std::span<const Count> y, const CovariateMatrix& x,
                                        const InitPolicy& init, EvalMode mode) {
  MarginEvaluation out;
  out.lambda = filter_intensities(spec, params, y, x, init);
  const Presample pre = resolve_presample(init, spec, y);
  out.first_scored = pre.first_scored;
  const std::size_t n = y.size();
  const auto d = static_cast<Eigen::Index>(spec.n_params());
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();

  double ll = 0.0;
  for (std::size_t t = pre.first_scored; t < n; ++t) {
    const double lam = out.lambda[t];
    if (lam > 0.0) {
      ll += poisson_log_pmf(y[t], lam);
    } else if (lam < 0.0 || y[t] > 0) {
      ll = neg_inf;
      break;
    }
  }
  out.loglik = ll;
  if (mode == EvalMode::value) return out;

  out.gradient = Eigen::VectorXd::Zero(d);
  if (mode == EvalMode::contributions) out.contributions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), d);
  if (!std::isfinite(ll)) return out;

  Eigen::MatrixXd dlam = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), d);
  const std::size_t n_obs_lags = spec.obs_lags.size();
  const std::size_t n_mean_lags = spec.mean_lags.size();
  const Eigen::Index off_alpha = spec.intercept ? 1 : 0;
  const auto off_beta = off_alpha + static_cast<Eigen::Index>(n_obs_lags);
  const auto off_eta = off_beta + static_cast<Eigen::Index>(n_mean_lags);

  for (std::size_t t = pre.first_scored; t < n; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    if (spec.intercept) dlam(row, 0) = 1.0;
    for (std::size_t i = 0; i < n_obs_lags; ++i) {
      const auto l = static_cast<std::size_t>(spec.obs_lags[i]);
      dlam(row, off_alpha + static_cast<Eigen::Index>(i)) =
          t >= l ? static_cast<double>(y[t - l]) : pre.y;
    }
    for (std::size_t i = 0; i < n_mean_lags; ++i) {
      const auto l = static_cast<std::size_t>(spec.mean_lags[i]);
      dlam(row, off_beta + static_cast<Eigen::Index>(i)) = t >= l ? out.lambda[t - l] : pre.lambda;
    }
    for (std::size_t k = 0; k < spec.n_covariates; ++k) {
      dlam(row, off_eta + static_cast<Eigen::Index>(k)) = x(row, static_cast<Eigen::Index>(k));
    }
    for (std::size_t i = 0; i < n_mean_lags; ++i) {
      const auto l = static_cast<std::size_t>(spec.mean_lags[i]);
      if (t >= l + pre.first_scored) {
        dlam.row(row) += params.beta[i] * dlam.row(static_cast<Eigen::Index>(t - l));
      }
    }
    const double lam = out.lambda[t];
    const double w = lam > 0.0 ? static_cast<double>(y[t]) / lam - 1.0 : -1.0;
    if (mode == EvalMode::contributions) {
      out.contributions.row(row) = w * dlam.row(row);
      out.gradient += out.contributions.row(row).transpose();
    } else {
      out.gradient += w * dlam.row(row).transpose();
    }
  }
  return out;
}

/// Sum of Poisson log-pmfs along the filtered path; -inf for parameters that
/// violate the stability condition.
inline double marginal_log_lik(const MarginSpec& spec, const MarginParams& params,
                               std::span<const Count> y, const CovariateMatrix& x,
                               const InitPolicy& init) {
  if (!check_stability(params).stable) return -std::numeric_limits<double>::infinity();
  return evaluate_margin(spec, params, y, x, init, EvalMode::value).loglik;
}

/// Analytic gradient of marginal_log_lik with respect to the parameter
/// vector in MarginSpec::parameter_names() order.
inline Eigen::VectorXd marginal_score(const MarginSpec& spec, const MarginParams& params,
                                      std::span<const Count> y, const CovariateMatrix& x,
                                      const InitPolicy& init) {
  if (!check_stability(params).stable) {
    throw DomainError("marginal_score: parameters violate the stability condition");
  }
  return evaluate_margin(spec, params, y, x, init, EvalMode::gradient).gradient;
}

// --------------------------------------------------------------------------
// Margin fitting

namespace detail {

inline double lag1_autocorrelation(std::span<const Count> y) {
  const std::size_t n = y.size();
  if (n < 3) return 0.0;
  const double m = series_mean(y);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double c = static_cast<double>(y[t]) - m;
    den += c * c;
    if (t > 0) num += c * (static_cast<double>(y[t - 1]) - m);
  }
  return den > 0.0 ? num / den : 0.0;
}

inline MarginParams make_start(const MarginSpec& spec, double mean, std::span<const double> x_means,
                               double alpha_total, double beta_total, double covariate_share) {
  MarginParams p;
  const double persistence = (spec.obs_lags.empty() ? 0.0 : alpha_total) +
                             (spec.mean_lags.empty() ? 0.0 : beta_total);
  const double level = mean * (1.0 - persistence);
  for (std::size_t i = 0; i < spec.obs_lags.size(); ++i) {
    p.alpha.push_back(std::max(1e-4, alpha_total / static_cast<double>(spec.obs_lags.size())));
  }
  for (std::size_t i = 0; i < spec.mean_lags.size(); ++i) {
    p.beta.push_back(std::max(1e-4, beta_total / static_cast<double>(spec.mean_lags.size())));
  }
  const double share = spec.n_covariates == 0 ? 0.0 : (spec.intercept ? covariate_share : 1.0);
  for (std::size_t k = 0; k < spec.n_covariates; ++k) {
    const double xm = std::max(x_means[k], 1e-3);
    p.eta.push_back(std::max(1e-4, share * level / (static_cast<double>(spec.n_covariates) * xm)));
  }
  if (spec.intercept) p.omega = std::max(1e-4, (1.0 - share) * level);
  return p;
}

/// Three deterministic starts: moment-based, small coefficients, and
/// high persistence of the magnitude seen in half-hourly count data.
inline std::vector<MarginParams> starting_points(const MarginSpec& spec, std::span<const Count> y,
                                                 const CovariateMatrix& x) {
  const double mean = std::max(series_mean(y), kZeroSeriesPresample);
  std::vector<double> x_means(spec.n_covariates, 0.0);
  for (std::size_t k = 0; k < spec.n_covariates; ++k) {
    x_means[k] = x.rows() > 0 ? x.col(static_cast<Eigen::Index>(k)).mean() : 0.0;
  }
  const double acf = std::clamp(lag1_autocorrelation(y), 0.1, 0.9);
  const bool both = !spec.obs_lags.empty() && !spec.mean_lags.empty();
  return {
      make_start(spec, mean, x_means, both ? 0.5 * acf : acf, both ? 0.5 * acf : acf, 0.2),
      make_start(spec, mean, x_means, 0.05, 0.05, 0.1),
      make_start(spec, mean, x_means, 0.75, 0.15, 0.2),
  };
}

/// Maps unconstrained z to natural parameters: omega = kOmegaMin + e^z,
/// other coefficients e^z.
inline std::vector<double> from_log_scale(const MarginSpec& spec, const Eigen::VectorXd& z) {
  std::vector<double> v(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) v[static_cast<std::size_t>(i)] = std::exp(z(i));
  if (spec.intercept && !v.empty()) v[0] += kOmegaMin;
  return v;
}

inline Eigen::VectorXd to_log_scale(const MarginSpec& spec, const std::vector<double>& v) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    double value = v[i];
    if (spec.intercept && i == 0) value -= kOmegaMin;
    z(static_cast<Eigen::Index>(i)) = std::log(std::max(value, 1e-300));
  }
  return z;
}

/// Observed information -d^2 l / d theta^2 by central differences of the
/// analytic score. Coordinates too close to zero for a central step use a
/// forward difference.
inline Eigen::MatrixXd observed_information(const MarginSpec& spec, const MarginParams& params,
                                            std::span<const Count> y, const CovariateMatrix& x,
                                            const InitPolicy& init) {
  const std::vector<double> theta = params.to_vector(spec);
  const auto d = static_cast<Eigen::Index>(theta.size());
  Eigen::MatrixXd info(d, d);
  const Eigen::VectorXd g0 = evaluate_margin(spec, params, y, x, init, EvalMode::gradient).gradient;
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const double h = kHessianStep * std::max(std::abs(theta[ju]), 1e-2);
    std::vector<double> up = theta;
    up[ju] += h;
    const Eigen::VectorXd gu =
        evaluate_margin(spec, MarginParams::from_vector(spec, up), y, x, init, EvalMode::gradient).gradient;
    if (theta[ju] - h >= 0.0) {
      std::vector<double> dn = theta;
      dn[ju] -= h;
      const Eigen::VectorXd gd =
          evaluate_margin(spec, MarginParams::from_vector(spec, dn), y, x, init, EvalMode::gradient).gradient;
      info.col(j) = -(gu - gd) / (2.0 * h);
    } else {
      info.col(j) = -(gu - g0) / h;
    }
  }
  return 0.5 * (info + info.transpose());
}

struct InverseResult {
  Eigen::MatrixXd inverse;
  bool positive_definite = false;
};

inline InverseResult invert_information(const Eigen::MatrixXd& info) {
  InverseResult out;
  if (info.size() == 0) {
    out.positive_definite = true;
    out.inverse = info;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  out.positive_definite = ev.minCoeff() > tol;
  Eigen::VectorXd inv_ev(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv_ev(i) = std::abs(ev(i)) > tol ? 1.0 / ev(i) : 0.0;
  out.inverse = eig.eigenvectors() * inv_ev.asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

inline bool has_collinear_covariates(const MarginSpec& spec, const CovariateMatrix& x,
                                     std::size_t begin) {
  if (spec.n_covariates == 0 || static_cast<std::size_t>(x.rows()) <= begin) return false;
  const auto rows = x.rows() - static_cast<Eigen::Index>(begin);
  const Eigen::Index cols = x.cols() + (spec.intercept ? 1 : 0);
  Eigen::MatrixXd design(rows, cols);
  if (spec.intercept) design.col(0).setOnes();
  design.rightCols(x.cols()) = x.bottomRows(rows);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  return qr.rank() < cols;
}

}  // namespace detail

/// IFM stage (a): maximum likelihood for one margin.
inline FitMargin fit_margin(const MarginSpec& spec, std::span<const Count> y, const CovariateMatrix& x,
                            const FitOptions& options = {}) {
  const std::size_t n = y.size();
  if (n <= static_cast<std::size_t>(spec.max_lag())) {
    throw DataError("series length " + std::to_string(n) + " does not exceed the largest lag " +
                    std::to_string(spec.max_lag()));
  }
  for (Count v : y) {
    if (v < 0) throw DataError("negative count in series");
  }
  detail::require_covariate_rows(spec, x, n);

  FitMargin fit;
  fit.init_policy = options.init;
  const Presample pre = resolve_presample(options.init, spec, y);
  fit.n_obs = n - pre.first_scored;
  if (detail::has_collinear_covariates(spec, x, pre.first_scored)) {
    fit.warnings.emplace_back("covariate columns are exactly collinear; coefficients are not identified");
  }

  const optim::Objective objective = [&](const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
    const std::vector<double> theta = detail::from_log_scale(spec, z);
    const MarginParams p = MarginParams::from_vector(spec, theta);
    if (p.persistence() >= 1.0 - kStabilityEps) return std::numeric_limits<double>::infinity();
    for (double v : theta) {
      if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    }
    MarginEvaluation ev;
    try {
      ev = evaluate_margin(spec, p, y, x, options.init, EvalMode::gradient);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(ev.loglik)) return std::numeric_limits<double>::infinity();
    grad.resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double dtheta_dz = std::exp(z(i));
      grad(i) = -ev.gradient(i) * dtheta_dz;
    }
    return -ev.loglik;
  };

  optim::BfgsOptions bopt;
  bopt.max_iterations = options.max_iterations;
  bopt.f_tolerance = options.tolerance;

  std::optional<optim::BfgsResult> best;
  int best_start = -1;
  const auto starts = detail::starting_points(spec, y, x);
  for (std::size_t s = 0; s < starts.size(); ++s) {
    auto res = optim::minimize_bfgs(objective, detail::to_log_scale(spec, starts[s].to_vector(spec)), bopt);
    if (!std::isfinite(res.f)) continue;
    const bool better = !best || (res.converged && !best->converged) ||
                        (res.converged == best->converged && res.f < best->f);
    if (better) {
      best = std::move(res);
      best_start = static_cast<int>(s);
    }
  }
  if (!best) throw ConvergenceError("margin likelihood is not finite at any starting point");

  fit.params = MarginParams::from_vector(spec, detail::from_log_scale(spec, best->x));
  fit.loglik = -best->f;
  fit.stability = check_stability(fit.params);
  fit.convergence.converged = best->converged;
  fit.convergence.iterations = best->iterations;
  fit.convergence.start = best_start;
  fit.convergence.message = best->message;
  for (double f : best->trace) fit.convergence.loglik_trace.push_back(-f);

  const Eigen::MatrixXd info = detail::observed_information(spec, fit.params, y, x, options.init);
  const auto inv = detail::invert_information(info);
  fit.hessian_inverse = inv.inverse;
  fit.se_available = inv.positive_definite;
  fit.se.assign(spec.n_params(), std::numeric_limits<double>::quiet_NaN());
  if (inv.positive_definite) {
    for (std::size_t i = 0; i < fit.se.size(); ++i) {
      fit.se[i] = std::sqrt(inv.inverse(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    }
  } else {
    fit.warnings.emplace_back("observed information is not positive definite; standard errors unavailable");
  }
  if (spec.intercept && fit.params.omega < 1e-6) {
    fit.warnings.emplace_back("omega estimate is at its lower bound");
  }
  if (!fit.convergence.converged) {
    throw MarginConvergenceError("margin optimization did not converge: " + fit.convergence.message, fit);
  }
  return fit;
}

// --------------------------------------------------------------------------
// Joint likelihood

/// Marginal CDF brackets F(y_t - 1), F(y_t) for every (t, series); the part
/// of the joint likelihood that does not depend on rho.
class RectangleCache {
 public:
  RectangleCache(const std::vector<std::vector<double>>& lambda, const SeriesData& data,
                 std::size_t first_scored)
      : dim_(data.dim()), length_(data.length()), first_(first_scored) {
    brackets_.resize(dim_ * length_);
    for (std::size_t j = 0; j < dim_; ++j) set_series(j, lambda[j], data.y[j]);
  }

  void set_series(std::size_t j, const std::vector<double>& lambda, const std::vector<Count>& y) {
    for (std::size_t t = first_; t < length_; ++t) brackets_[t * dim_ + j] = margin_bracket(y[t], lambda[t]);
  }

  std::size_t first_scored() const noexcept { return first_; }
  std::size_t length() const noexcept { return length_; }

  std::span<const MarginBracket> at(std::size_t t) const { return {brackets_.data() + t * dim_, dim_}; }

  /// log rectangle probability at time t.
  double log_term(std::size_t t, double rho, ClampCounter* counter = nullptr) const {
    return std::log(frank_rectangle_probability(at(t), rho, counter));
  }

  /// Joint log-likelihood sum over scored observations.
  double profile(double rho, ClampCounter* counter = nullptr) const {
    double s = 0.0;
    for (std::size_t t = first_; t < length_; ++t) s += log_term(t, rho, counter);
    return s;
  }

 private:
  std::size_t dim_;
  std::size_t length_;
  std::size_t first_;
  std::vector<MarginBracket> brackets_;
};

struct JointLogLik {
  double value = 0.0;
  std::size_t clamped = 0;
  std::size_t n_obs = 0;
};

inline std::size_t common_first_scored(const ModelSpec& spec, const SeriesData& data,
                                       const InitPolicy& init) {
  std::size_t first = 0;
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    first = std::max(first, resolve_presample(init, spec.margins[j], data.y[j]).first_scored);
  }
  return first;
}

/// Sum over t of the log joint pmf of (y_t^1, ..., y_t^K). Under
/// independence this is the sum of the marginal log-likelihoods.
inline JointLogLik joint_log_lik(const ModelSpec& spec, const ThetaFull& theta, const SeriesData& data,
                                 const InitPolicy& init) {
  data.validate(spec);
  JointLogLik out;
  if (!spec.is_frank() || !theta.rho) {
    for (std::size_t j = 0; j < spec.dim(); ++j) {
      out.value += marginal_log_lik(spec.margins[j], theta.margins[j], data.y[j], data.x[j], init);
    }
    out.n_obs = data.length() - common_first_scored(spec, data, init);
    return out;
  }
  const auto lambda = filter_all(spec, theta, data, init);
  const std::size_t first = common_first_scored(spec, data, init);
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    if (!check_stability(theta.margins[j]).stable) {
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
  }
  RectangleCache cache(lambda, data, first);
  ClampCounter counter;
  out.value = cache.profile(*theta.rho, &counter);
  out.clamped = counter.clamped;
  out.n_obs = data.length() - first;
  return out;
}

/// Per-observation log joint pmf; entries before the first scored index are 0.
inline std::vector<double> joint_log_terms(const ModelSpec& spec, const ThetaFull& theta,
                                           const SeriesData& data, const InitPolicy& init,
                                           std::size_t* clamped = nullptr) {
  const auto lambda = filter_all(spec, theta, data, init);
  const std::size_t first = common_first_scored(spec, data, init);
  std::vector<double> out(data.length(), 0.0);
  const bool frank = spec.is_frank() && theta.rho;
  ClampCounter counter;
  std::vector<MarginBracket> brackets(spec.dim());
  for (std::size_t t = first; t < data.length(); ++t) {
    if (frank) {
      for (std::size_t j = 0; j < spec.dim(); ++j) brackets[j] = margin_bracket(data.y[j][t], lambda[j][t]);
      out[t] = std::log(frank_rectangle_probability(brackets, *theta.rho, &counter));
    } else {
      double s = 0.0;
      for (std::size_t j = 0; j < spec.dim(); ++j) s += poisson_log_pmf(data.y[j][t], lambda[j][t]);
      out[t] = s;
    }
  }
  if (clamped != nullptr) *clamped = counter.clamped;
  return out;
}

// --------------------------------------------------------------------------
// Dependence parameter

namespace detail {

inline const std::vector<double>& rho_grid() {
  static const std::vector<double> grid = {kRhoEps, 1e-3, 0.01, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75,
                                           1.0,     1.5,  2.0,  2.5,  3.0, 4.0, 5.0,  6.5, 8.0,
                                           10.0,    13.0, 16.0, 20.0, 25.0, 32.0, 40.0, kRhoMax};
  return grid;
}

/// Profile value that maps numerical failures to -inf.
inline double safe_profile(const RectangleCache& cache, double rho) {
  try {
    return cache.profile(rho);
  } catch (const NumericalError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

/// Best rho on one branch (sign = +1 or -1).
inline optim::ScalarOptimum search_branch(const RectangleCache& cache, double sign) {
  const auto& grid = rho_grid();
  std::vector<double> values(grid.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    values[i] = safe_profile(cache, sign * grid[i]);
    if (values[i] > values[best]) best = i;
  }
  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  auto refined = optim::brent_maximize([&](double r) { return safe_profile(cache, sign * r); }, lo, hi,
                                       kRhoTolerance);
  optim::ScalarOptimum out;
  if (refined.f >= values[best]) {
    out.x = sign * refined.x;
    out.f = refined.f;
  } else {
    out.x = sign * grid[best];
    out.f = values[best];
  }
  out.evaluations = refined.evaluations + static_cast<int>(grid.size());
  return out;
}

inline double rho_step(double rho) { return kHessianStep * std::max(std::abs(rho), 1e-2); }

}  // namespace detail

/// IFM stage (b): maximizes the joint likelihood over rho with the fitted
/// margins held fixed. The standard error comes from the central second
/// difference of the profile.
inline RhoEstimate fit_rho(const ModelSpec& spec, const std::vector<MarginParams>& margins,
                           const SeriesData& data, const InitPolicy& init) {
  if (spec.dim() < 2) throw DomainError("fit_rho: at least two series are required");
  data.validate(spec);
  ThetaFull theta;
  theta.margins = margins;
  const auto lambda = filter_all(spec, theta, data, init);
  const RectangleCache cache(lambda, data, common_first_scored(spec, data, init));

  auto best = detail::search_branch(cache, 1.0);
  if (spec.dim() == 2) {
    const auto negative = detail::search_branch(cache, -1.0);
    if (negative.f > best.f) best = negative;
  }

  RhoEstimate est;
  est.value = best.x;
  est.profile_loglik = best.f;
  est.independence_loglik = cache.profile(0.0);
  est.at_boundary = std::abs(best.x) >= kRhoMax - 10.0 * kRhoTolerance;
  est.independence_recommended = std::abs(best.x) <= kRhoEps + 2.0 * kRhoTolerance;

  ClampCounter counter;
  (void)cache.profile(est.value, &counter);
  est.clamped = counter.clamped;

  const double h = detail::rho_step(est.value);
  double up = est.value + h, dn = est.value - h;
  if (std::abs(up) > kRhoMax) up = est.value;
  if (std::abs(dn) > kRhoMax) dn = est.value;
  if (up != dn && up != est.value && dn != est.value && (spec.dim() == 2 || dn > 0.0)) {
    const double curvature = -(detail::safe_profile(cache, up) - 2.0 * est.profile_loglik +
                               detail::safe_profile(cache, dn)) / (h * h);
    if (curvature > 0.0 && std::isfinite(curvature)) est.se = 1.0 / std::sqrt(curvature);
  }
  return est;
}

// --------------------------------------------------------------------------
// Full two-stage fit

inline FitResult fit_ifm(const ModelSpec& spec_in, const SeriesData& data, const FitOptions& options = {}) {
  ModelSpec spec = spec_in;
  spec.normalize();
  data.validate(spec);
  FitResult result;
  result.spec = spec;
  result.init = options.init;
  result.margins.resize(spec.dim());

  parallel_for(spec.dim(), options.threads, [&](std::size_t j) {
    result.margins[j] = fit_margin(spec.margins[j], data.y[j], data.x[j], options);
  });
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    for (const auto& w : result.margins[j].warnings) result.warnings.push_back("series " + std::to_string(j + 1) + ": " + w);
  }

  if (spec.is_frank()) {
    std::vector<MarginParams> params;
    for (const auto& m : result.margins) params.push_back(m.params);
    result.rho = fit_rho(spec, params, data, options.init);
    if (result.rho->at_boundary) result.warnings.emplace_back("rho estimate is at the search boundary");
    if (result.rho->independence_recommended) {
      result.warnings.emplace_back("profile likelihood is flat in rho; independence is recommended");
    }
  }
  const auto joint = joint_log_lik(spec, result.theta(), data, options.init);
  result.joint_loglik = joint.value;
  result.clamped = joint.clamped;
  result.n_obs = joint.n_obs;
  result.n_params = spec.n_params();
  return result;
}

/// Asymptotic covariance of the stacked IFM estimate (theta^1, ..., theta^K, rho)
/// as (-D)^{-1} M (-D)^{-T}, on the scale of the estimates (already divided
/// by n). Under independence the result is block diagonal with the inverse
/// marginal informations.
inline Eigen::MatrixXd sandwich_covariance(const FitResult& fit, const SeriesData& data,
                                           std::vector<std::string>* warnings = nullptr) {
  const ModelSpec& spec = fit.spec;
  const InitPolicy& init = fit.init;
  data.validate(spec);
  std::vector<Eigen::Index> offsets;
  Eigen::Index p = 0;
  for (const auto& m : spec.margins) {
    offsets.push_back(p);
    p += static_cast<Eigen::Index>(m.n_params());
  }
  const bool frank = spec.is_frank() && fit.rho.has_value();

  if (!frank) {
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t j = 0; j < spec.dim(); ++j) {
      const auto d = static_cast<Eigen::Index>(spec.margins[j].n_params());
      v.block(offsets[j], offsets[j], d, d) = fit.margins[j].hessian_inverse;
    }
    return v;
  }

  const Eigen::Index rho_idx = p;
  const Eigen::Index total = p + 1;
  const double rho = fit.rho->value;
  const std::size_t first = common_first_scored(spec, data, init);
  const std::size_t n = data.length();
  ThetaFull theta = fit.theta();
  auto lambda = filter_all(spec, theta, data, init);
  RectangleCache cache(lambda, data, first);
  const double h_rho = detail::rho_step(rho);

  // Per-observation rho score by central differences.
  std::vector<double> g_rho(n, 0.0);
  for (std::size_t t = first; t < n; ++t) {
    g_rho[t] = (cache.log_term(t, rho + h_rho) - cache.log_term(t, rho - h_rho)) / (2.0 * h_rho);
  }
  auto total_rho_score = [&](const RectangleCache& c) {
    double s = 0.0;
    for (std::size_t t = first; t < n; ++t) s += (c.log_term(t, rho + h_rho) - c.log_term(t, rho - h_rho));
    return s / (2.0 * h_rho);
  };

  Eigen::MatrixXd neg_d = Eigen::MatrixXd::Zero(total, total);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(total, total);
  std::vector<Eigen::MatrixXd> contributions(spec.dim());
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    const auto& ms = spec.margins[j];
    const auto d = static_cast<Eigen::Index>(ms.n_params());
    neg_d.block(offsets[j], offsets[j], d, d) =
        detail::observed_information(ms, theta.margins[j], data.y[j], data.x[j], init);
    contributions[j] =
        evaluate_margin(ms, theta.margins[j], data.y[j], data.x[j], init, EvalMode::contributions).contributions;

    // Cross block -d^2 l / d rho d theta^j.
    const std::vector<double> base = theta.margins[j].to_vector(ms);
    RectangleCache work = cache;
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      const double h = kHessianStep * std::max(std::abs(base[iu]), 1e-2);
      auto shifted = [&](double delta) {
        std::vector<double> v = base;
        v[iu] += delta;
        const auto lam = filter_intensities(ms, MarginParams::from_vector(ms, v), data.y[j], data.x[j], init);
        work.set_series(j, lam, data.y[j]);
        const double s = total_rho_score(work);
        work.set_series(j, lambda[j], data.y[j]);
        return s;
      };
      double deriv = 0.0;
      if (base[iu] - h >= 0.0) {
        deriv = (shifted(h) - shifted(-h)) / (2.0 * h);
      } else {
        deriv = (shifted(h) - total_rho_score(cache)) / h;
      }
      neg_d(rho_idx, offsets[j] + i) = -deriv;
    }
  }
  neg_d(rho_idx, rho_idx) =
      -(cache.profile(rho + h_rho) - 2.0 * cache.profile(rho) + cache.profile(rho - h_rho)) / (h_rho * h_rho);

  // Outer products of per-observation inference functions. Blocks coupling
  // the margins with rho are zero by construction.
  for (std::size_t t = first; t < n; ++t) {
    Eigen::VectorXd g(p);
    for (std::size_t j = 0; j < spec.dim(); ++j) {
      const auto d = static_cast<Eigen::Index>(spec.margins[j].n_params());
      g.segment(offsets[j], d) = contributions[j].row(static_cast<Eigen::Index>(t)).transpose();
    }
    m.topLeftCorner(p, p).noalias() += g * g.transpose();
    m(rho_idx, rho_idx) += g_rho[t] * g_rho[t];
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(neg_d);
  Eigen::MatrixXd inv;
  if (lu.isInvertible()) {
    inv = lu.inverse();
  } else {
    if (warnings != nullptr) warnings->emplace_back("sensitivity matrix is singular; using a pseudo-inverse");
    inv = neg_d.completeOrthogonalDecomposition().pseudoInverse();
  }
  const Eigen::MatrixXd v = inv * m * inv.transpose();
  return 0.5 * (v + v.transpose());
}

}  // namespace poarx
