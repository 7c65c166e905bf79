#pragma once

// Model specification, parameters, data containers and the intensity
// filtering recursion
//   lambda_t = omega + sum_l alpha_l y_{t-l} + sum_l beta_l lambda_{t-l} + eta . x_{t-1}.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poarx/copula.hpp"
#include "poarx/dists.hpp"
#include "poarx/errors.hpp"

namespace poarx {

/// Covariates for one series: row i feeds the intensity of observation i
/// (that is, row t-1 carries x_{t-1} for lambda_t).
using CovariateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Shape of one univariate margin.
struct MarginSpec {
  std::vector<int> obs_lags;   // lags l with an alpha_l coefficient
  std::vector<int> mean_lags;  // lags l with a beta_l coefficient
  std::size_t n_covariates = 0;
  bool intercept = true;

  int max_lag() const noexcept {
    int m = 0;
    for (int l : obs_lags) m = std::max(m, l);
    for (int l : mean_lags) m = std::max(m, l);
    return m;
  }

  std::size_t n_params() const noexcept {
    return (intercept ? 1 : 0) + obs_lags.size() + mean_lags.size() + n_covariates;
  }

  /// Sorts lag sets; throws ConfigError on non-positive or duplicate lags.
  void normalize() {
    auto check = [](std::vector<int>& lags, const char* what) {
      std::sort(lags.begin(), lags.end());
      for (std::size_t i = 0; i < lags.size(); ++i) {
        if (lags[i] <= 0) throw ConfigError(std::string(what) + " lags must be positive integers");
        if (i > 0 && lags[i] == lags[i - 1]) {
          throw ConfigError(std::string(what) + " lags contain duplicate " + std::to_string(lags[i]));
        }
      }
    };
    check(obs_lags, "observation");
    check(mean_lags, "mean");
  }

  /// Names of parameters in vector order: omega, alpha_l..., beta_l..., eta_k...
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    if (intercept) names.emplace_back("omega");
    for (int l : obs_lags) names.push_back("alpha_lag" + std::to_string(l));
    for (int l : mean_lags) names.push_back("beta_lag" + std::to_string(l));
    for (std::size_t k = 0; k < n_covariates; ++k) names.push_back("eta_" + std::to_string(k + 1));
    return names;
  }
};

struct ModelSpec {
  std::vector<MarginSpec> margins;
  Dependence::Kind dependence = Dependence::Kind::independence;

  std::size_t dim() const noexcept { return margins.size(); }
  bool is_frank() const noexcept { return dependence == Dependence::Kind::frank; }

  std::size_t n_params() const noexcept {
    std::size_t n = is_frank() ? 1 : 0;
    for (const auto& m : margins) n += m.n_params();
    return n;
  }

  void normalize() {
    if (margins.empty()) throw ConfigError("model needs at least one series");
    if (is_frank() && margins.size() < 2) {
      throw ConfigError("Frank dependence needs at least two series");
    }
    for (auto& m : margins) m.normalize();
  }
};

/// theta^j = (omega, alpha, beta, eta) for one series.
struct MarginParams {
  double omega = 0.0;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> eta;

  double persistence() const noexcept {
    return std::accumulate(alpha.begin(), alpha.end(), 0.0) +
           std::accumulate(beta.begin(), beta.end(), 0.0);
  }

  /// Flattened in MarginSpec::parameter_names() order. omega is omitted when
  /// the spec has no intercept.
  std::vector<double> to_vector(const MarginSpec& spec) const {
    std::vector<double> v;
    v.reserve(spec.n_params());
    if (spec.intercept) v.push_back(omega);
    v.insert(v.end(), alpha.begin(), alpha.end());
    v.insert(v.end(), beta.begin(), beta.end());
    v.insert(v.end(), eta.begin(), eta.end());
    return v;
  }

  static MarginParams from_vector(const MarginSpec& spec, std::span<const double> v) {
    if (v.size() != spec.n_params()) {
      throw DomainError("MarginParams::from_vector: expected " + std::to_string(spec.n_params()) +
                        " values, got " + std::to_string(v.size()));
    }
    MarginParams p;
    std::size_t i = 0;
    if (spec.intercept) p.omega = v[i++];
    p.alpha.assign(v.begin() + i, v.begin() + i + spec.obs_lags.size());
    i += spec.obs_lags.size();
    p.beta.assign(v.begin() + i, v.begin() + i + spec.mean_lags.size());
    i += spec.mean_lags.size();
    p.eta.assign(v.begin() + i, v.end());
    return p;
  }

  /// Throws DomainError when shapes disagree with the spec or any coefficient
  /// is negative or non-finite. Stability is checked separately.
  void validate(const MarginSpec& spec) const {
    if (alpha.size() != spec.obs_lags.size() || beta.size() != spec.mean_lags.size() ||
        eta.size() != spec.n_covariates) {
      throw DomainError("margin parameters do not match the lag/covariate specification");
    }
    if (!spec.intercept && omega != 0.0) {
      throw DomainError("omega must be zero when the intercept is disabled");
    }
    auto check = [](double v, const char* name) {
      if (!std::isfinite(v) || v < 0.0) {
        throw DomainError(std::string(name) + " must be finite and non-negative");
      }
    };
    check(omega, "omega");
    for (double v : alpha) check(v, "alpha");
    for (double v : beta) check(v, "beta");
    for (double v : eta) check(v, "eta");
  }
};

/// (theta^1, ..., theta^K, rho). rho is absent under independence.
struct ThetaFull {
  std::vector<MarginParams> margins;
  std::optional<double> rho;

  Dependence dependence() const {
    return rho ? Dependence::frank(*rho) : Dependence::independence();
  }
};

/// K aligned count series with their covariate matrices.
struct SeriesData {
  std::vector<std::vector<Count>> y;
  std::vector<CovariateMatrix> x;
  std::vector<std::int64_t> time;  // optional time index; empty when absent

  std::size_t dim() const noexcept { return y.size(); }
  std::size_t length() const noexcept { return y.empty() ? 0 : y.front().size(); }

  /// Throws DataError when the data does not fit the spec.
  void validate(const ModelSpec& spec) const {
    if (y.size() != spec.dim()) {
      throw DataError("data has " + std::to_string(y.size()) + " series, model expects " +
                      std::to_string(spec.dim()));
    }
    if (x.size() != y.size()) throw DataError("one covariate matrix per series is required");
    const std::size_t n = length();
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j].size() != n) throw DataError("count series have unequal lengths");
      for (std::size_t t = 0; t < n; ++t) {
        if (y[j][t] < 0) {
          throw DataError("negative count in series " + std::to_string(j) + " at row " +
                          std::to_string(t + 1));
        }
      }
      const auto r = static_cast<Eigen::Index>(spec.margins[j].n_covariates);
      if (x[j].cols() != r) {
        throw DataError("series " + std::to_string(j) + " has " + std::to_string(x[j].cols()) +
                        " covariate columns, model expects " + std::to_string(r));
      }
      if (r > 0 && static_cast<std::size_t>(x[j].rows()) != n) {
        throw DataError("covariate rows do not match the count series length");
      }
      if (!x[j].allFinite() || (x[j].size() > 0 && x[j].minCoeff() < 0.0)) {
        throw DataError("covariates must be finite and non-negative");
      }
    }
    if (!time.empty()) {
      if (time.size() != n) throw DataError("time index length differs from the series length");
      for (std::size_t t = 1; t < n; ++t) {
        if (time[t] <= time[t - 1]) {
          throw DataError("time index is not strictly increasing at row " + std::to_string(t + 1));
        }
      }
    }
  }

  /// Rows [begin, end) of every series.
  SeriesData slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length()) throw DataError("slice out of range");
    SeriesData out;
    for (std::size_t j = 0; j < y.size(); ++j) {
      out.y.emplace_back(y[j].begin() + static_cast<std::ptrdiff_t>(begin),
                         y[j].begin() + static_cast<std::ptrdiff_t>(end));
      if (x[j].cols() > 0) {
        out.x.push_back(x[j].middleRows(static_cast<Eigen::Index>(begin),
                                        static_cast<Eigen::Index>(end - begin)));
      } else {
        out.x.emplace_back(static_cast<Eigen::Index>(end - begin), 0);
      }
    }
    if (!time.empty()) {
      out.time.assign(time.begin() + static_cast<std::ptrdiff_t>(begin),
                      time.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
  }

  bool operator==(const SeriesData& other) const {
    if (y != other.y || time != other.time || x.size() != other.x.size()) return false;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j].rows() != other.x[j].rows() || x[j].cols() != other.x[j].cols()) return false;
      if (x[j] != other.x[j]) return false;
    }
    return true;
  }
};

/// How pre-sample values y_0, y_{-1}, ..., lambda_0, ... are chosen.
struct InitPolicy {
  enum class Kind {
    sample_mean,   // all pre-sample y and lambda equal the series mean
    fixed,         // caller-supplied constants
    skip_burn_in,  // first max_lag observations act as pre-sample
  };
  Kind kind = Kind::sample_mean;
  double y_value = 0.0;
  double lambda_value = 0.0;

  static InitPolicy sample_mean() { return {}; }
  static InitPolicy fixed(double y0, double lambda0) { return {Kind::fixed, y0, lambda0}; }
  static InitPolicy skip_burn_in() { return {Kind::skip_burn_in, 0.0, 0.0}; }

  std::string name() const {
    switch (kind) {
      case Kind::sample_mean: return "sample_mean";
      case Kind::fixed: return "fixed";
      case Kind::skip_burn_in: return "skip_burn_in";
    }
    return "unknown";
  }

  static InitPolicy parse(const std::string& name, double value = 1.0) {
    if (name == "sample_mean") return sample_mean();
    if (name == "fixed") return fixed(value, value);
    if (name == "skip_burn_in") return skip_burn_in();
    throw ConfigError("unknown init policy '" + name + "'");
  }
};

/// Pre-sample value used for all-zero series under the sample-mean policy.
inline constexpr double kZeroSeriesPresample = 1e-3;

struct Presample {
  double y = 0.0;
  double lambda = 0.0;
  /// Index of the first observation whose intensity comes from the recursion
  /// and which enters the likelihood.
  std::size_t first_scored = 0;
};

inline double series_mean(std::span<const Count> y) {
  if (y.empty()) return 0.0;
  double s = 0.0;
  for (Count v : y) s += static_cast<double>(v);
  return s / static_cast<double>(y.size());
}

inline Presample resolve_presample(const InitPolicy& policy, const MarginSpec& spec,
                                   std::span<const Count> y) {
  Presample p;
  switch (policy.kind) {
    case InitPolicy::Kind::fixed:
      p.y = policy.y_value;
      p.lambda = policy.lambda_value;
      break;
    case InitPolicy::Kind::skip_burn_in:
      p.first_scored = std::min<std::size_t>(static_cast<std::size_t>(spec.max_lag()), y.size());
      [[fallthrough]];
    case InitPolicy::Kind::sample_mean: {
      const double m = series_mean(y);
      p.y = m > 0.0 ? m : kZeroSeriesPresample;
      p.lambda = p.y;
      break;
    }
  }
  return p;
}

struct StabilityCheck {
  bool stable = true;
  double margin = 1.0;  // 1 - (sum alpha + sum beta)
};

/// sum alpha + sum beta < 1 over the lags present in the spec.
inline StabilityCheck check_stability(const MarginParams& params) {
  const double margin = 1.0 - params.persistence();
  return {margin > 0.0, margin};
}

/// Fixed point (omega + covariate effect) / (1 - sum alpha - sum beta).
inline double unconditional_mean(const MarginParams& params, double mean_covariate_effect = 0.0) {
  const auto s = check_stability(params);
  if (!s.stable) throw DomainError("unconditional_mean: parameters violate the stability condition");
  return (params.omega + mean_covariate_effect) / s.margin;
}

/// Rolling window of past counts and intensities for one margin. Computes the
/// next intensity from the stored history. Shared by filtering, forecasting
/// and simulation so all three apply the recursion identically.
class IntensityState {
 public:
  IntensityState(const MarginSpec& spec, const MarginParams& params, double presample_y,
                 double presample_lambda)
      : spec_(&spec),
        params_(&params),
        window_(static_cast<std::size_t>(std::max(spec.max_lag(), 1))),
        y_(window_, presample_y),
        lambda_(window_, presample_lambda) {}

  /// Intensity for the next time point given the covariate row feeding it.
  double next_intensity(std::span<const double> x_row) const {
    double value = params_->omega;
    for (std::size_t i = 0; i < spec_->obs_lags.size(); ++i) {
      value += params_->alpha[i] * y_[index(spec_->obs_lags[i])];
    }
    for (std::size_t i = 0; i < spec_->mean_lags.size(); ++i) {
      value += params_->beta[i] * lambda_[index(spec_->mean_lags[i])];
    }
    for (std::size_t k = 0; k < params_->eta.size(); ++k) value += params_->eta[k] * x_row[k];
    return value;
  }

  void push(double y, double lambda) {
    head_ = (head_ + 1) % window_;
    y_[head_] = y;
    lambda_[head_] = lambda;
  }

  /// Value of y_{t-lag} relative to the next time point t.
  double lagged_y(int lag) const { return y_[index(lag)]; }
  double lagged_lambda(int lag) const { return lambda_[index(lag)]; }

 private:
  std::size_t index(int lag) const {
    const auto l = static_cast<std::size_t>(lag) - 1;
    return (head_ + window_ - l % window_) % window_;
  }

  const MarginSpec* spec_;
  const MarginParams* params_;
  std::size_t window_;
  std::size_t head_ = 0;
  std::vector<double> y_;
  std::vector<double> lambda_;
};

inline std::span<const double> covariate_row(const CovariateMatrix& x, std::size_t row) {
  if (x.cols() == 0) return {};
  return {x.data() + static_cast<std::ptrdiff_t>(row) * x.cols(), static_cast<std::size_t>(x.cols())};
}

namespace detail {

inline void require_covariate_rows(const MarginSpec& spec, const CovariateMatrix& x, std::size_t n) {
  if (static_cast<std::size_t>(x.cols()) != spec.n_covariates) {
    throw DataError("covariate matrix has " + std::to_string(x.cols()) + " columns, spec expects " +
                    std::to_string(spec.n_covariates));
  }
  if (spec.n_covariates > 0 && static_cast<std::size_t>(x.rows()) < n) {
    throw DataError("covariate matrix has fewer rows than observations");
  }
}

}  // namespace detail

/// Filtered intensities lambda_1..lambda_n for one series. Pre-sample values
/// come from `init`; under skip_burn_in the first max_lag intensities are the
/// pre-sample value and the recursion starts afterwards.
inline std::vector<double> filter_intensities(const MarginSpec& spec, const MarginParams& params,
                                              std::span<const Count> y, const CovariateMatrix& x,
                                              const InitPolicy& init) {
  params.validate(spec);
  detail::require_covariate_rows(spec, x, y.size());
  const Presample pre = resolve_presample(init, spec, y);
  IntensityState state(spec, params, pre.y, pre.lambda);
  std::vector<double> lambda(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double value = t < pre.first_scored ? pre.lambda : state.next_intensity(covariate_row(x, t));
    if (!std::isfinite(value)) {
      throw NumericalError("intensity recursion produced a non-finite value at t=" +
                           std::to_string(t + 1));
    }
    lambda[t] = value;
    state.push(static_cast<double>(y[t]), value);
  }
  return lambda;
}

/// Filters every series of `data` with the margins of `theta`.
inline std::vector<std::vector<double>> filter_all(const ModelSpec& spec, const ThetaFull& theta,
                                                   const SeriesData& data, const InitPolicy& init) {
  std::vector<std::vector<double>> out;
  out.reserve(spec.dim());
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    out.push_back(filter_intensities(spec.margins[j], theta.margins[j], data.y[j], data.x[j], init));
  }
  return out;
}

}  // namespace poarx
