#pragma once

// Scoring and model comparison: log score, AIC/BIC, overlapping-fold
// cross-validation and holdout evaluation.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "poarx/copula.hpp"
#include "poarx/errors.hpp"
#include "poarx/estimation.hpp"
#include "poarx/model.hpp"
#include "poarx/parallel.hpp"

namespace poarx {

struct LogScore {
  double value = 0.0;
  std::size_t floored = 0;  // zero probabilities replaced by kPmfFloor
};

/// Sum of log probabilities assigned to the realized events.
inline LogScore log_score(std::span<const double> probs) {
  LogScore out;
  for (const double r : probs) {
    if (std::isnan(r) || r < 0.0 || r > 1.0 + 1e-12) {
      throw DomainError("log_score: probabilities must lie in [0, 1], got " + std::to_string(r));
    }
    double v = r;
    if (v < kPmfFloor) {
      v = kPmfFloor;
      ++out.floored;
    }
    out.value += std::log(std::min(v, 1.0));
  }
  return out;
}

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

inline InformationCriteria information_criteria(double loglik, std::size_t n_params, std::size_t n_obs) {
  if (n_obs < 1) throw DomainError("information_criteria: at least one observation is required");
  const auto k = static_cast<double>(n_params);
  return {2.0 * k - 2.0 * loglik, k * std::log(static_cast<double>(n_obs)) - 2.0 * loglik};
}

struct FoldScore {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t n_scored = 0;
  double log_score = 0.0;
  bool skipped = false;
  std::string message;
};

struct ScoreReport {
  double log_score = 0.0;
  double loglik = std::numeric_limits<double>::quiet_NaN();  // full-data fit
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_obs = 0;  // scored time points of the full-data fit (BIC's n)
  std::size_t n_params = 0;
  std::vector<FoldScore> per_fold;
  std::vector<int> multiplicity;  // folds scoring each observation
  std::size_t scored_observations = 0;
  std::size_t floored = 0;
};

struct CvOptions {
  std::size_t n_folds = 5;
  std::size_t fold_length = 0;          // 0: half the data
  std::vector<std::size_t> fold_starts;  // overrides even spacing when non-empty
  FitOptions fit;
  bool full_fit_criteria = true;  // fit on all data for AIC/BIC
};

/// Contiguous fold windows of equal length with starts spread evenly from
/// the first to the last admissible offset.
inline std::vector<std::size_t> fold_starts(std::size_t n, std::size_t n_folds, std::size_t fold_length) {
  if (n_folds == 0) throw DomainError("cross-validation needs at least one fold");
  if (fold_length == 0 || fold_length > n) throw DomainError("fold length must lie in [1, n]");
  std::vector<std::size_t> starts(n_folds, 0);
  const std::size_t span = n - fold_length;
  for (std::size_t f = 0; f < n_folds && n_folds > 1; ++f) {
    starts[f] = static_cast<std::size_t>(
        std::llround(static_cast<double>(f) * static_cast<double>(span) / static_cast<double>(n_folds - 1)));
  }
  return starts;
}

/// Overlapping-fold cross-validated log score. Each fold is fitted on its
/// window and scores the one-step joint predictive probability of every
/// observation outside the window (its own window when that is the whole
/// series). Per-observation scores are averaged over the folds that scored
/// them, then summed.
inline ScoreReport cv_log_score(const ModelSpec& spec_in, const SeriesData& data, const CvOptions& options) {
  ModelSpec spec = spec_in;
  spec.normalize();
  data.validate(spec);
  const std::size_t n = data.length();
  const std::size_t length = options.fold_length == 0 ? n / 2 : options.fold_length;
  const std::vector<std::size_t> starts =
      options.fold_starts.empty() ? fold_starts(n, options.n_folds, length) : options.fold_starts;
  for (std::size_t s : starts) {
    if (s + length > n) throw DomainError("fold window exceeds the data");
  }

  ScoreReport report;
  report.n_params = spec.n_params();
  report.per_fold.resize(starts.size());
  std::vector<std::vector<double>> fold_terms(starts.size());
  FitOptions fold_fit = options.fit;
  fold_fit.threads = 1;
  parallel_for(starts.size(), options.fit.threads, [&](std::size_t f) {
    FoldScore& fs = report.per_fold[f];
    fs.start = starts[f];
    fs.length = length;
    try {
      const FitResult fit = fit_ifm(spec, data.slice(starts[f], starts[f] + length), fold_fit);
      std::size_t clamped = 0;
      fold_terms[f] = joint_log_terms(spec, fit.theta(), data, options.fit.init, &clamped);
    } catch (const std::exception& e) {
      fs.skipped = true;
      fs.message = e.what();
    }
  });

  const std::size_t first = common_first_scored(spec, data, options.fit.init);
  std::vector<double> sums(n, 0.0);
  report.multiplicity.assign(n, 0);
  for (std::size_t f = 0; f < starts.size(); ++f) {
    FoldScore& fs = report.per_fold[f];
    if (fs.skipped) continue;
    const std::size_t lo = starts[f], hi = starts[f] + length;
    const bool in_sample = lo <= first && hi == n;
    for (std::size_t t = first; t < n; ++t) {
      const bool inside = t >= lo && t < hi;
      if (inside && !in_sample) continue;
      double term = fold_terms[f][t];
      if (!std::isfinite(term)) {
        term = std::log(kPmfFloor);
        ++report.floored;
      }
      sums[t] += term;
      report.multiplicity[t] += 1;
      fs.log_score += term;
      ++fs.n_scored;
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (report.multiplicity[t] == 0) continue;
    report.log_score += sums[t] / report.multiplicity[t];
    ++report.scored_observations;
  }

  if (options.full_fit_criteria) {
    try {
      const FitResult full = fit_ifm(spec, data, options.fit);
      const auto ic = information_criteria(full.joint_loglik, full.n_params, full.n_obs);
      report.loglik = full.joint_loglik;
      report.aic = ic.aic;
      report.bic = ic.bic;
      report.n_obs = full.n_obs;
    } catch (const std::exception&) {
      // criteria stay NaN; the fold scores are still valid
    }
  }
  return report;
}

namespace detail {

inline SeriesData concatenate(const SeriesData& a, const SeriesData& b) {
  SeriesData out;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    std::vector<Count> y = a.y[j];
    y.insert(y.end(), b.y[j].begin(), b.y[j].end());
    out.y.push_back(std::move(y));
    CovariateMatrix x(a.x[j].rows() + b.x[j].rows(), a.x[j].cols());
    if (a.x[j].cols() > 0) x << a.x[j], b.x[j];
    out.x.push_back(std::move(x));
  }
  if (!a.time.empty() && !b.time.empty()) {
    out.time = a.time;
    out.time.insert(out.time.end(), b.time.begin(), b.time.end());
  }
  return out;
}

inline void require_contiguous(const SeriesData& train, const SeriesData& test) {
  if (train.time.size() < 2 || test.time.empty()) return;
  const std::int64_t step = train.time[1] - train.time[0];
  if (test.time.front() - train.time.back() != step) {
    throw DataError("test data does not start immediately after the training data");
  }
  for (std::size_t t = 1; t < test.time.size(); ++t) {
    if (test.time[t] - test.time[t - 1] != step) {
      throw DataError("gap in test data at row " + std::to_string(t + 1));
    }
  }
}

}  // namespace detail

/// Sum over the test period of the log one-step joint predictive pmf at the
/// observed vector. Intensities are filtered through the training history
/// and then forward through the observed test values. Pre-sample values come
/// from the training data only.
inline double holdout_log_score(const ModelSpec& spec, const ThetaFull& theta, const SeriesData& train,
                                const SeriesData& test, const InitPolicy& init = InitPolicy::sample_mean()) {
  if (test.length() == 0) return 0.0;
  train.validate(spec);
  test.validate(spec);
  detail::require_contiguous(train, test);
  const SeriesData all = detail::concatenate(train, test);
  // One fixed pre-sample value per series, taken from the training data.
  double score = 0.0;
  std::vector<std::vector<double>> lambda(spec.dim());
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    const auto pre = resolve_presample(init, spec.margins[j], train.y[j]);
    const InitPolicy fixed = InitPolicy::fixed(pre.y, pre.lambda);
    lambda[j] = filter_intensities(spec.margins[j], theta.margins[j], all.y[j], all.x[j], fixed);
  }
  const bool frank = spec.is_frank() && theta.rho;
  std::vector<MarginBracket> brackets(spec.dim());
  for (std::size_t t = train.length(); t < all.length(); ++t) {
    if (frank) {
      for (std::size_t j = 0; j < spec.dim(); ++j) brackets[j] = margin_bracket(all.y[j][t], lambda[j][t]);
      score += std::log(frank_rectangle_probability(brackets, *theta.rho));
    } else {
      for (std::size_t j = 0; j < spec.dim(); ++j) score += poisson_log_pmf(all.y[j][t], lambda[j][t]);
    }
  }
  return score;
}

inline double holdout_log_score(const FitResult& fit, const SeriesData& train, const SeriesData& test) {
  return holdout_log_score(fit.spec, fit.theta(), train, test, fit.init);
}

}  // namespace poarx
