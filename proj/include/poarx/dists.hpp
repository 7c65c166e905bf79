#pragma once

// Scalar Poisson primitives: log-pmf, CDF, quantile, sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "poarx/errors.hpp"
#include "poarx/random.hpp"

namespace poarx {

using Count = std::int64_t;

namespace detail {

inline void require_intensity(double lambda, const char* where) {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) {
    throw DomainError(std::string(where) + ": intensity must be finite and > 0, got " +
                      std::to_string(lambda));
  }
}

// y! for y <= 20, exact in 64-bit integers.
inline constexpr std::array<std::uint64_t, 21> kFactorialTable = [] {
  std::array<std::uint64_t, 21> table{};
  std::uint64_t f = 1;
  for (std::size_t y = 0; y < table.size(); ++y) {
    if (y > 0) f *= y;
    table[y] = f;
  }
  return table;
}();

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

inline double log_factorial(Count y) {
  if (y < 0) throw DomainError("log_factorial: negative argument");
  if (y < static_cast<Count>(detail::kFactorialTable.size())) {
    return std::log(static_cast<double>(detail::kFactorialTable[static_cast<std::size_t>(y)]));
  }
  return std::lgamma(static_cast<double>(y) + 1.0);
}

inline double poisson_log_pmf(Count y, double lambda) {
  detail::require_intensity(lambda, "poisson_log_pmf");
  if (y < 0) return -std::numeric_limits<double>::infinity();
  if (y == 0) return -lambda;
  return -lambda + static_cast<double>(y) * std::log(lambda) - log_factorial(y);
}

inline double poisson_pmf(Count y, double lambda) { return std::exp(poisson_log_pmf(y, lambda)); }

/// Walks the Poisson CDF forward one count at a time. poisson_cdf and
/// poisson_quantile both use this so that quantile(cdf(y)) == y exactly.
class PoissonCdfWalker {
 public:
  explicit PoissonCdfWalker(double lambda) : lambda_(lambda) {
    detail::require_intensity(lambda, "PoissonCdfWalker");
    use_recurrence_ = lambda < 700.0;
    term_ = std::exp(-lambda);
    sum_.add(term_);
  }

  Count count() const noexcept { return k_; }
  double term() const noexcept { return term_; }
  double cdf() const noexcept { return std::min(sum_.value(), 1.0); }

  void advance() {
    ++k_;
    if (use_recurrence_) {
      term_ *= lambda_ / static_cast<double>(k_);
    } else {
      term_ = std::exp(poisson_log_pmf(k_, lambda_));
    }
    sum_.add(term_);
  }

  /// True once the remaining upper tail cannot change the sum.
  bool saturated() const noexcept {
    return static_cast<double>(k_) > lambda_ && (term_ == 0.0 || cdf() >= 1.0);
  }

 private:
  double lambda_;
  bool use_recurrence_ = true;
  Count k_ = 0;
  double term_ = 0.0;
  detail::CompensatedSum sum_;
};

/// P(Y <= y) for Y ~ Poisson(lambda); 0 for y < 0.
inline double poisson_cdf(Count y, double lambda) {
  detail::require_intensity(lambda, "poisson_cdf");
  if (y < 0) return 0.0;
  PoissonCdfWalker walk(lambda);
  while (walk.count() < y) {
    walk.advance();
    if (walk.saturated()) return walk.cdf();
  }
  return walk.cdf();
}

/// Smallest y with poisson_cdf(y, lambda) >= u.
inline Count poisson_quantile(double u, double lambda) {
  if (!(u >= 0.0 && u < 1.0)) {
    throw DomainError("poisson_quantile: probability must lie in [0, 1), got " + std::to_string(u));
  }
  PoissonCdfWalker walk(lambda);
  while (walk.cdf() < u) {
    walk.advance();
    if (walk.saturated()) break;
  }
  return walk.count();
}

/// One Poisson(lambda) draw. Inversion for lambda <= 30, otherwise Hormann's
/// transformed rejection (PTRS).
template <class URBG>
Count poisson_sample(double lambda, URBG& rng) {
  detail::require_intensity(lambda, "poisson_sample");
  if (lambda <= 30.0) {
    const double u = uniform01(rng);
    Count k = 0;
    double p = std::exp(-lambda);
    double s = p;
    while (u > s) {
      ++k;
      p *= lambda / static_cast<double>(k);
      if (p == 0.0 && static_cast<double>(k) > lambda) break;
      s += p;
    }
    return k;
  }
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform01(rng) - 0.5;
    const double v = uniform01(rng);
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<Count>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -lambda + k * loglam - std::lgamma(k + 1.0)) {
      return static_cast<Count>(k);
    }
  }
}

}  // namespace poarx
