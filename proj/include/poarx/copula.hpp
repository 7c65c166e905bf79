#pragma once

// Frank's Archimedean copula in K dimensions and the discrete copula-Poisson
// distribution built from it.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "poarx/dists.hpp"
#include "poarx/errors.hpp"
#include "poarx/random.hpp"

namespace poarx {

/// Largest admissible |rho|. An implementation cap, not a model constraint.
inline constexpr double kRhoMax = 50.0;
/// |rho| below this is evaluated as the product (independence) copula.
inline constexpr double kRhoEps = 1e-6;
/// Floor applied to rectangle probabilities lost to cancellation.
inline constexpr double kPmfFloor = 1e-300;
/// Rectangle sums below -kPmfNegativeTolerance are a consistency failure.
inline constexpr double kPmfNegativeTolerance = 1e-10;

/// Cross-series dependence: either independence or Frank's copula with rho.
class Dependence {
 public:
  enum class Kind { independence, frank };

  static Dependence independence() { return Dependence(Kind::independence, 0.0); }
  static Dependence frank(double rho) { return Dependence(Kind::frank, rho); }

  Kind kind() const noexcept { return kind_; }
  double rho() const noexcept { return rho_; }
  bool is_frank() const noexcept { return kind_ == Kind::frank; }
  /// True when copula evaluation reduces to the product of margins.
  bool acts_as_independence() const noexcept {
    return kind_ == Kind::independence || std::abs(rho_) < kRhoEps;
  }

 private:
  Dependence(Kind kind, double rho) : kind_(kind), rho_(rho) {}
  Kind kind_;
  double rho_;
};

namespace detail {

inline void require_rho(double rho, std::size_t dim, const char* where) {
  if (!std::isfinite(rho) || std::abs(rho) > kRhoMax) {
    throw DomainError(std::string(where) + ": |rho| must not exceed " + std::to_string(kRhoMax));
  }
  if (dim >= 3 && rho <= -kRhoEps) {
    throw DomainError(std::string(where) + ": rho must be positive in three or more dimensions");
  }
}

}  // namespace detail

/// Frank generator phi(t) = -log((e^{-rho t} - 1) / (e^{-rho} - 1)) on (0, 1].
inline double frank_generator(double t, double rho) {
  if (!(t > 0.0) || t > 1.0) {
    throw DomainError("frank_generator: t must lie in (0, 1], got " + std::to_string(t));
  }
  detail::require_rho(rho, 2, "frank_generator");
  if (std::abs(rho) < kRhoEps) return -std::log(t);
  if (t == 1.0) return 0.0;
  // ratio - 1 = (e^{-rho t} - e^{-rho}) / (e^{-rho} - 1)
  //           = -e^{-rho t} expm1(-rho (1 - t)) / expm1(-rho)
  const double den = std::expm1(-rho);
  const double ratio_minus_one = -std::exp(-rho * t) * std::expm1(-rho * (1.0 - t)) / den;
  if (std::abs(ratio_minus_one) < 0.5) return -std::log1p(ratio_minus_one);
  return -std::log(std::expm1(-rho * t) / den);
}

/// Inverse generator phi^{-1}(s) = -(1/rho) log(1 + e^{-s}(e^{-rho} - 1)), s >= 0.
inline double frank_generator_inverse(double s, double rho) {
  if (std::isnan(s) || s < 0.0) {
    throw DomainError("frank_generator_inverse: s must be >= 0, got " + std::to_string(s));
  }
  detail::require_rho(rho, 2, "frank_generator_inverse");
  if (std::isinf(s)) return 0.0;
  if (std::abs(rho) < kRhoEps) return std::exp(-s);
  if (rho > 0.0) {
    // 1 + e^{-s}(e^{-rho} - 1) = -expm1(-s) + e^{-s-rho}, both terms positive.
    return -std::log(-std::expm1(-s) + std::exp(-s - rho)) / rho;
  }
  return -std::log1p(std::exp(-s) * std::expm1(-rho)) / rho;
}

/// C_rho(u_1, ..., u_K) = phi^{-1}(sum phi(u_k)).
inline double frank_cdf(std::span<const double> u, double rho) {
  for (const double v : u) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("frank_cdf: components must lie in [0, 1], got " + std::to_string(v));
    }
  }
  detail::require_rho(rho, u.size(), "frank_cdf");
  for (const double v : u) {
    if (v == 0.0) return 0.0;
  }
  if (std::abs(rho) < kRhoEps) {
    double prod = 1.0;
    for (const double v : u) prod *= v;
    return prod;
  }
  double s = 0.0;
  for (const double v : u) s += frank_generator(v, rho);
  return std::min(1.0, std::max(0.0, frank_generator_inverse(s, rho)));
}

/// Joint CDF of the copula-Poisson vector, F(y) = C(F_1(y_1), ..., F_K(y_K)).
/// Any y_k < 0 gives 0.
inline double copula_poisson_cdf(std::span<const Count> y, std::span<const double> lambda,
                                 const Dependence& dep) {
  if (y.size() != lambda.size() || y.empty()) {
    throw DomainError("copula_poisson_cdf: y and lambda must have equal, non-zero length");
  }
  std::vector<double> u(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    detail::require_intensity(lambda[k], "copula_poisson_cdf");
    if (y[k] < 0) return 0.0;
    u[k] = poisson_cdf(y[k], lambda[k]);
  }
  if (u.size() == 1) return u[0];
  if (dep.acts_as_independence()) {
    double prod = 1.0;
    for (const double v : u) prod *= v;
    return prod;
  }
  return frank_cdf(u, dep.rho());
}

/// Counts rectangle probabilities that had to be floored.
struct ClampCounter {
  std::size_t clamped = 0;
};

/// Marginal CDF values bracketing one observation: F(y) and F(y - 1).
struct MarginBracket {
  double upper = 0.0;
  double lower = 0.0;
  double pmf = 0.0;
};

inline MarginBracket margin_bracket(Count y, double lambda) {
  detail::require_intensity(lambda, "margin_bracket");
  if (y < 0) throw DomainError("margin_bracket: negative count");
  MarginBracket b;
  b.upper = poisson_cdf(y, lambda);
  b.lower = poisson_cdf(y - 1, lambda);
  b.pmf = poisson_pmf(y, lambda);
  return b;
}

/// Rectangle (inclusion-exclusion) probability from precomputed margin
/// brackets. Generator values are computed once per bracket end.
inline double frank_rectangle_probability(std::span<const MarginBracket> margins, double rho,
                                          ClampCounter* counter = nullptr) {
  const std::size_t dim = margins.size();
  if (dim == 0) throw DomainError("frank_rectangle_probability: empty margins");
  if (dim > 20) throw DomainError("frank_rectangle_probability: dimension too large");
  if (dim == 1) return margins[0].pmf;
  detail::require_rho(rho, dim, "frank_rectangle_probability");

  double value = 0.0;
  if (std::abs(rho) < kRhoEps) {
    value = 1.0;
    for (const auto& m : margins) value *= m.pmf;
    return value;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> gen_upper(dim), gen_lower(dim);
  for (std::size_t k = 0; k < dim; ++k) {
    gen_upper[k] = margins[k].upper > 0.0 ? frank_generator(margins[k].upper, rho) : inf;
    gen_lower[k] = margins[k].lower > 0.0 ? frank_generator(margins[k].lower, rho) : inf;
  }
  const std::size_t corners = std::size_t{1} << dim;
  for (std::size_t mask = 0; mask < corners; ++mask) {
    double s = 0.0;
    int sign = 1;
    for (std::size_t k = 0; k < dim; ++k) {
      if (mask & (std::size_t{1} << k)) {
        s += gen_lower[k];
        sign = -sign;
      } else {
        s += gen_upper[k];
      }
    }
    if (std::isinf(s)) continue;  // grounded corner
    value += sign * frank_generator_inverse(s, rho);
  }
  if (value > 1.0) value = 1.0;
  if (value < kPmfFloor) {
    if (value < -kPmfNegativeTolerance) {
      throw NumericalError("copula rectangle probability is negative beyond tolerance: " +
                           std::to_string(value));
    }
    value = kPmfFloor;
    if (counter != nullptr) ++counter->clamped;
  }
  return value;
}

/// Pr(Y = y) for the copula-Poisson vector via the 2^K inclusion-exclusion
/// sum; under independence the product of marginal pmfs.
inline double copula_poisson_pmf(std::span<const Count> y, std::span<const double> lambda,
                                 const Dependence& dep, ClampCounter* counter = nullptr) {
  if (y.size() != lambda.size() || y.empty()) {
    throw DomainError("copula_poisson_pmf: y and lambda must have equal, non-zero length");
  }
  std::vector<MarginBracket> margins(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] < 0) throw DomainError("copula_poisson_pmf: counts must be non-negative");
    margins[k] = margin_bracket(y[k], lambda[k]);
  }
  if (dep.acts_as_independence() || y.size() == 1) {
    double prod = 1.0;
    for (const auto& m : margins) prod *= m.pmf;
    return prod;
  }
  return frank_rectangle_probability(margins, dep.rho(), counter);
}

namespace detail {

/// Logarithmic-series draw with parameter p = 1 - e^{-rho} (Kemp's LK
/// algorithm). rho is passed instead of p to keep 1 - p exact.
template <class URBG>
std::int64_t logarithmic_series_sample(double rho, URBG& rng) {
  const double p = -std::expm1(-rho);
  const double v = uniform_open01(rng);
  if (v > p) return 1;
  const double q = -std::expm1(-rho * uniform_open01(rng));
  if (v < q * q) {
    const double lq = std::log(q);
    if (lq == 0.0) return 1;
    return static_cast<std::int64_t>(std::floor(1.0 + std::log(v) / lq));
  }
  return v > q ? 1 : 2;
}

}  // namespace detail

/// One draw from the K-dimensional Frank copula. K = 2 uses conditional
/// inversion; K >= 3 the logarithmic-series frailty construction.
template <class URBG>
std::vector<double> frank_sample(std::size_t dim, double rho, URBG& rng) {
  if (dim < 2) throw DomainError("frank_sample: dimension must be at least 2");
  if (dim >= 3 && rho <= 0.0) {
    throw DomainError("frank_sample: rho must be positive in three or more dimensions");
  }
  detail::require_rho(rho, dim, "frank_sample");
  std::vector<double> u(dim);
  if (std::abs(rho) < kRhoEps) {
    for (auto& v : u) v = uniform01(rng);
    return u;
  }
  if (dim == 2) {
    const double u1 = uniform01(rng);
    const double p = uniform_open01(rng);
    // Solve dC/du1 (u1, v) = p for v.
    const double a = std::exp(-rho * u1);
    const double v = -std::log1p(p * std::expm1(-rho) / (p + (1.0 - p) * a)) / rho;
    u[0] = u1;
    u[1] = std::min(1.0, std::max(0.0, v));
    return u;
  }
  const double frailty = static_cast<double>(detail::logarithmic_series_sample(rho, rng));
  for (auto& v : u) v = frank_generator_inverse(standard_exponential(rng) / frailty, rho);
  return u;
}

}  // namespace poarx
