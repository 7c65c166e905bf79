#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "poarx/model.hpp"

using namespace poarx;

namespace {

MarginSpec poarx11() { return {{1}, {1}, 0, true}; }

CovariateMatrix no_covariates(std::size_t n) { return CovariateMatrix(static_cast<Eigen::Index>(n), 0); }

// Plain loop transcription of the recursion with constant pre-sample values.
std::vector<double> recursion_oracle(const std::vector<int>& obs_lags, const std::vector<int>& mean_lags,
                                     double omega, const std::vector<double>& alpha, const std::vector<double>& beta,
                                     const std::vector<double>& eta, const std::vector<Count>& y,
                                     const CovariateMatrix& x, double y0, double l0) {
  const auto n = static_cast<long>(y.size());
  std::vector<double> lam(y.size());
  auto ya = [&](long t) { return t < 0 ? y0 : static_cast<double>(y[t]); };
  auto la = [&](long t) { return t < 0 ? l0 : lam[t]; };
  for (long t = 0; t < n; ++t) {
    double v = omega;
    for (std::size_t i = 0; i < obs_lags.size(); ++i) v += alpha[i] * ya(t - obs_lags[i]);
    for (std::size_t i = 0; i < mean_lags.size(); ++i) v += beta[i] * la(t - mean_lags[i]);
    for (std::size_t k = 0; k < eta.size(); ++k) v += eta[k] * x(t, static_cast<Eigen::Index>(k));
    lam[t] = v;
  }
  return lam;
}

}  // namespace

TEST(FilterIntensities, InterceptOnly) {
  const MarginSpec spec{{}, {}, 0, true};
  const MarginParams p{0.5, {}, {}, {}};
  const std::vector<Count> y{3, 0, 7, 1};
  for (double v : filter_intensities(spec, p, y, no_covariates(4), InitPolicy::sample_mean())) EXPECT_EQ(v, 0.5);
}

TEST(FilterIntensities, TwoStepHandRecursion) {
  const MarginParams p{1.0, {0.2}, {0.3}, {}};
  const std::vector<Count> y{3, 1};
  const auto lam = filter_intensities(poarx11(), p, y, no_covariates(2), InitPolicy::fixed(2.0, 1.0));
  EXPECT_NEAR(lam[0], 1.7, 1e-15);
  EXPECT_NEAR(lam[1], 1.0 + 0.6 + 0.3 * 1.7, 1e-15);
  EXPECT_NEAR(lam[1], 2.11, 1e-15);
}

TEST(FilterIntensities, SparseLagsAndCovariatesMatchOracle) {
  const MarginSpec spec{{1, 2, 5}, {1, 3}, 2, true};
  const MarginParams p{0.4, {0.2, 0.1, 0.05}, {0.3, 0.1}, {0.7, 1.3}};
  const std::size_t n = 60;
  std::vector<Count> y(n);
  CovariateMatrix x(n, 2);
  for (std::size_t t = 0; t < n; ++t) {
    y[t] = static_cast<Count>((t * 7) % 5);
    x(t, 0) = (t % 7 < 5) ? 1.0 : 0.0;
    x(t, 1) = 0.1 * static_cast<double>(t % 3);
  }
  const auto lam = filter_intensities(spec, p, y, x, InitPolicy::fixed(1.5, 2.5));
  const auto oracle = recursion_oracle({1, 2, 5}, {1, 3}, 0.4, {0.2, 0.1, 0.05}, {0.3, 0.1}, {0.7, 1.3}, y, x, 1.5, 2.5);
  for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(lam[t], oracle[t], 1e-12);
}

TEST(FilterIntensities, SampleMeanPresample) {
  const MarginParams p{1.0, {0.2}, {0.3}, {}};
  const std::vector<Count> y{2, 4, 0, 6};
  const auto lam = filter_intensities(poarx11(), p, y, no_covariates(4), InitPolicy::sample_mean());
  EXPECT_NEAR(lam[0], 1.0 + 0.2 * 3.0 + 0.3 * 3.0, 1e-15);
}

TEST(FilterIntensities, AllZeroSeriesUsesSmallPresample) {
  const MarginParams p{1.0, {0.2}, {0.3}, {}};
  const std::vector<Count> y(5, 0);
  const auto lam = filter_intensities(poarx11(), p, y, no_covariates(5), InitPolicy::sample_mean());
  EXPECT_NEAR(lam[0], 1.0 + 0.5 * kZeroSeriesPresample, 1e-15);
}

TEST(FilterIntensities, SkipBurnIn) {
  const MarginSpec spec{{1, 3}, {}, 0, true};
  const MarginParams p{1.0, {0.2, 0.1}, {}, {}};
  const std::vector<Count> y{1, 2, 3, 4, 5};
  const auto lam = filter_intensities(spec, p, y, no_covariates(5), InitPolicy::skip_burn_in());
  EXPECT_NEAR(lam[3], 1.0 + 0.2 * 3 + 0.1 * 1, 1e-15);
  EXPECT_NEAR(lam[4], 1.0 + 0.2 * 4 + 0.1 * 2, 1e-15);
}

TEST(FilterIntensities, ShiftConsistent) {
  const MarginParams p{0.8, {0.25}, {0.5}, {}};
  std::vector<Count> y;
  for (int t = 0; t < 50; ++t) y.push_back((t * 13) % 9);
  const InitPolicy init = InitPolicy::fixed(3.0, 3.0);
  const auto full = filter_intensities(poarx11(), p, y, no_covariates(50), init);
  const std::vector<Count> head(y.begin(), y.begin() + 40);
  const auto part = filter_intensities(poarx11(), p, head, no_covariates(40), init);
  for (std::size_t t = 0; t < 40; ++t) EXPECT_EQ(part[t], full[t]);
}

TEST(FilterIntensities, MonotoneInPastCounts) {
  const MarginSpec spec{{1, 2}, {1}, 0, true};
  const MarginParams p{0.5, {0.2, 0.1}, {0.4}, {}};
  std::vector<Count> y(30, 2);
  const InitPolicy init = InitPolicy::fixed(2.0, 2.0);
  const auto base = filter_intensities(spec, p, y, no_covariates(30), init);
  y[10] += 5;
  const auto bumped = filter_intensities(spec, p, y, no_covariates(30), init);
  for (std::size_t s = 0; s < 30; ++s) {
    EXPECT_GE(bumped[s], base[s]);
    if (s > 10) {
      EXPECT_GT(bumped[s], base[s]);
    }
  }
}

TEST(FilterIntensities, ConstantInputConverges) {
  const MarginSpec spec{{1, 2}, {1, 2}, 0, true};
  const MarginParams p{0.7, {0.15, 0.1}, {0.3, 0.2}, {}};
  const std::vector<Count> y(500, 4);
  const auto lam = filter_intensities(spec, p, y, no_covariates(500), InitPolicy::fixed(0.0, 50.0));
  const double limit = (0.7 + 4.0 * 0.25) / (1.0 - 0.5);
  EXPECT_NEAR(lam.back(), limit, 1e-8);
}

TEST(FilterIntensities, NonFiniteReportsTime) {
  const MarginSpec spec{{}, {}, 1, true};
  const MarginParams p{1.0, {}, {}, {1e308}};
  CovariateMatrix x(3, 1);
  x << 0.0, 10.0, 0.0;
  const std::vector<Count> y{1, 1, 1};
  try {
    filter_intensities(spec, p, y, x, InitPolicy::sample_mean());
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("t=2"), std::string::npos);
  }
}

TEST(MarginParams, LongSeasonalLagsAreValid) {
  const MarginSpec spec{{1, 2, 48, 336}, {1}, 3, true};
  const MarginParams p{0.019, {0.396, 0.113, 0.048, 0.256}, {0.140}, {0.102, 0.229, 5.684}};
  EXPECT_NO_THROW(p.validate(spec));
  EXPECT_TRUE(check_stability(p).stable);
}

TEST(MarginParams, VectorRoundTrip) {
  const MarginSpec spec{{1, 2}, {1}, 2, true};
  const MarginParams p{0.5, {0.1, 0.2}, {0.3}, {1.0, 2.0}};
  const auto v = p.to_vector(spec);
  ASSERT_EQ(v.size(), spec.n_params());
  const auto q = MarginParams::from_vector(spec, v);
  EXPECT_EQ(q.to_vector(spec), v);
  EXPECT_EQ(spec.parameter_names(),
            (std::vector<std::string>{"omega", "alpha_lag1", "alpha_lag2", "beta_lag1", "eta_1", "eta_2"}));
}

TEST(MarginParams, RejectsNegatives) {
  const MarginParams p{0.5, {-0.1}, {0.3}, {}};
  EXPECT_THROW(p.validate(poarx11()), DomainError);
}

TEST(MarginSpec, RejectsDuplicateOrNonPositiveLags) {
  MarginSpec a{{1, 1}, {}, 0, true};
  EXPECT_THROW(a.normalize(), ConfigError);
  MarginSpec b{{0}, {}, 0, true};
  EXPECT_THROW(b.normalize(), ConfigError);
  MarginSpec c{{3, 1}, {2}, 0, true};
  c.normalize();
  EXPECT_EQ(c.obs_lags, (std::vector<int>{1, 3}));
  EXPECT_EQ(c.max_lag(), 3);
}

TEST(ModelSpec, FrankNeedsTwoSeries) {
  ModelSpec s{{poarx11()}, Dependence::Kind::frank};
  EXPECT_THROW(s.normalize(), ConfigError);
  ModelSpec t{{poarx11(), poarx11()}, Dependence::Kind::frank};
  EXPECT_EQ(t.n_params(), 7u);
}

TEST(Stability, ZeroCoefficients) {
  const auto s = check_stability(MarginParams{1.0, {0.0}, {0.0}, {}});
  EXPECT_TRUE(s.stable);
  EXPECT_EQ(s.margin, 1.0);
}

TEST(Stability, NearBoundary) {
  const auto s = check_stability(MarginParams{0.079, {0.390, 0.137, 0.054, 0.275}, {0.142}, {}});
  EXPECT_TRUE(s.stable);
  EXPECT_NEAR(s.margin, 0.002, 1e-12);
}

TEST(Stability, Unstable) { EXPECT_FALSE(check_stability(MarginParams{1.0, {0.6}, {0.5}, {}}).stable); }

TEST(UnconditionalMean, Values) {
  EXPECT_NEAR(unconditional_mean(MarginParams{1.0, {0.2}, {0.3}, {}}), 2.0, 1e-15);
  EXPECT_NEAR(unconditional_mean(MarginParams{0.5, {}, {}, {}}), 0.5, 1e-15);
  EXPECT_NEAR(unconditional_mean(MarginParams{0.079, {0.390, 0.137, 0.054, 0.275}, {0.142}, {}}), 39.5, 1e-9);
  // eta = 2 on a covariate averaging 0.5
  EXPECT_NEAR(unconditional_mean(MarginParams{1.0, {0.2}, {0.3}, {2.0}}, 2.0 * 0.5), 4.0, 1e-15);
  EXPECT_THROW(unconditional_mean(MarginParams{1.0, {0.6}, {0.5}, {}}), DomainError);
}

TEST(SeriesData, ValidateAndSlice) {
  ModelSpec spec{{poarx11(), MarginSpec{{1}, {}, 1, true}}, Dependence::Kind::independence};
  SeriesData d;
  d.y = {{1, 2, 3, 4}, {0, 0, 1, 1}};
  d.x = {no_covariates(4), CovariateMatrix(4, 1)};
  d.x[1] << 1, 0, 1, 0;
  d.time = {10, 11, 12, 13};
  EXPECT_NO_THROW(d.validate(spec));
  const auto s = d.slice(1, 3);
  EXPECT_EQ(s.y[0], (std::vector<Count>{2, 3}));
  EXPECT_EQ(s.x[1](0, 0), 0.0);
  EXPECT_EQ(s.time, (std::vector<std::int64_t>{11, 12}));
  d.y[1][2] = -1;
  EXPECT_THROW(d.validate(spec), DataError);
  d.y[1][2] = 1;
  d.time[2] = 11;
  EXPECT_THROW(d.validate(spec), DataError);
}
