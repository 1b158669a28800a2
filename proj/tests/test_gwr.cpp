#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "concentra/gwr.hpp"

using namespace concentra;
using namespace concentra::gwr;

namespace {

std::vector<Observation> random_obs(std::uint64_t seed, std::size_t n, double c0, double c1,
                                    double noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::uniform_real_distribution<double> ux(0.0, 10.0);
  std::normal_distribution<double> e(0.0, noise);
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < n; ++i) {
    double x = ux(rng);
    obs.push_back({"r" + std::to_string(i), geo::Point{u(rng), u(rng)}, x,
                   c0 + c1 * x + (noise > 0.0 ? e(rng) : 0.0)});
  }
  return obs;
}

// Closed-form solution of the weighted 2x2 normal equations.
std::pair<double, double> normal_equations(std::span<const Observation> obs,
                                           std::span<const double> w) {
  long double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t j = 0; j < obs.size(); ++j) {
    long double x = obs[j].x, y = obs[j].y, wj = w[j];
    sw += wj;
    sx += wj * x;
    sy += wj * y;
    sxx += wj * x * x;
    sxy += wj * x * y;
  }
  long double det = sw * sxx - sx * sx;
  long double c1 = (sw * sxy - sx * sy) / det;
  long double c0 = (sy - c1 * sx) / sw;
  return {static_cast<double>(c0), static_cast<double>(c1)};
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Kernel, GaussianShapeAndTruncation) {
  EXPECT_DOUBLE_EQ(gaussian_weight(0.0, 2.0, true), 1.0);
  EXPECT_DOUBLE_EQ(gaussian_weight(2.0, 2.0, true), std::exp(-1.0));
  EXPECT_DOUBLE_EQ(gaussian_weight(2.1, 2.0, true), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_weight(4.0, 2.0, false), std::exp(-4.0));
}

TEST(Kernel, AdaptiveDistanceIsKthNeighbour) {
  std::vector<double> d{0.0, 5.0, 1.0, 3.0, 2.0};
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 3;
  auto k = kernel_weights(0, d, cfg);
  EXPECT_DOUBLE_EQ(k.bandwidth_distance, 3.0);
  EXPECT_DOUBLE_EQ(k.weights[0], 1.0);
  EXPECT_DOUBLE_EQ(k.weights[3], std::exp(-1.0));
  EXPECT_DOUBLE_EQ(k.weights[1], 0.0);
  EXPECT_FALSE(k.floored);
}

TEST(Kernel, ZeroBandwidthIsFloored) {
  std::vector<double> d{0.0, 0.0, 0.0, 4.0};
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 2;
  auto k = kernel_weights(0, d, cfg);
  EXPECT_TRUE(k.floored);
  EXPECT_DOUBLE_EQ(k.bandwidth_distance, 4.0);
}

TEST(Wls, MatchesNormalEquationsOnRandomInstances) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> uw(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    auto obs = random_obs(static_cast<std::uint64_t>(t), 12, 3.0, -2.0, 1.0);
    std::vector<double> w(obs.size());
    for (auto& v : w) v = uw(rng);
    auto c = wls_solve(obs, w);
    auto [c0, c1] = normal_equations(obs, w);
    ASSERT_LT(rel(c.c0, c0), 1e-10) << t;
    ASSERT_LT(rel(c.c1, c1), 1e-10) << t;
  }
}

TEST(Wls, ConstantPredictorIsSingular) {
  std::vector<Observation> obs{{"a", {}, 1.0, 1.0}, {"b", {}, 1.0, 2.0}, {"c", {}, 1.0, 3.0}};
  std::vector<double> w{1, 1, 1};
  EXPECT_THROW(wls_solve(obs, w), LocalSingularity);
  EXPECT_THROW(ols_fit(obs), NumericError);
}

TEST(Wls, LargeOffsetsStayAccurate) {
  auto obs = random_obs(5, 50, 1e6, 0.5, 0.01);
  for (auto& o : obs) o.x += 1e5;
  std::vector<double> w(obs.size(), 1.0);
  auto c = wls_solve(obs, w);
  auto [c0, c1] = normal_equations(obs, w);
  EXPECT_NEAR(c.c1, c1, 1e-6);
  EXPECT_LT(rel(c.c0, c0), 1e-9);
}

TEST(Gwr, FlatWeightsReproduceOls) {
  auto obs = random_obs(2024, 200, 1.5, 0.7, 0.5);
  auto ols = ols_fit(obs);
  KernelConfig cfg;
  cfg.bandwidth_neighbors = obs.size() - 1;
  cfg.truncate = false;
  cfg.bandwidth_multiplier = 1e6;
  auto fit = gwr_fit(obs, cfg);
  for (const auto& l : fit.locals) {
    ASSERT_TRUE(l.ok);
    EXPECT_LT(rel(l.c0, ols.c0), 1e-6);
    EXPECT_LT(rel(l.c1, ols.c1), 1e-6);
  }
  EXPECT_NEAR(fit.r_squared, ols.r_squared, 1e-6);
  EXPECT_NEAR(fit.effective_number, 2.0, 1e-6);
}

TEST(Gwr, ExactRecoveryOfLinearData) {
  auto obs = random_obs(8, 120, -4.0, 2.5, 0.0);
  for (std::size_t k = 4; k <= 40; ++k) {
    KernelConfig cfg;
    cfg.bandwidth_neighbors = k;
    auto fit = gwr_fit(obs, cfg);
    for (const auto& l : fit.locals) {
      ASSERT_TRUE(l.ok);
      ASSERT_NEAR(l.c0, -4.0, 1e-8);
      ASSERT_NEAR(l.c1, 2.5, 1e-8);
    }
    EXPECT_DOUBLE_EQ(fit.r_squared, 1.0);
    EXPECT_LT(loocv_score(obs, cfg).score, 1e-12) << k;
  }
}

TEST(Gwr, SmootherRowsReproduceFitsAndTraces) {
  auto obs = random_obs(3, 60, 1.0, 1.0, 0.3);
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 10;
  auto fit = gwr_fit(obs, cfg);
  const std::size_t n = obs.size();
  std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (auto [j, v] : fit.locals[i].smoother_row) s[i][j] = v;
  }
  double tr = 0, trss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double yhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yhat += s[i][j] * obs[j].y;
      trss += s[i][j] * s[i][j];
    }
    tr += s[i][i];
    EXPECT_NEAR(yhat, fit.locals[i].fitted, 1e-9);
    EXPECT_NEAR(s[i][i], fit.locals[i].hat, 1e-12);
  }
  EXPECT_NEAR(fit.trace_s, tr, 1e-9);
  EXPECT_NEAR(fit.trace_sts, trss, 1e-9);
  EXPECT_NEAR(fit.effective_number, 2 * tr - trss, 1e-9);

  std::vector<double> y;
  for (const auto& o : obs) y.push_back(o.y);
  auto r = apply_residual_maker(fit, y);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r[i], fit.locals[i].residual, 1e-9);
}

TEST(Gwr, StandardizedResiduals) {
  auto obs = random_obs(4, 80, 0.0, 1.0, 1.0);
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 15;
  auto fit = gwr_fit(obs, cfg);
  double sigma = std::sqrt(fit.sigma2_hat);
  EXPECT_NEAR(fit.sigma2_hat, fit.rss / (80.0 - fit.effective_number), 1e-12);
  for (const auto& l : fit.locals) {
    EXPECT_NEAR(l.std_residual, l.residual / (sigma * std::sqrt(1.0 - l.hat)), 1e-9);
  }
}

TEST(Cv, MatchesBruteForceLeaveOneOut) {
  auto obs = random_obs(17, 40, 2.0, -1.0, 0.5);
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 7;
  double brute = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    std::vector<double> d;
    for (const auto& o : obs) d.push_back(geo::distance(obs[i].location, o.location));
    auto w = kernel_weights(i, d, cfg).weights;
    w[i] = 0.0;
    auto c = wls_solve(obs, w);
    double e = obs[i].y - (c.c0 + c.c1 * obs[i].x);
    brute += e * e;
  }
  EXPECT_NEAR(loocv_score(obs, cfg).score, brute, 1e-9 * brute);
}

TEST(Cv, SingularNeighbourhoodsAreFlaggedNotFatal) {
  auto obs = random_obs(21, 30, 1.0, 1.0, 0.1);
  for (std::size_t i = 0; i < 10; ++i) {
    obs[i].location = geo::Point{5000.0 + static_cast<double>(i), 5000.0};
    obs[i].x = 3.0;
  }
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 3;
  auto cv = loocv_score(obs, cfg);
  EXPECT_FALSE(cv.flagged.empty());
  auto fit = gwr_fit(obs, cfg);
  std::size_t bad = 0;
  for (const auto& l : fit.locals) bad += l.ok ? 0 : 1;
  EXPECT_GT(bad, 0u);
  EXPECT_EQ(fit.n_fitted, obs.size() - bad);
  EXPECT_FALSE(fit.warnings.empty());
}

TEST(Bandwidth, OutOfRangeIsAContractViolation) {
  auto obs = random_obs(1, 10, 0, 1, 0.1);
  KernelConfig cfg;
  cfg.bandwidth_neighbors = 10;
  EXPECT_THROW(gwr_fit(obs, cfg), ContractViolation);
  cfg.bandwidth_neighbors = 1;
  EXPECT_THROW(gwr_fit(obs, cfg), ContractViolation);
  EXPECT_THROW(optimize_bandwidth(obs, 5, 3), ContractViolation);
}

TEST(Bandwidth, SearchEqualsExhaustiveArgmin) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> e(0.0, 0.3);
    auto obs = random_obs(seed + 100, 250, 0.0, 0.0, 0.0);
    for (auto& o : obs) o.y = 1.0 + std::sin(o.location.x / 150.0) * o.x + e(rng);
    auto s = optimize_bandwidth(obs, 4, 60);
    std::size_t best = 0;
    double score = std::numeric_limits<double>::infinity();
    NeighborIndex index(obs, 60);
    for (std::size_t k = 4; k <= 60; ++k) {
      KernelConfig cfg;
      cfg.bandwidth_neighbors = k;
      double v = loocv_score(obs, index, cfg).score;
      if (v < score) {
        score = v;
        best = k;
      }
    }
    EXPECT_EQ(s.best, best) << "seed " << seed;
    EXPECT_NEAR(s.score, score, 1e-9 * score);
    EXPECT_LT(s.evaluated.size(), 57u);
  }
}

TEST(Bandwidth, TiesResolveToSmallerNeighbourCount) {
  auto obs = random_obs(6, 50, 1.0, 2.0, 0.0);
  auto s = optimize_bandwidth(obs, 4, 30);
  EXPECT_EQ(s.best, 4u);
}
