#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "concentra/error.hpp"
#include "concentra/geo.hpp"

// Geographically weighted regression with a one-predictor model
//
//   y_i = c0(u_i, v_i) + c1(u_i, v_i) x_i + e_i
//
// estimated at every location by weighted least squares. Weights follow a
// Gaussian distance decay w_ij = exp(-(d_ij / b_i)^2) with an adaptive
// bandwidth b_i: the distance from i to its k-th nearest neighbour. The
// decay carries a minus sign; without it the weights would grow with
// distance. With `truncate` set, w_ij = 0 for d_ij > b_i.

namespace concentra::gwr {

struct Observation {
  std::string region_id;
  geo::Point location;
  double x = 0.0;  ///< predictor (population density)
  double y = 0.0;  ///< response (determinant proxy)
};

struct KernelConfig {
  /// Adaptive bandwidth as a neighbour count.
  std::size_t bandwidth_neighbors = 2;
  /// Zero weight beyond the bandwidth distance.
  bool truncate = true;
  /// Scales every adaptive distance b_i. 1 in normal use.
  double bandwidth_multiplier = 1.0;
};

/// Local design is singular at one location.
class LocalSingularity : public NumericError {
 public:
  explicit LocalSingularity(const std::string& region_id)
      : NumericError("gwr", "singular local design at region '" + region_id + "'", region_id,
                     "widen the bandwidth or drop regions with identical predictor values") {}
};

// Weighted least squares -----------------------------------------------------

/// Weighted least squares with an intercept and P predictors. Moments are
/// accumulated about the running weighted mean, which keeps the normal
/// equations well conditioned when the predictor has a large offset.
template <int P>
class LocalLeastSquares {
 public:
  using Vec = Eigen::Matrix<double, P, 1>;
  using Mat = Eigen::Matrix<double, P, P>;

  void add(const Vec& x, double y, double w) {
    if (!(w > 0.0)) return;
    ++positive_;
    total_ += w;
    Vec dx = x - mean_x_;
    double dy = y - mean_y_;
    mean_x_ += (w / total_) * dx;
    mean_y_ += (w / total_) * dy;
    cxx_.noalias() += w * dx * (x - mean_x_).transpose();
    cxy_ += w * dx * (y - mean_y_);
  }

  /// Solves the weighted normal equations. Returns false when fewer than
  /// P + 1 points carry weight or the centred design is rank deficient.
  bool solve() {
    solved_ = false;
    if (positive_ < static_cast<std::size_t>(P) + 1 || !(total_ > 0.0)) return false;
    Mat sym = 0.5 * (cxx_ + cxx_.transpose());
    for (int k = 0; k < P; ++k) {
      double scale = sym(k, k) + total_ * mean_x_(k) * mean_x_(k);
      if (!(sym(k, k) > 1e-14 * scale)) return false;
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
    if (eig.info() != Eigen::Success) return false;
    double lo = eig.eigenvalues().minCoeff();
    double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-14 * hi)) return false;
    cxx_inv_ = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
               eig.eigenvectors().transpose();
    slopes_ = cxx_inv_ * cxy_;
    intercept_ = mean_y_ - mean_x_.dot(slopes_);
    solved_ = true;
    return true;
  }

  bool solved() const { return solved_; }
  double intercept() const { return intercept_; }
  const Vec& slopes() const { return slopes_; }

  double predict(const Vec& x) const { return mean_y_ + (x - mean_x_).dot(slopes_); }

  /// Smoother entry: weight of observation j (design xj, weight wj) in the
  /// fitted value at design point xi.
  double smoother_weight(const Vec& xi, const Vec& xj, double wj) const {
    return wj * (1.0 / total_ + (xi - mean_x_).dot(cxx_inv_ * (xj - mean_x_)));
  }

  /// Ratio of the extreme singular values of the weighted design [1, X]
  /// after scaling each column to unit length.
  double condition_number() const {
    using Gram = Eigen::Matrix<double, P + 1, P + 1>;
    Gram g;
    g(0, 0) = total_;
    g.template block<P, 1>(1, 0) = total_ * mean_x_;
    g.template block<1, P>(0, 1) = total_ * mean_x_.transpose();
    g.template block<P, P>(1, 1) = 0.5 * (cxx_ + cxx_.transpose()) + total_ * mean_x_ * mean_x_.transpose();
    Eigen::Matrix<double, P + 1, 1> d = g.diagonal().cwiseSqrt().cwiseInverse();
    Gram scaled = d.asDiagonal() * g * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Gram> eig(scaled, Eigen::EigenvaluesOnly);
    double lo = eig.eigenvalues().minCoeff();
    double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return std::sqrt(hi / lo);
  }

 private:
  std::size_t positive_ = 0;
  double total_ = 0.0;
  Vec mean_x_ = Vec::Zero();
  double mean_y_ = 0.0;
  Mat cxx_ = Mat::Zero();
  Vec cxy_ = Vec::Zero();
  Mat cxx_inv_ = Mat::Zero();
  Vec slopes_ = Vec::Zero();
  double intercept_ = 0.0;
  bool solved_ = false;
};

using SimpleLeastSquares = LocalLeastSquares<1>;

inline SimpleLeastSquares::Vec design(double x) {
  SimpleLeastSquares::Vec v;
  v(0) = x;
  return v;
}

struct Coefficients {
  double c0 = 0.0;
  double c1 = 0.0;
};

struct OlsResult {
  double c0 = 0.0;
  double c1 = 0.0;
  double r_squared = 0.0;
};

/// Minimizes sum_j w_j (y_j - c0 - c1 x_j)^2.
inline Coefficients wls_solve(std::span<const Observation> obs, std::span<const double> weights,
                              const std::string& region_id = {}) {
  if (obs.size() != weights.size()) {
    throw ContractViolation("gwr", "wls_solve: observations and weights differ in length");
  }
  SimpleLeastSquares ls;
  for (std::size_t j = 0; j < obs.size(); ++j) {
    if (weights[j] < 0.0 || !std::isfinite(weights[j])) {
      throw ContractViolation("gwr", "wls_solve: weights must be finite and nonnegative");
    }
    ls.add(design(obs[j].x), obs[j].y, weights[j]);
  }
  if (!ls.solve()) throw LocalSingularity(region_id);
  return {ls.intercept(), ls.slopes()(0)};
}

/// Global ordinary least squares with R² = 1 - RSS/TSS (0 when TSS = 0).
inline OlsResult ols_fit(std::span<const Observation> obs) {
  if (obs.size() < 3) throw ContractViolation("gwr", "ols_fit needs at least 3 observations");
  std::vector<double> ones(obs.size(), 1.0);
  Coefficients c;
  try {
    c = wls_solve(obs, ones, "global");
  } catch (const LocalSingularity&) {
    throw NumericError("gwr", "singular design: predictor is constant", {},
                       "the predictor needs at least two distinct values");
  }
  double mean = 0.0;
  for (const auto& o : obs) mean += o.y;
  mean /= static_cast<double>(obs.size());
  double rss = 0.0;
  double tss = 0.0;
  for (const auto& o : obs) {
    double r = o.y - (c.c0 + c.c1 * o.x);
    rss += r * r;
    tss += (o.y - mean) * (o.y - mean);
  }
  double r2 = tss > 0.0 ? std::clamp(1.0 - rss / tss, 0.0, 1.0) : 0.0;
  return {c.c0, c.c1, r2};
}

// Kernel -------------------------------------------------------------------

/// Relative slack on the truncation radius, so neighbours tied with the k-th
/// one stay inside whatever rounding the coordinates went through.
inline constexpr double truncation_slack = 1e-9;

inline double gaussian_weight(double d, double b, bool truncate) {
  if (truncate && d > b * (1.0 + truncation_slack)) return 0.0;
  double t = d / b;
  return std::exp(-t * t);
}

struct KernelWeights {
  std::vector<double> weights;
  double bandwidth_distance = 0.0;
  /// b_i was zero (duplicate locations) and was raised to the smallest
  /// positive neighbour distance.
  bool floored = false;
};

namespace detail {

/// Distance to the k-th nearest neighbour in an ascending list that excludes
/// the point itself, floored to the smallest positive distance when zero.
inline std::pair<double, bool> adaptive_distance(std::span<const double> sorted_others,
                                                 std::size_t k) {
  double b = sorted_others[k - 1];
  if (b > 0.0) return {b, false};
  auto it = std::upper_bound(sorted_others.begin(), sorted_others.end(), 0.0);
  if (it == sorted_others.end()) {
    throw NumericError("gwr", "all neighbours share one location; bandwidth distance is zero");
  }
  return {*it, true};
}

}  // namespace detail

/// Weights of every observation for the local regression at `i`, given the
/// distances from i to all observations (distances[i] == 0).
inline KernelWeights kernel_weights(std::size_t i, std::span<const double> distances,
                                    const KernelConfig& config) {
  std::size_t n = distances.size();
  if (i >= n) throw ContractViolation("gwr", "kernel_weights: index out of range");
  if (config.bandwidth_neighbors < 1 || config.bandwidth_neighbors > n - 1) {
    throw ContractViolation("gwr", "bandwidth_neighbors must lie in [1, n-1]");
  }
  std::vector<double> others;
  others.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) others.push_back(distances[j]);
  }
  std::sort(others.begin(), others.end());
  auto [b, floored] = detail::adaptive_distance(others, config.bandwidth_neighbors);
  b *= config.bandwidth_multiplier;
  KernelWeights out;
  out.bandwidth_distance = b;
  out.floored = floored;
  out.weights.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.weights[j] = gaussian_weight(distances[j], b, config.truncate);
  }
  out.weights[i] = 1.0;
  return out;
}

// Neighbour index -------------------------------------------------------------

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

/// For every observation, its nearest neighbours (itself excluded) sorted by
/// distance, holding at least `capacity` entries plus any ties (within the
/// truncation slack) with the last.
class NeighborIndex {
 public:
  NeighborIndex(std::span<const Observation> obs, std::size_t capacity) : obs_(obs) {
    std::size_t n = obs.size();
    if (n < 2) throw ContractViolation("gwr", "neighbour index needs at least 2 observations");
    capacity_ = std::min(capacity, n - 1);
    lists_.resize(n);
    std::vector<Neighbor> row;
    row.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      row.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) row.push_back({j, geo::distance(obs[i].location, obs[j].location)});
      }
      auto by_dist = [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
      };
      auto kth = row.begin() + static_cast<std::ptrdiff_t>(capacity_ - 1);
      std::nth_element(row.begin(), kth, row.end(), by_dist);
      double cut = kth->distance * (1.0 + truncation_slack);
      reach_.push_back(cut);
      auto& list = lists_[i];
      for (const auto& nb : row) {
        if (nb.distance <= cut) list.push_back(nb);
      }
      std::sort(list.begin(), list.end(), by_dist);
    }
  }

  std::size_t size() const { return lists_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::span<const Neighbor> neighbors(std::size_t i) const { return lists_[i]; }
  double distance(std::size_t i, std::size_t j) const {
    return geo::distance(obs_[i].location, obs_[j].location);
  }

  /// Adaptive bandwidth distance b_i for k neighbours (before any multiplier).
  std::pair<double, bool> adaptive_distance(std::size_t i, std::size_t k) const {
    if (k < 1 || k > capacity_) {
      throw ContractViolation("gwr", "bandwidth exceeds the neighbour index capacity");
    }
    const auto& list = lists_[i];
    double b = list[k - 1].distance;
    if (b > 0.0) return {b, false};
    for (const auto& nb : list) {
      if (nb.distance > 0.0) return {nb.distance, true};
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lists_.size(); ++j) {
      double d = j == i ? 0.0 : distance(i, j);
      if (d > 0.0) best = std::min(best, d);
    }
    if (!std::isfinite(best)) {
      throw NumericError("gwr", "all observations share one location",
                         std::string(obs_[i].region_id));
    }
    return {best, true};
  }

  /// Calls f(j, w) for every other observation with positive weight.
  template <typename F>
  void for_each_weighted(std::size_t i, double b, bool truncate, F&& f) const {
    const auto& list = lists_[i];
    const double edge = b * (1.0 + truncation_slack);
    bool covered = truncate && (list.size() == lists_.size() - 1 || edge <= reach_[i]);
    if (covered) {
      for (const auto& nb : list) {
        if (nb.distance > edge) break;
        f(nb.index, gaussian_weight(nb.distance, b, true));
      }
      return;
    }
    for (std::size_t j = 0; j < lists_.size(); ++j) {
      if (j == i) continue;
      double w = gaussian_weight(distance(i, j), b, truncate);
      if (w > 0.0) f(j, w);
    }
  }

 private:
  std::span<const Observation> obs_;
  std::size_t capacity_ = 0;
  std::vector<std::vector<Neighbor>> lists_;
  std::vector<double> reach_;
};

// GWR fit --------------------------------------------------------------------

struct LocalFit {
  std::string region_id;
  bool ok = false;
  double c0 = std::numeric_limits<double>::quiet_NaN();
  double c1 = std::numeric_limits<double>::quiet_NaN();
  double fitted = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  double std_residual = std::numeric_limits<double>::quiet_NaN();
  double hat = std::numeric_limits<double>::quiet_NaN();
  double condition_number = std::numeric_limits<double>::quiet_NaN();
  double bandwidth_distance = std::numeric_limits<double>::quiet_NaN();
  /// Row i of the smoother matrix: (j, S_ij) over the kernel's support.
  std::vector<std::pair<std::size_t, double>> smoother_row;
  std::string error;
};

struct GwrFit {
  std::vector<LocalFit> locals;
  std::size_t bandwidth_neighbors = 0;
  bool truncate = true;
  /// Locations with a solved local model.
  std::size_t n_fitted = 0;
  double rss = 0.0;
  double tss = 0.0;
  double r_squared = 0.0;
  /// tr(S) and tr(SᵀS) of the smoother matrix.
  double trace_s = 0.0;
  double trace_sts = 0.0;
  /// 2 tr(S) - tr(SᵀS).
  double effective_number = 0.0;
  double sigma2_hat = 0.0;
  std::vector<std::string> warnings;

  std::vector<double> slopes() const {
    std::vector<double> out;
    for (const auto& l : locals) {
      if (l.ok) out.push_back(l.c1);
    }
    return out;
  }
};

namespace detail {

inline void check_bandwidth(std::size_t n, const KernelConfig& config) {
  if (config.bandwidth_neighbors < 2 || config.bandwidth_neighbors + 1 > n) {
    throw ContractViolation("gwr", "bandwidth_neighbors must lie in [2, n-1] (n = " +
                                       std::to_string(n) + ", got " +
                                       std::to_string(config.bandwidth_neighbors) + ")");
  }
  if (!(config.bandwidth_multiplier > 0.0)) {
    throw ContractViolation("gwr", "bandwidth multiplier must be positive");
  }
}

}  // namespace detail

inline GwrFit gwr_fit(std::span<const Observation> obs, const NeighborIndex& index,
                      const KernelConfig& config) {
  const std::size_t n = obs.size();
  detail::check_bandwidth(n, config);
  GwrFit fit;
  fit.bandwidth_neighbors = config.bandwidth_neighbors;
  fit.truncate = config.truncate;
  fit.locals.resize(n);
  std::vector<std::pair<std::size_t, double>> members;
  std::size_t floored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto& local = fit.locals[i];
    local.region_id = obs[i].region_id;
    auto [b, was_floored] = index.adaptive_distance(i, config.bandwidth_neighbors);
    floored += was_floored ? 1 : 0;
    b *= config.bandwidth_multiplier;
    local.bandwidth_distance = b;
    members.clear();
    members.emplace_back(i, 1.0);
    index.for_each_weighted(i, b, config.truncate,
                            [&](std::size_t j, double w) { members.emplace_back(j, w); });
    SimpleLeastSquares ls;
    for (auto [j, w] : members) ls.add(design(obs[j].x), obs[j].y, w);
    if (!ls.solve()) {
      local.error = "singular local design";
      continue;
    }
    local.ok = true;
    local.c0 = ls.intercept();
    local.c1 = ls.slopes()(0);
    local.fitted = ls.predict(design(obs[i].x));
    local.residual = obs[i].y - local.fitted;
    local.condition_number = ls.condition_number();
    auto xi = design(obs[i].x);
    double sum_sq = 0.0;
    local.smoother_row.reserve(members.size());
    for (auto [j, w] : members) {
      double s = ls.smoother_weight(xi, design(obs[j].x), w);
      sum_sq += s * s;
      if (j == i) local.hat = s;
      if (s != 0.0) local.smoother_row.emplace_back(j, s);
    }
    std::sort(local.smoother_row.begin(), local.smoother_row.end());
    fit.trace_s += local.hat;
    fit.trace_sts += sum_sq;
  }
  if (floored > 0) {
    fit.warnings.push_back(std::to_string(floored) +
                           " locations had a zero bandwidth distance (duplicate centroids); "
                           "floored to the nearest positive distance");
  }
  double mean = 0.0;
  for (const auto& l : fit.locals) {
    if (!l.ok) continue;
    ++fit.n_fitted;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (fit.locals[i].ok) mean += obs[i].y;
  }
  if (fit.n_fitted == 0) {
    throw NumericError("gwr", "no local model could be solved", {},
                       "widen the bandwidth or check for constant predictor values");
  }
  mean /= static_cast<double>(fit.n_fitted);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = fit.locals[i];
    if (!l.ok) continue;
    fit.rss += l.residual * l.residual;
    fit.tss += (obs[i].y - mean) * (obs[i].y - mean);
  }
  fit.r_squared = fit.tss > 0.0 ? std::clamp(1.0 - fit.rss / fit.tss, 0.0, 1.0) : 0.0;
  fit.effective_number = 2.0 * fit.trace_s - fit.trace_sts;
  double dof = static_cast<double>(fit.n_fitted) - fit.effective_number;
  fit.sigma2_hat = dof > 0.0 ? fit.rss / dof : std::numeric_limits<double>::quiet_NaN();
  double sigma = std::sqrt(fit.sigma2_hat);
  for (auto& l : fit.locals) {
    if (!l.ok) continue;
    double leverage = 1.0 - l.hat;
    if (fit.rss == 0.0) {
      l.std_residual = 0.0;
    } else if (leverage > 0.0 && sigma > 0.0) {
      l.std_residual = l.residual / (sigma * std::sqrt(leverage));
    }
  }
  if (fit.n_fitted < n) {
    fit.warnings.push_back(std::to_string(n - fit.n_fitted) +
                           " locations have a singular local design; coefficients missing");
  }
  return fit;
}

/// r = (I − S) e over the fitted locations; unfitted ones map to NaN.
inline std::vector<double> apply_residual_maker(const GwrFit& fit, std::span<const double> e) {
  std::vector<double> r(fit.locals.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < fit.locals.size(); ++i) {
    const auto& l = fit.locals[i];
    if (!l.ok) continue;
    double acc = e[i];
    for (auto [j, s] : l.smoother_row) acc -= s * e[j];
    r[i] = acc;
  }
  return r;
}

inline GwrFit gwr_fit(std::span<const Observation> obs, const KernelConfig& config) {
  detail::check_bandwidth(obs.size(), config);
  NeighborIndex index(obs, config.bandwidth_neighbors);
  return gwr_fit(obs, index, config);
}

// Cross-validation -----------------------------------------------------------

struct CvScore {
  double score = 0.0;
  /// Locations whose leave-one-out model was singular; each contributed
  /// (y_i - mean y)^2 instead.
  std::vector<std::size_t> flagged;
};

/// Sum of squared leave-one-out prediction errors: the local model at i is
/// refitted with w_ii = 0 and evaluated at x_i.
inline CvScore loocv_score(std::span<const Observation> obs, const NeighborIndex& index,
                           const KernelConfig& config) {
  const std::size_t n = obs.size();
  detail::check_bandwidth(n, config);
  double mean = 0.0;
  for (const auto& o : obs) mean += o.y;
  mean /= static_cast<double>(n);
  CvScore out;
  for (std::size_t i = 0; i < n; ++i) {
    auto [b, floored] = index.adaptive_distance(i, config.bandwidth_neighbors);
    b *= config.bandwidth_multiplier;
    SimpleLeastSquares ls;
    index.for_each_weighted(i, b, config.truncate, [&](std::size_t j, double w) {
      ls.add(design(obs[j].x), obs[j].y, w);
    });
    double err;
    if (ls.solve()) {
      err = obs[i].y - ls.predict(design(obs[i].x));
    } else {
      err = obs[i].y - mean;
      out.flagged.push_back(i);
    }
    out.score += err * err;
  }
  return out;
}

inline CvScore loocv_score(std::span<const Observation> obs, const KernelConfig& config) {
  detail::check_bandwidth(obs.size(), config);
  NeighborIndex index(obs, config.bandwidth_neighbors);
  return loocv_score(obs, index, config);
}

// Bandwidth search ---------------------------------------------------------

struct BandwidthSearchOptions {
  bool truncate = true;
  double bandwidth_multiplier = 1.0;
  /// Golden-section stops once the bracket spans at most this many integers;
  /// the remaining bracket is scanned exhaustively.
  std::size_t final_bracket = 8;
  /// Evenly spaced candidates scored before the golden-section stage; the
  /// search then continues between the neighbours of the best one. CV curves
  /// over adaptive bandwidths are step-shaped when distances tie, which
  /// traps a bare golden-section search. 0 disables the pre-scan.
  std::size_t coarse_points = 16;
};

struct BandwidthSearch {
  std::size_t best = 0;
  double score = 0.0;
  /// Every candidate evaluated, with its score.
  std::map<std::size_t, double> evaluated;
};

/// Two scores are treated as equal when they differ by less than this
/// fraction of the total sum of squares.
inline constexpr double score_tie_tolerance = 1e-10;

inline BandwidthSearch optimize_bandwidth(std::span<const Observation> obs, std::size_t min_nb,
                                          std::size_t max_nb,
                                          const BandwidthSearchOptions& options = {}) {
  const std::size_t n = obs.size();
  if (min_nb < 2 || max_nb + 2 > n || min_nb > max_nb) {
    throw ContractViolation("gwr", "bandwidth search range must satisfy 2 <= min <= max <= n-2 "
                                   "(n = " + std::to_string(n) + ", range " +
                                       std::to_string(min_nb) + ".." + std::to_string(max_nb) + ")");
  }
  NeighborIndex index(obs, max_nb);
  double mean = 0.0;
  for (const auto& o : obs) mean += o.y;
  mean /= static_cast<double>(n);
  double tss = 0.0;
  for (const auto& o : obs) tss += (o.y - mean) * (o.y - mean);
  const double tie = score_tie_tolerance * std::max(tss, std::numeric_limits<double>::min());

  BandwidthSearch result;
  auto score = [&](std::size_t k) {
    auto it = result.evaluated.find(k);
    if (it != result.evaluated.end()) return it->second;
    KernelConfig cfg{k, options.truncate, options.bandwidth_multiplier};
    auto cv = loocv_score(obs, index, cfg);
    double s = cv.flagged.size() == n || !std::isfinite(cv.score)
                   ? std::numeric_limits<double>::infinity()
                   : cv.score;
    result.evaluated.emplace(k, s);
    return s;
  };
  // a is no worse than b (ties resolve towards the smaller bandwidth).
  auto no_worse = [&](double a, double b) { return a <= b + tie; };

  constexpr double inv_phi = 0.6180339887498949;
  std::size_t lo = min_nb;
  std::size_t hi = max_nb;
  std::size_t width = std::max<std::size_t>(options.final_bracket, 3);
  if (options.coarse_points >= 2 && hi - lo > width) {
    std::size_t stride = (hi - lo + options.coarse_points - 2) / (options.coarse_points - 1);
    stride = std::max<std::size_t>(stride, 1);
    std::size_t best_k = lo;
    double best = score(lo);
    for (std::size_t k = lo + stride;; k += stride) {
      k = std::min(k, hi);
      double sk = score(k);
      if (sk < best - tie) {
        best = sk;
        best_k = k;
      }
      if (k == hi) break;
    }
    lo = best_k > lo + stride ? best_k - stride : lo;
    hi = std::min(best_k + stride, hi);
  }
  while (hi - lo > width) {
    double span = static_cast<double>(hi - lo);
    auto a = lo + static_cast<std::size_t>(std::lround((1.0 - inv_phi) * span));
    auto b = lo + static_cast<std::size_t>(std::lround(inv_phi * span));
    if (b <= a) b = a + 1;
    if (no_worse(score(a), score(b))) {
      hi = b;
    } else {
      lo = a;
    }
  }
  for (std::size_t k = lo; k <= hi; ++k) score(k);

  double best_score = std::numeric_limits<double>::infinity();
  for (const auto& [k, s] : result.evaluated) best_score = std::min(best_score, s);
  if (!std::isfinite(best_score)) {
    throw NumericError("gwr", "bandwidth search failed: every candidate is singular", {},
                       "check that the predictor varies between neighbouring regions");
  }
  for (const auto& [k, s] : result.evaluated) {
    if (s <= best_score + tie) {
      result.best = k;
      result.score = s;
      break;
    }
  }
  return result;
}

}  // namespace concentra::gwr
