#pragma once

#include <algorithm>
#include <functional>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "concentra/error.hpp"
#include "concentra/geo.hpp"
#include "concentra/io.hpp"
#include "concentra/rng.hpp"

namespace concentra::autocorr {

enum class WeightsScheme { knn, queen, rook, inverse_distance };

inline const char* to_string(WeightsScheme s) {
  switch (s) {
    case WeightsScheme::knn: return "knn";
    case WeightsScheme::queen: return "queen";
    case WeightsScheme::rook: return "rook";
    case WeightsScheme::inverse_distance: return "idist";
  }
  return "";
}

inline WeightsScheme parse_scheme(std::string_view text) {
  if (text == "knn") return WeightsScheme::knn;
  if (text == "queen" || text == "queen-contiguity") return WeightsScheme::queen;
  if (text == "rook" || text == "rook-contiguity") return WeightsScheme::rook;
  if (text == "idist" || text == "inverse-distance") return WeightsScheme::inverse_distance;
  throw ConfigError("unknown weights scheme '" + std::string(text) + "'",
                    "use knn, queen, rook or idist");
}

struct Triplet {
  std::size_t i = 0;
  std::size_t j = 0;
  double w = 0.0;
};

/// Sparse nonnegative spatial weights in compressed-row form, ω_ii = 0.
class SpatialWeights {
 public:
  SpatialWeights() = default;

  static SpatialWeights from_triplets(std::size_t n, std::vector<Triplet> triplets,
                                      WeightsScheme scheme = WeightsScheme::knn) {
    SpatialWeights sw;
    sw.n_ = n;
    sw.scheme_ = scheme;
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });
    sw.row_ptr_.assign(n + 1, 0);
    for (const auto& t : triplets) {
      if (t.i >= n || t.j >= n) throw ContractViolation("autocorr", "weight index out of range");
      if (t.i == t.j) throw ContractViolation("autocorr", "self weight must be zero");
      if (!(t.w >= 0.0) || !std::isfinite(t.w)) {
        throw ContractViolation("autocorr", "weights must be finite and nonnegative");
      }
      if (t.w == 0.0) continue;
      if (sw.row_ptr_[t.i + 1] > 0 && sw.cols_.back() == t.j) {
        throw ContractViolation("autocorr", "duplicate weight entry");
      }
      sw.cols_.push_back(t.j);
      sw.values_.push_back(t.w);
      sw.row_ptr_[t.i + 1]++;
    }
    for (std::size_t i = 0; i < n; ++i) sw.row_ptr_[i + 1] += sw.row_ptr_[i];
    return sw;
  }

  std::size_t size() const { return n_; }
  std::size_t nonzeros() const { return cols_.size(); }
  WeightsScheme scheme() const { return scheme_; }
  bool row_standardized() const { return row_standardized_; }

  std::span<const std::size_t> row_cols(std::size_t i) const {
    return {cols_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }
  std::span<const double> row_values(std::size_t i) const {
    return {values_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }

  double weight(std::size_t i, std::size_t j) const {
    auto c = row_cols(i);
    auto it = std::lower_bound(c.begin(), c.end(), j);
    if (it == c.end() || *it != j) return 0.0;
    return values_[row_ptr_[i] + static_cast<std::size_t>(it - c.begin())];
  }

  double row_sum(std::size_t i) const {
    auto v = row_values(i);
    return std::accumulate(v.begin(), v.end(), 0.0);
  }

  double total() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

  /// Rows without any neighbour.
  std::vector<std::size_t> isolated() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_; ++i) {
      if (row_ptr_[i + 1] == row_ptr_[i]) out.push_back(i);
    }
    return out;
  }

  /// Scales every non-empty row to sum to one.
  void row_standardize() {
    for (std::size_t i = 0; i < n_; ++i) {
      double s = row_sum(i);
      if (!(s > 0.0)) continue;
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) values_[k] /= s;
    }
    row_standardized_ = true;
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(cols_.size());
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        out.push_back({i, cols_[k], values_[k]});
      }
    }
    return out;
  }

 private:
  std::size_t n_ = 0;
  WeightsScheme scheme_ = WeightsScheme::knn;
  bool row_standardized_ = false;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> cols_;
  std::vector<double> values_;
};

struct WeightsOptions {
  WeightsScheme scheme = WeightsScheme::queen;
  std::size_t k = 8;
  /// Inverse-distance cutoff in meters; non-positive means unlimited.
  double cutoff = 0.0;
  bool row_standardize = true;
};

namespace detail {

/// Some vertex of `a` lies on the boundary of `b`.
inline bool touches(const geo::Region& a, const geo::Region& b) {
  bool hit = false;
  a.for_each_ring([&](const geo::Ring& ring) {
    for (std::size_t k = 0; !hit && k + 1 < ring.size(); ++k) {
      const auto& v = ring[k];
      if (!b.bbox.contains(v.x, v.y, geo::boundary_tolerance)) continue;
      hit = geo::on_boundary(v.x, v.y, b);
    }
  });
  return hit;
}

/// Some edge of `a` overlaps the boundary of `b` over a positive length.
inline bool shares_edge(const geo::Region& a, const geo::Region& b) {
  bool hit = false;
  a.for_each_ring([&](const geo::Ring& ring) {
    for (std::size_t k = 0; !hit && k + 1 < ring.size(); ++k) {
      const auto& p = ring[k];
      const auto& q = ring[k + 1];
      if (p == q) continue;
      double mx = 0.5 * (p.x + q.x);
      double my = 0.5 * (p.y + q.y);
      hit = geo::on_boundary(mx, my, b) && geo::on_boundary(p.x, p.y, b) &&
            geo::on_boundary(q.x, q.y, b);
    }
  });
  return hit;
}

inline std::vector<Triplet> contiguity(std::span<const geo::Region> regions, bool rook) {
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return regions[a].bbox.min_x < regions[b].bbox.min_x;
  });
  std::vector<Triplet> out;
  const double tol = geo::boundary_tolerance;
  for (std::size_t p = 0; p < order.size(); ++p) {
    const auto& a = regions[order[p]];
    for (std::size_t q = p + 1; q < order.size(); ++q) {
      const auto& b = regions[order[q]];
      if (b.bbox.min_x > a.bbox.max_x + tol) break;
      if (!a.bbox.overlaps(b.bbox, tol)) continue;
      bool linked = rook ? (shares_edge(a, b) || shares_edge(b, a)) : (touches(a, b) || touches(b, a));
      if (linked) {
        out.push_back({order[p], order[q], 1.0});
        out.push_back({order[q], order[p], 1.0});
      }
    }
  }
  return out;
}

}  // namespace detail

/// Weights over region centroids (knn, inverse-distance) or polygons
/// (queen, rook). knn ties resolve towards the smaller region id.
inline SpatialWeights build_weights(std::span<const geo::Region> regions,
                                    const WeightsOptions& options = {}) {
  const std::size_t n = regions.size();
  if (n < 3) throw ContractViolation("autocorr", "spatial weights need at least 3 regions");
  std::vector<Triplet> trip;
  switch (options.scheme) {
    case WeightsScheme::queen:
    case WeightsScheme::rook:
      trip = detail::contiguity(regions, options.scheme == WeightsScheme::rook);
      break;
    case WeightsScheme::knn: {
      if (options.k < 1 || options.k > n - 1) {
        throw ContractViolation("autocorr", "knn requires 1 <= k <= n-1");
      }
      std::vector<std::pair<double, std::size_t>> row;
      for (std::size_t i = 0; i < n; ++i) {
        row.clear();
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) row.emplace_back(geo::distance(regions[i].centroid, regions[j].centroid), j);
        }
        auto closer = [&](const auto& a, const auto& b) {
          if (a.first != b.first) return a.first < b.first;
          return regions[a.second].id < regions[b.second].id;
        };
        std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(options.k),
                          row.end(), closer);
        for (std::size_t k = 0; k < options.k; ++k) trip.push_back({i, row[k].second, 1.0});
      }
      break;
    }
    case WeightsScheme::inverse_distance: {
      double cutoff = options.cutoff > 0.0 ? options.cutoff : std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          double d = geo::distance(regions[i].centroid, regions[j].centroid);
          if (d > 0.0 && d <= cutoff) trip.push_back({i, j, 1.0 / d});
        }
      }
      break;
    }
  }
  auto sw = SpatialWeights::from_triplets(n, std::move(trip), options.scheme);
  if (options.row_standardize) sw.row_standardize();
  return sw;
}

// Moran's I ------------------------------------------------------------------

namespace detail {

/// Indices taking part in the statistic: those with an outgoing or incoming
/// weight.
inline std::vector<std::size_t> connected(const SpatialWeights& w) {
  std::vector<char> linked(w.size(), 0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto cols = w.row_cols(i);
    if (!cols.empty()) linked[i] = 1;
    for (auto j : cols) linked[j] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (linked[i]) out.push_back(i);
  }
  return out;
}

struct Centered {
  std::vector<double> z;  // full length; zero for dropped entries
  double sum_sq = 0.0;
  double sum_4 = 0.0;
};

inline Centered center(std::span<const double> values, std::span<const std::size_t> active) {
  Centered c;
  c.z.assign(values.size(), 0.0);
  double mean = 0.0;
  for (auto i : active) mean += values[i];
  mean /= static_cast<double>(active.size());
  for (auto i : active) {
    double d = values[i] - mean;
    c.z[i] = d;
    c.sum_sq += d * d;
    c.sum_4 += d * d * d * d;
  }
  return c;
}

inline double cross_product(const SpatialWeights& w, std::span<const double> z) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto cols = w.row_cols(i);
    if (cols.empty() || z[i] == 0.0) continue;
    auto vals = w.row_values(i);
    double s = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) s += vals[k] * z[cols[k]];
    acc += z[i] * s;
  }
  return acc;
}

inline void check_inputs(std::span<const double> values, const SpatialWeights& w) {
  if (values.size() != w.size()) {
    throw ContractViolation("autocorr", "values and weights differ in size");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractViolation("autocorr", "values must be finite");
  }
  if (!(w.total() > 0.0)) throw ContractViolation("autocorr", "weights sum to zero");
}

}  // namespace detail

/// I = (n / S0) · Σ_ij ω_ij z_i z_j / Σ_i z_i², with isolated regions dropped.
inline double morans_i(std::span<const double> values, const SpatialWeights& weights) {
  detail::check_inputs(values, weights);
  auto active = detail::connected(weights);
  auto c = detail::center(values, active);
  if (!(c.sum_sq > 0.0)) {
    throw NumericError("autocorr", "Moran's I undefined: values have zero variance");
  }
  double n = static_cast<double>(active.size());
  return n / weights.total() * detail::cross_product(weights, c.z) / c.sum_sq;
}

struct MoranResult {
  double i_statistic = 0.0;
  double expected_i = 0.0;
  /// Two-sided permutation p-value with the +1 correction.
  double p_value = 1.0;
  /// Two-sided p from the normal approximation under randomization.
  double p_normal = 1.0;
  double z_normal = 0.0;
  std::size_t n_permutations = 0;
  std::uint64_t seed = 0;
  /// Regions in the statistic (isolated ones excluded).
  std::size_t n_used = 0;
  std::vector<std::size_t> dropped;
  /// Null the p-value was drawn from: "permutation" or "projected".
  std::string null_model = "permutation";
  /// Mean of the simulated null statistics; the two-sided test is centered
  /// here (equals expected_i up to Monte-Carlo error for plain permutations).
  double null_mean = 0.0;
  /// Standard deviation of the simulated null statistics.
  double null_sd = 0.0;
};

namespace detail {

using Projection = std::function<std::vector<double>(std::span<const double>)>;

inline MoranResult moran_test(std::span<const double> values, const SpatialWeights& weights,
                              std::size_t n_perm, std::uint64_t seed, const Projection* project) {
  check_inputs(values, weights);
  auto active = connected(weights);
  if (active.size() < 4) {
    throw ContractViolation("autocorr", "Moran test needs at least 4 connected regions");
  }
  auto c = center(values, active);
  if (!(c.sum_sq > 0.0)) {
    throw NumericError("autocorr", "Moran's I undefined: values have zero variance");
  }
  const double n = static_cast<double>(active.size());
  const double s0 = weights.total();
  MoranResult r;
  r.seed = seed;
  r.n_permutations = n_perm;
  r.n_used = active.size();
  if (project) r.null_model = "projected";
  {
    std::vector<char> in(weights.size(), 0);
    for (auto i : active) in[i] = 1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!in[i]) r.dropped.push_back(i);
    }
  }
  r.expected_i = -1.0 / (n - 1.0);
  r.i_statistic = n / s0 * cross_product(weights, c.z) / c.sum_sq;

  // Normal approximation under the randomization hypothesis.
  // S1 = ½ Σ_ij (ω_ij + ω_ji)², visited once per stored entry.
  double s1 = 0.0;
  std::vector<double> row(weights.size(), 0.0);
  std::vector<double> col(weights.size(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto cols = weights.row_cols(i);
    auto vals = weights.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      double back = weights.weight(cols[k], i);
      double sum = vals[k] + back;
      s1 += sum * sum * (back > 0.0 ? 0.5 : 1.0);
      row[i] += vals[k];
      col[cols[k]] += vals[k];
    }
  }
  double s2 = 0.0;
  for (auto i : active) s2 += (row[i] + col[i]) * (row[i] + col[i]);
  double b2 = n * c.sum_4 / (c.sum_sq * c.sum_sq);
  double var = (n * ((n * n - 3.0 * n + 3.0) * s1 - n * s2 + 3.0 * s0 * s0) -
                b2 * ((n * n - n) * s1 - 2.0 * n * s2 + 6.0 * s0 * s0)) /
                   ((n - 1.0) * (n - 2.0) * (n - 3.0) * s0 * s0) -
               r.expected_i * r.expected_i;
  if (var > 0.0) {
    r.z_normal = (r.i_statistic - r.expected_i) / std::sqrt(var);
    r.p_normal = std::erfc(std::abs(r.z_normal) / std::numbers::sqrt2);
  }

  std::vector<double> base(active.size());
  for (std::size_t k = 0; k < active.size(); ++k) base[k] = c.z[active[k]];
  std::vector<double> z(weights.size(), 0.0);
  std::vector<double> perm(base.size());
  std::vector<double> stats;
  stats.reserve(n_perm);
  for (std::size_t p = 0; p < n_perm; ++p) {
    perm = base;
    auto rng = make_stream(seed, "moran.permutation", p);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < active.size(); ++k) z[active[k]] = perm[k];
    if (!project) {
      stats.push_back(n / s0 * cross_product(weights, z) / c.sum_sq);
      continue;
    }
    auto projected = (*project)(z);
    auto cp = center(projected, active);
    stats.push_back(cp.sum_sq > 0.0 ? n / s0 * cross_product(weights, cp.z) / cp.sum_sq : 0.0);
  }
  if (!stats.empty()) {
    double sum = 0.0;
    for (double v : stats) sum += v;
    r.null_mean = sum / static_cast<double>(stats.size());
    double ss = 0.0;
    for (double v : stats) ss += (v - r.null_mean) * (v - r.null_mean);
    if (stats.size() > 1) r.null_sd = std::sqrt(ss / static_cast<double>(stats.size() - 1));
  }
  const double mid = project ? r.null_mean : r.expected_i;
  const double observed = std::abs(r.i_statistic - mid);
  const double tol = 1e-9 * observed + 1e-14;
  std::size_t extreme = 0;
  for (double ip : stats) {
    if (std::abs(ip - mid) >= observed - tol) ++extreme;
  }
  r.p_value = static_cast<double>(extreme + 1) / static_cast<double>(n_perm + 1);
  return r;
}

}  // namespace detail

/// Permutation test of Moran's I. Permutation p uses its own RNG stream
/// derived from (seed, p), so results do not depend on evaluation order.
inline MoranResult morans_p(std::span<const double> values, const SpatialWeights& weights,
                            std::size_t n_perm = 999, std::uint64_t seed = 0) {
  return detail::moran_test(values, weights, n_perm, seed, nullptr);
}

/// Moran test of regression residuals. Each permuted residual vector is
/// passed through `project` (the fitted model's residual maker I − S) before
/// I is computed, so the null carries the correlation the fit itself puts
/// into residuals. The test is two-sided around the null mean.
inline MoranResult morans_p_projected(std::span<const double> residuals,
                                      const SpatialWeights& weights,
                                      const detail::Projection& project,
                                      std::size_t n_perm = 999, std::uint64_t seed = 0) {
  return detail::moran_test(residuals, weights, n_perm, seed, &project);
}

// Triplet CSV -----------------------------------------------------------------

inline std::string write_triplets(const SpatialWeights& w) {
  io::CsvWriter out({"i", "j", "w"});
  for (const auto& t : w.triplets()) {
    out.row({std::to_string(t.i), std::to_string(t.j), io::format_double(t.w)});
  }
  return out.str();
}

/// Reads (i, j, w) rows; `n` defaults to one past the largest index.
inline SpatialWeights read_triplets(std::string_view text, std::size_t n = 0,
                                    WeightsScheme scheme = WeightsScheme::knn) {
  auto csv = io::parse_csv(text, "autocorr");
  auto ci = csv.require_column("i", "autocorr");
  auto cj = csv.require_column("j", "autocorr");
  auto cw = csv.require_column("w", "autocorr");
  std::vector<Triplet> trip;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    auto i = io::parse_double(csv.rows[r][ci]);
    auto j = io::parse_double(csv.rows[r][cj]);
    auto w = io::parse_double(csv.rows[r][cw]);
    if (!i || !j || !w || *i < 0 || *j < 0 || *i != std::floor(*i) || *j != std::floor(*j)) {
      throw ParseError("autocorr", "line " + std::to_string(csv.lines[r]) + ": bad triplet");
    }
    trip.push_back({static_cast<std::size_t>(*i), static_cast<std::size_t>(*j), *w});
    n = std::max(n, static_cast<std::size_t>(std::max(*i, *j)) + 1);
  }
  return SpatialWeights::from_triplets(n, std::move(trip), scheme);
}

}  // namespace concentra::autocorr
