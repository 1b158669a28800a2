#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "concentra/autocorr.hpp"
#include "concentra/error.hpp"
#include "concentra/gwr.hpp"

namespace concentra::classify {

enum class PatternSign { positive, negative, non_concentric_concave, non_concentric_convex };
enum class Strength { weak, medium, strong };
enum class Orientation { concave, convex };

inline const char* to_string(PatternSign s) {
  switch (s) {
    case PatternSign::positive: return "positive";
    case PatternSign::negative: return "negative";
    case PatternSign::non_concentric_concave: return "non-concentric-concave";
    case PatternSign::non_concentric_convex: return "non-concentric-convex";
  }
  return "";
}

inline const char* to_string(Strength s) {
  switch (s) {
    case Strength::weak: return "weak";
    case Strength::medium: return "medium";
    case Strength::strong: return "strong";
  }
  return "";
}

inline std::optional<PatternSign> parse_sign(std::string_view text) {
  for (auto s : {PatternSign::positive, PatternSign::negative, PatternSign::non_concentric_concave,
                 PatternSign::non_concentric_convex}) {
    if (text == to_string(s)) return s;
  }
  return std::nullopt;
}

inline std::optional<Strength> parse_strength(std::string_view text) {
  for (auto s : {Strength::weak, Strength::medium, Strength::strong}) {
    if (text == to_string(s)) return s;
  }
  return std::nullopt;
}

inline bool is_concentric(PatternSign s) {
  return s == PatternSign::positive || s == PatternSign::negative;
}

struct PatternVerdict {
  PatternSign sign = PatternSign::positive;
  Strength strength = Strength::weak;
  /// False whenever strength is weak: residual autocorrelation makes the
  /// local coefficients untrustworthy.
  bool sign_trusted = false;
  /// Share of local slopes carrying the majority sign, in [0.5, 1].
  double dominant_sign_fraction = 0.5;
  bool inverted_semantics = false;
  /// Concave/convex call fell back to the default after tied medians and means.
  bool degenerate_orientation = false;

  friend bool operator==(const PatternVerdict&, const PatternVerdict&) = default;
};

struct ClassifierThresholds {
  double alpha = 0.05;
  double strong_r2 = 0.50;
  double sign_consistency = 0.95;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("classifier alpha must lie in (0, 1)");
    if (!(strong_r2 > 0.0 && strong_r2 < 1.0)) {
      throw ConfigError("classifier strong_r2 must lie in (0, 1)");
    }
    if (!(sign_consistency > 0.5 && sign_consistency <= 1.0)) {
      throw ConfigError("classifier sign_consistency must lie in (0.5, 1]");
    }
  }
};

struct OrientationResult {
  Orientation orientation = Orientation::concave;
  bool degenerate = false;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Concave when the negative-slope regions sit at higher densities than the
/// positive-slope ones (the determinant peaks at intermediate density),
/// convex in the mirror case. Compares medians, then means.
inline OrientationResult concavity_orientation(std::span<const double> slopes,
                                               std::span<const double> densities) {
  if (slopes.size() != densities.size()) {
    throw ContractViolation("classify", "slopes and densities differ in length");
  }
  std::vector<double> pos;
  std::vector<double> neg;
  for (std::size_t k = 0; k < slopes.size(); ++k) {
    if (slopes[k] > 0.0) pos.push_back(densities[k]);
    else if (slopes[k] < 0.0) neg.push_back(densities[k]);
  }
  if (pos.empty() || neg.empty()) {
    throw ContractViolation("classify", "concavity orientation needs slopes of both signs");
  }
  double mp = detail::median_of(pos);
  double mn = detail::median_of(neg);
  if (mn > mp) return {Orientation::concave, false};
  if (mp > mn) return {Orientation::convex, false};
  double ap = detail::mean_of(pos);
  double an = detail::mean_of(neg);
  if (an > ap) return {Orientation::concave, false};
  if (ap > an) return {Orientation::convex, false};
  return {Orientation::concave, true};
}

inline constexpr std::size_t min_slopes = 10;

/// The three-step interpretation of a local fit:
///  1. residual autocorrelation (p < alpha) makes the effect weak and the sign untrusted;
///  2. a dominant slope sign shared by at least `sign_consistency` of the
///     locations makes it concentric, otherwise non-concentric concave/convex;
///  3. strong when R² reaches `strong_r2`, medium otherwise.
/// `inverted` flips positive/negative for responses that measure the
/// opposite of the determinant (diffusion delay vs penetration).
inline PatternVerdict classify_slopes(std::span<const double> slopes,
                                      std::span<const double> densities, double moran_p,
                                      double r_squared, const ClassifierThresholds& thresholds,
                                      bool inverted) {
  thresholds.validate();
  if (slopes.size() != densities.size()) {
    throw ContractViolation("classify", "slopes and densities differ in length");
  }
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (double s : slopes) {
    if (s > 0.0) ++pos;
    else if (s < 0.0) ++neg;
  }
  if (pos + neg < min_slopes) {
    throw Error(ErrorKind::data, "classify",
                "insufficient data: " + std::to_string(pos + neg) +
                    " nonzero local slopes (need " + std::to_string(min_slopes) + ")",
                {}, "the determinant needs more regions with data");
  }
  PatternVerdict v;
  v.inverted_semantics = inverted;
  v.dominant_sign_fraction =
      static_cast<double>(std::max(pos, neg)) / static_cast<double>(pos + neg);
  PatternSign dominant = pos >= neg ? PatternSign::positive : PatternSign::negative;
  auto flip = [&](PatternSign s) {
    if (!inverted) return s;
    return s == PatternSign::positive ? PatternSign::negative : PatternSign::positive;
  };

  if (moran_p < thresholds.alpha) {
    v.strength = Strength::weak;
    v.sign_trusted = false;
    v.sign = flip(dominant);
    return v;
  }
  if (v.dominant_sign_fraction >= thresholds.sign_consistency) {
    v.sign = flip(dominant);
  } else {
    std::vector<double> s;
    std::vector<double> d;
    for (std::size_t k = 0; k < slopes.size(); ++k) {
      if (slopes[k] != 0.0) {
        s.push_back(slopes[k]);
        d.push_back(densities[k]);
      }
    }
    auto o = concavity_orientation(s, d);
    v.sign = o.orientation == Orientation::concave ? PatternSign::non_concentric_concave
                                                   : PatternSign::non_concentric_convex;
    v.degenerate_orientation = o.degenerate;
  }
  v.strength = r_squared >= thresholds.strong_r2 ? Strength::strong : Strength::medium;
  v.sign_trusted = true;
  return v;
}

/// `densities` is aligned with `fit.locals`; locations without a solved
/// local model are skipped.
inline PatternVerdict classify_pattern(const gwr::GwrFit& fit, const autocorr::MoranResult& moran,
                                       std::span<const double> densities,
                                       const ClassifierThresholds& thresholds, bool inverted) {
  if (densities.size() != fit.locals.size()) {
    throw ContractViolation("classify", "densities must align with the fitted locations");
  }
  std::vector<double> slopes;
  std::vector<double> dens;
  for (std::size_t k = 0; k < fit.locals.size(); ++k) {
    if (!fit.locals[k].ok) continue;
    slopes.push_back(fit.locals[k].c1);
    dens.push_back(densities[k]);
  }
  return classify_slopes(slopes, dens, moran.p_value, fit.r_squared, thresholds, inverted);
}

// Geometric interval classes -----------------------------------------------

struct ClassBreaks {
  /// class_count + 1 strictly increasing values; front == min, back == max.
  std::vector<double> breaks;
  /// Ratio between consecutive class widths (1 for equal intervals).
  double ratio = 1.0;
  std::vector<std::size_t> counts;

  std::size_t class_of(double v) const {
    auto it = std::upper_bound(breaks.begin() + 1, breaks.end() - 1, v);
    return static_cast<std::size_t>(it - (breaks.begin() + 1));
  }
};

namespace detail {

inline ClassBreaks make_breaks(std::span<const double> sorted, std::size_t k, double ratio) {
  ClassBreaks c;
  c.ratio = ratio;
  double lo = sorted.front();
  double hi = sorted.back();
  double range = hi - lo;
  c.breaks.resize(k + 1);
  c.breaks[0] = lo;
  double w = ratio == 1.0 ? range / static_cast<double>(k)
                          : range * (ratio - 1.0) / (std::pow(ratio, static_cast<double>(k)) - 1.0);
  double acc = lo;
  for (std::size_t j = 1; j < k; ++j) {
    acc += w * std::pow(ratio, static_cast<double>(j - 1));
    c.breaks[j] = acc;
  }
  c.breaks[k] = hi;
  c.counts.assign(k, 0);
  for (double v : sorted) c.counts[c.class_of(v)]++;
  return c;
}

inline double count_variance(const std::vector<std::size_t>& counts) {
  double mean = 0.0;
  for (auto c : counts) mean += static_cast<double>(c);
  mean /= static_cast<double>(counts.size());
  double var = 0.0;
  for (auto c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  return var / static_cast<double>(counts.size());
}

inline bool strictly_increasing(const std::vector<double>& b) {
  for (std::size_t k = 1; k < b.size(); ++k) {
    if (!(b[k] > b[k - 1])) return false;
  }
  return true;
}

}  // namespace detail

/// Class breaks whose widths form a geometric progression w, w·r, …,
/// w·r^(k−1) spanning [min, max]. The ratio r ∈ [1.01, 100] minimizes the
/// variance of the per-class counts; equal intervals win ties.
inline ClassBreaks geometric_intervals(std::span<const double> values, std::size_t class_count = 7) {
  if (class_count < 2) throw ContractViolation("classify", "class_count must be at least 2");
  std::vector<double> sorted;
  for (double v : values) {
    if (std::isfinite(v)) sorted.push_back(v);
  }
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty() || !(sorted.back() > sorted.front())) {
    throw Error(ErrorKind::data, "classify", "degenerate classification: values are constant");
  }
  auto best = detail::make_breaks(sorted, class_count, 1.0);
  double best_var = detail::count_variance(best.counts);

  constexpr double r_lo = 1.01;
  constexpr double r_hi = 100.0;
  constexpr int grid = 400;
  auto at = [&](int g) {
    return r_lo * std::pow(r_hi / r_lo, static_cast<double>(g) / static_cast<double>(grid));
  };
  std::optional<ClassBreaks> geo_best;
  double geo_var = std::numeric_limits<double>::infinity();
  int geo_g = 0;
  auto consider = [&](double r) {
    auto c = detail::make_breaks(sorted, class_count, r);
    if (!detail::strictly_increasing(c.breaks)) return;
    double v = detail::count_variance(c.counts);
    if (v < geo_var) {
      geo_var = v;
      geo_best = std::move(c);
    }
  };
  for (int g = 0; g <= grid; ++g) {
    double before = geo_var;
    consider(at(g));
    if (geo_var < before) geo_g = g;
  }
  // Bisection refinement inside the grid cell pair around the best ratio.
  double a = at(std::max(geo_g - 1, 0));
  double b = at(std::min(geo_g + 1, grid));
  for (int it = 0; it < 40 && b - a > 1e-9; ++it) {
    double m1 = a + (b - a) / 3.0;
    double m2 = b - (b - a) / 3.0;
    auto c1 = detail::make_breaks(sorted, class_count, m1);
    auto c2 = detail::make_breaks(sorted, class_count, m2);
    double v1 = detail::count_variance(c1.counts);
    double v2 = detail::count_variance(c2.counts);
    consider(m1);
    consider(m2);
    if (v1 <= v2) b = m2;
    else a = m1;
  }
  if (geo_best && geo_var < best_var) return *geo_best;
  return best;
}

// Reference enumeration --------------------------------------------------------

/// Literature sign of each diffusion determinant and, where data exist, the
/// proxy that measures it.
struct ReferencePattern {
  std::string_view determinant;
  std::string_view literature_pattern;
  std::string_view proxy;  ///< empty: no data, reported without a strength
  bool inverted = false;
};

inline constexpr std::array<ReferencePattern, 10> reference_patterns{{
    {"Access network cost per user", "negative", "", false},
    {"Spectrum usage", "positive", "", false},
    {"Competition", "positive", "MBP_number", false},
    {"State subsidy", "negative", "", false},
    {"Service quality", "positive", "med_speed_mobile", false},
    {"Education", "positive", "pct_bachelors", false},
    {"Income", "non-concentric-concave", "med_hh_income", false},
    {"Private user subsidy", "positive / negative / non-concentric", "", false},
    {"Community commitment", "negative", "pct_dw_ownership", false},
    {"Service penetration", "positive", "fourg_diffusion_delay", true},
}};

}  // namespace concentra::classify
