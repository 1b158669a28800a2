#pragma once

// Six reference verdict inputs: Moran p-values and R² values per proxy,
// with local slope profiles given by their sign shares and by where the
// negative slopes sit in density.

#include <string>
#include <vector>

#include "concentra/classify.hpp"

namespace reference {

struct Tuple {
  std::string proxy;
  double moran_p;
  double r_squared;
  std::vector<double> slopes;
  std::vector<double> densities;
  bool inverted;
  std::string expected_sign;
  std::string expected_strength;
};

/// `negative_share` of the locations get negative slopes; with
/// `negatives_dense` they are the densest ones, otherwise spread evenly.
inline void profile(Tuple& t, std::size_t n, double negative_share, bool negatives_dense) {
  auto neg = static_cast<std::size_t>(negative_share * static_cast<double>(n) + 0.5);
  for (std::size_t k = 0; k < n; ++k) {
    double d = 10.0 + 5.0 * static_cast<double>(k);
    bool negative = negatives_dense ? k >= n - neg : (neg > 0 && k % (n / neg) == 0 && k / (n / neg) < neg);
    t.densities.push_back(d);
    t.slopes.push_back(negative ? -0.5 - 0.001 * static_cast<double>(k) : 0.3 + 0.001 * static_cast<double>(k));
  }
}

inline std::vector<Tuple> tuples() {
  std::vector<Tuple> out;
  auto add = [&](std::string proxy, double p, double r2, double neg_share, bool dense, bool inv,
                 std::string sign, std::string strength) {
    Tuple t{std::move(proxy), p, r2, {}, {}, inv, std::move(sign), std::move(strength)};
    profile(t, 200, neg_share, dense);
    out.push_back(std::move(t));
  };
  add("MBP_number", 0.02, 0.36, 0.03, false, false, "positive", "weak");
  add("pct_dw_ownership", 0.13, 0.50, 0.97, true, false, "negative", "strong");
  add("pct_bachelors", 0.01, 0.45, 0.02, false, false, "positive", "weak");
  add("med_hh_income", 0.68, 0.38, 0.30, true, false, "non-concentric-concave", "medium");
  add("fourg_diffusion_delay", 0.11, 0.52, 0.97, true, true, "positive", "strong");
  add("med_speed_mobile", 0.86, 0.31, 0.40, true, false, "non-concentric-concave", "medium");
  return out;
}

}  // namespace reference
