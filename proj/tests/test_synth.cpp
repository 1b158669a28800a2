#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "concentra/autocorr.hpp"
#include "concentra/ingest.hpp"
#include "concentra/synth.hpp"

using namespace concentra;
using namespace concentra::synth;

namespace {

std::vector<double> by_density_order(const std::vector<geo::Region>& regions,
                                     const std::vector<double>& v) {
  std::vector<std::size_t> idx(regions.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
    return regions[a].pop_density < regions[b].pop_density;
  });
  std::vector<double> out;
  for (auto k : idx) out.push_back(v[k]);
  return out;
}

CityConfig small_grid() {
  CityConfig c;
  c.rings = 6;
  c.region_count = 120;
  c.alpha = 1.0;
  c.r0 = 2000.0;
  return c;
}

}  // namespace

TEST(City, GridKeepsNearestCells) {
  auto c = small_grid();
  auto regions = generate_city(c);
  ASSERT_EQ(regions.size(), 120u);
  std::set<std::string> ids;
  double max_r = 0.0;
  for (const auto& r : regions) {
    ids.insert(r.id);
    EXPECT_DOUBLE_EQ(r.area_km2, 1.0);
    EXPECT_NEAR(r.pop_density, density_at(geo::distance(r.centroid, c.center), c.d0, c.alpha, c.r0), 1e-9);
    max_r = std::max(max_r, geo::distance(r.centroid, c.center));
  }
  EXPECT_EQ(ids.size(), 120u);
  // Every dropped cell of the (2 rings + 1)^2 square lies at least as far out as the kept ones.
  EXPECT_LE(max_r, 6.0 * 1000.0 * std::sqrt(2.0));
  auto w = autocorr::build_weights(regions);
  EXPECT_TRUE(w.isolated().empty());
}

TEST(City, SectorsTileAnnuli) {
  CityConfig c;
  c.layout = Layout::sectors;
  c.rings = 4;
  c.regions_per_ring = 10;
  auto regions = generate_city(c);
  ASSERT_EQ(regions.size(), 40u);
  double total = 0.0;
  for (const auto& r : regions) total += r.planar_area;
  double r_in = c.resolved_inner_radius();
  double r_out = r_in + 4.0 * c.region_size;
  // polygonal annulus: slightly less than the circular one
  double circle = std::numbers::pi * (r_out * r_out - r_in * r_in);
  EXPECT_LT(total, circle);
  EXPECT_GT(total, 0.97 * circle);
  auto w = autocorr::build_weights(regions);
  EXPECT_TRUE(w.isolated().empty());
}

TEST(City, Validation) {
  CityConfig c;
  c.rings = 0;
  EXPECT_THROW(generate_city(c), ConfigError);
  c = small_grid();
  c.region_count = 1000;
  EXPECT_THROW(generate_city(c), ConfigError);
  c = small_grid();
  c.alpha = -1.0;
  EXPECT_THROW(generate_city(c), ConfigError);
}

TEST(City, SecondCenterRaisesDensity) {
  auto c = small_grid();
  auto base = generate_city(c);
  c.extra_centers.push_back({geo::Point{4000.0, 0.0}, 3000.0});
  auto two = generate_city(c);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_GE(two[i].pop_density, base[i].pop_density);
}

TEST(Plant, NoiselessShapes) {
  auto regions = generate_city(small_grid());
  PlantSpec s;
  s.noise_sd = 0.0;
  s.pattern = Pattern::positive;
  auto pos = by_density_order(regions, plant_determinant(regions, s));
  EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
  s.pattern = Pattern::negative;
  auto neg = by_density_order(regions, plant_determinant(regions, s));
  EXPECT_TRUE(std::is_sorted(neg.rbegin(), neg.rend()));
  s.pattern = Pattern::concave;
  auto cc = by_density_order(regions, plant_determinant(regions, s));
  auto peak = std::max_element(cc.begin(), cc.end()) - cc.begin();
  EXPECT_GT(peak, 5);
  EXPECT_LT(peak, static_cast<long>(cc.size()) - 5);
  s.pattern = Pattern::convex;
  auto cv = by_density_order(regions, plant_determinant(regions, s));
  auto low = std::min_element(cv.begin(), cv.end()) - cv.begin();
  EXPECT_GT(low, 5);
  EXPECT_LT(low, static_cast<long>(cv.size()) - 5);
}

TEST(Plant, StandardizedSignalAndSeededNoise) {
  auto regions = generate_city(small_grid());
  PlantSpec s;
  s.noise_sd = 0.0;
  s.offset = 10.0;
  s.scale = 2.0;
  auto v = plant_determinant(regions, s);
  double mean = 0.0, sd = 0.0;
  for (double x : v) mean += x / static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean) / static_cast<double>(v.size());
  EXPECT_NEAR(mean, 10.0, 1e-9);
  EXPECT_NEAR(std::sqrt(sd), 2.0, 1e-9);

  s.noise_sd = 0.1;
  s.seed = 5;
  auto a = plant_determinant(regions, s);
  auto b = plant_determinant(regions, s);
  EXPECT_EQ(a, b);
  s.seed = 6;
  EXPECT_NE(a, plant_determinant(regions, s));
  s.clamp = std::pair{9.0, 11.0};
  for (double x : plant_determinant(regions, s)) {
    EXPECT_GE(x, 9.0);
    EXPECT_LE(x, 11.0);
  }
  EXPECT_EQ(parse_pattern("noise-only"), Pattern::noise_only);
  EXPECT_STREQ(to_string(Pattern::noise_only), "noise-only");
  EXPECT_THROW(parse_pattern("zigzag"), ConfigError);
}

TEST(Measurements, IngestRecoversPlantedProxies) {
  auto regions = generate_city(small_grid());
  MeasurementPlan plan;
  plan.provider_jitter = 0.75;
  plan.delay_jitter_days = 30.0;
  plan.spurious_lead_days = 20.0;
  plan.speed_kbps.assign(regions.size(), 0.0);
  for (std::size_t i = 0; i < regions.size(); ++i) plan.speed_kbps[i] = 1000.0 + 10.0 * static_cast<double>(i);
  auto planted = generate_measurements(regions, plan, 77);
  ingest::IngestConfig cfg;
  auto table = ingest::build_proxy_table(regions, planted.records, "id\n", cfg, 1);
  std::set<std::size_t> pools;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& row = table.rows[i];
    ASSERT_EQ(*row[ingest::Proxy::MBP_number], static_cast<double>(planted.provider_pool[i])) << i;
    ASSERT_EQ(*row[ingest::Proxy::fourg_diffusion_delay], static_cast<double>(planted.delay_days[i])) << i;
    ASSERT_EQ(*row[ingest::Proxy::med_speed_mobile], plan.speed_kbps[i]) << i;
    pools.insert(planted.provider_pool[i]);
  }
  EXPECT_EQ(*std::min_element(planted.delay_days.begin(), planted.delay_days.end()), 0);
  EXPECT_GE(pools.size(), 4u);
}

TEST(Measurements, DelayShrinksWithDensityWithoutJitter) {
  auto regions = generate_city(small_grid());
  MeasurementPlan plan;
  auto planted = generate_measurements(regions, plan, 1);
  std::vector<double> d(planted.delay_days.begin(), planted.delay_days.end());
  auto ordered = by_density_order(regions, d);
  EXPECT_TRUE(std::is_sorted(ordered.rbegin(), ordered.rend()));
  std::vector<double> p(planted.provider_pool.begin(), planted.provider_pool.end());
  auto pools = by_density_order(regions, p);
  EXPECT_TRUE(std::is_sorted(pools.begin(), pools.end()));
  EXPECT_EQ(pools.front(), 1.0);
  EXPECT_EQ(pools.back(), 6.0);
}

TEST(Bundle, WritesAConsistentDirectory) {
  BundleConfig cfg;
  cfg.city = small_grid();
  auto b = make_bundle(cfg, 3);
  EXPECT_EQ(b.regions.size(), 120u);
  EXPECT_EQ(b.planted.size(), 6u);
  auto dir = (std::filesystem::temp_directory_path() / "concentra_test_bundle").string();
  std::filesystem::remove_all(dir);
  write_bundle(b, dir, 3);
  for (const char* f : {"regions.geojson", "measurements.csv", "socio.csv", "planted.csv", "concentra.toml"}) {
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / f)) << f;
  }
  auto again = make_bundle(cfg, 3);
  EXPECT_EQ(ingest::write_measurements(again.measurements), ingest::write_measurements(b.measurements));
  EXPECT_EQ(again.socio_csv, b.socio_csv);
  std::filesystem::remove_all(dir);
}
