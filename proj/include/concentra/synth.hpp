#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "concentra/error.hpp"
#include "concentra/geo.hpp"
#include "concentra/ingest.hpp"
#include "concentra/io.hpp"
#include "concentra/rng.hpp"

namespace concentra::synth {

/// Square cells of side `region_size` on a grid centred on the city center,
/// taken in order of distance; or annular sectors.
enum class Layout { grid, sectors };

struct DensityCenter {
  geo::Point center;
  double d0 = 1000.0;
};

/// Concentric city. The grid layout tiles square cells of side `region_size`
/// around the center; the sectors layout builds `rings` annuli of
/// `regions_per_ring` tiles, every annulus `region_size` meters wide, with arc
/// vertices shared exactly between neighbouring tiles.
struct CityConfig {
  geo::Point center{0.0, 0.0, geo::CrsMode::planar};
  Layout layout = Layout::grid;
  /// Grid: cells within Chebyshev distance `rings` of the center cell.
  /// Sectors: number of annuli.
  std::size_t rings = 10;
  /// Sectors only.
  std::size_t regions_per_ring = 24;
  /// Grid only: keep the `region_count` cells nearest the center.
  std::optional<std::size_t> region_count;
  double d0 = 5000.0;     ///< peak density, inhab/km²
  double alpha = 1.5;     ///< decay exponent
  double r0 = 1000.0;     ///< softening radius, m
  double region_size = 1000.0;
  /// Radius of the innermost annulus; default makes inner tiles square.
  std::optional<double> inner_radius;
  /// Straight segments per sector arc.
  std::size_t arc_segments = 3;
  /// Further centers whose density fields add to the main one.
  std::vector<DensityCenter> extra_centers;
  std::uint64_t seed = 0;

  double resolved_inner_radius() const {
    return inner_radius.value_or(region_size * static_cast<double>(regions_per_ring) /
                                 (2.0 * std::numbers::pi));
  }

  void validate() const {
    if (center.crs != geo::CrsMode::planar) {
      throw ConfigError("synthetic cities are generated in planar meters");
    }
    if (rings < 1) throw ConfigError("city needs at least one ring");
    if (layout == Layout::sectors && regions_per_ring < 3) {
      throw ConfigError("regions_per_ring below 3 makes sector tiles overlap");
    }
    if (!(region_size > 0.0)) throw ConfigError("region_size must be positive");
    if (!(d0 > 0.0)) throw ConfigError("d0 must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    if (!(r0 > 0.0)) throw ConfigError("r0 must be positive");
    if (arc_segments < 1) throw ConfigError("arc_segments must be at least 1");
    if (inner_radius && !(*inner_radius >= 0.0)) {
      throw ConfigError("inner_radius must be nonnegative");
    }
    if (layout == Layout::grid && region_count) {
      std::size_t side = 2 * rings + 1;
      if (*region_count < 1 || *region_count > side * side) {
        throw ConfigError("region_count must lie in [1, (2 rings + 1)^2]");
      }
    }
  }
};

/// Softened inverse-power decay d0 · (1 + r/r0)^(−alpha).
inline double density_at(double r, double d0, double alpha, double r0) {
  return d0 * std::pow(1.0 + r / r0, -alpha);
}

inline double city_density(const CityConfig& config, const geo::Point& p) {
  double d = density_at(geo::distance(p, config.center), config.d0, config.alpha, config.r0);
  for (const auto& c : config.extra_centers) {
    d += density_at(geo::distance(p, c.center), c.d0, config.alpha, config.r0);
  }
  return d;
}

inline std::string region_id(std::size_t ring, std::size_t sector) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "R%03zu-S%03zu", ring, sector);
  return buf;
}

namespace detail {

inline std::vector<geo::Region> grid_city(const CityConfig& config) {
  const auto R = static_cast<long>(config.rings);
  const double s = config.region_size;
  struct Cell {
    long i, j;
    double r;
  };
  std::vector<Cell> cells;
  for (long j = -R; j <= R; ++j) {
    for (long i = -R; i <= R; ++i) cells.push_back({i, j, std::hypot(double(i), double(j))});
  }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.r < b.r; });
  if (config.region_count) cells.resize(*config.region_count);
  std::sort(cells.begin(), cells.end(),
            [](const Cell& a, const Cell& b) { return a.j != b.j ? a.j < b.j : a.i < b.i; });
  std::vector<geo::Region> regions;
  regions.reserve(cells.size());
  for (const auto& c : cells) {
    double x0 = config.center.x + (static_cast<double>(c.i) - 0.5) * s;
    double y0 = config.center.y + (static_cast<double>(c.j) - 0.5) * s;
    geo::Ring ring{{x0, y0}, {x0 + s, y0}, {x0 + s, y0 + s}, {x0, y0 + s}, {x0, y0}};
    char id[32];
    std::snprintf(id, sizeof(id), "G%+04ld%+04ld", c.i, c.j);
    std::vector<geo::Polygon> polys{geo::Polygon{std::move(ring), {}}};
    auto region = geo::make_region(id, std::move(polys), geo::CrsMode::planar, 0.0);
    region.pop_density = city_density(config, region.centroid);
    regions.push_back(std::move(region));
  }
  return regions;
}

}  // namespace detail

inline std::vector<geo::Region> generate_city(const CityConfig& config) {
  config.validate();
  if (config.layout == Layout::grid) return detail::grid_city(config);
  const double r_in = config.resolved_inner_radius();
  const std::size_t m = config.regions_per_ring;
  const std::size_t seg = config.arc_segments;
  const std::size_t ticks = m * seg;
  auto vertex = [&](double radius, std::size_t tick) {
    double theta = 2.0 * std::numbers::pi * static_cast<double>(tick % ticks) /
                   static_cast<double>(ticks);
    return geo::Vertex{config.center.x + radius * std::cos(theta),
                       config.center.y + radius * std::sin(theta)};
  };
  std::vector<geo::Region> regions;
  regions.reserve(config.rings * m);
  for (std::size_t k = 0; k < config.rings; ++k) {
    double inner = r_in + static_cast<double>(k) * config.region_size;
    double outer = inner + config.region_size;
    for (std::size_t s = 0; s < m; ++s) {
      geo::Ring ring;
      std::size_t t0 = s * seg;
      for (std::size_t t = 0; t <= seg; ++t) ring.push_back(vertex(outer, t0 + t));
      if (inner > 0.0) {
        for (std::size_t t = seg + 1; t-- > 0;) ring.push_back(vertex(inner, t0 + t));
      } else {
        ring.push_back({config.center.x, config.center.y});
      }
      ring.push_back(ring.front());
      std::vector<geo::Polygon> polys{geo::Polygon{std::move(ring), {}}};
      auto region = geo::make_region(region_id(k, s), std::move(polys), geo::CrsMode::planar, 0.0);
      region.pop_density = city_density(config, region.centroid);
      regions.push_back(std::move(region));
    }
  }
  return regions;
}

// Planted determinants -------------------------------------------------------

enum class Pattern { positive, negative, concave, convex, noise_only };
enum class Link { linear_density, linear_log_density };

inline const char* to_string(Pattern p) {
  switch (p) {
    case Pattern::positive: return "positive";
    case Pattern::negative: return "negative";
    case Pattern::concave: return "concave";
    case Pattern::convex: return "convex";
    case Pattern::noise_only: return "noise-only";
  }
  return "";
}

inline Pattern parse_pattern(std::string_view text) {
  for (auto p : {Pattern::positive, Pattern::negative, Pattern::concave, Pattern::convex,
                 Pattern::noise_only}) {
    if (text == to_string(p)) return p;
  }
  throw ConfigError("unknown planted pattern '" + std::string(text) + "'");
}

struct PlantSpec {
  Pattern pattern = Pattern::positive;
  /// Noise standard deviation as a fraction of the signal's. For noise-only
  /// plants the noise has unit standard deviation before scaling.
  double noise_sd = 0.1;
  Link link = Link::linear_density;
  std::uint64_t seed = 0;
  /// Output = offset + scale · (standardized signal + noise).
  double offset = 0.0;
  double scale = 1.0;
  std::optional<std::pair<double, double>> clamp;
};

/// Planted determinant per region: monotone in g(density) for positive and
/// negative plants, quadratic in log-density peaking at the median
/// log-density for concave (convex is its negation).
inline std::vector<double> plant_determinant(std::span<const geo::Region> regions,
                                             const PlantSpec& spec) {
  if (!(spec.noise_sd >= 0.0)) throw ConfigError("noise_sd must be nonnegative");
  std::vector<double> dens;
  for (const auto& r : regions) dens.push_back(r.pop_density);
  if (dens.empty() || *std::max_element(dens.begin(), dens.end()) ==
                           *std::min_element(dens.begin(), dens.end())) {
    throw ContractViolation("synth", "planting needs at least two distinct densities");
  }
  auto safe_log = [](double d) { return std::log(std::max(d, 1e-12)); };
  std::vector<double> signal(dens.size(), 0.0);
  double med_log = 0.0;
  if (spec.pattern == Pattern::concave || spec.pattern == Pattern::convex) {
    std::vector<double> logs;
    for (double d : dens) logs.push_back(safe_log(d));
    med_log = ingest::median(logs);
  }
  for (std::size_t i = 0; i < dens.size(); ++i) {
    double g = spec.link == Link::linear_density ? dens[i] : safe_log(dens[i]);
    double q = safe_log(dens[i]) - med_log;
    switch (spec.pattern) {
      case Pattern::positive: signal[i] = g; break;
      case Pattern::negative: signal[i] = -g; break;
      case Pattern::concave: signal[i] = -q * q; break;
      case Pattern::convex: signal[i] = q * q; break;
      case Pattern::noise_only: signal[i] = 0.0; break;
    }
  }
  double mean = 0.0;
  for (double s : signal) mean += s;
  mean /= static_cast<double>(signal.size());
  double sd = 0.0;
  for (double s : signal) sd += (s - mean) * (s - mean);
  sd = std::sqrt(sd / static_cast<double>(signal.size()));
  double noise_scale = spec.noise_sd;
  if (sd > 0.0) {
    for (auto& s : signal) s = (s - mean) / sd;
  } else {
    noise_scale = spec.pattern == Pattern::noise_only ? 1.0 : spec.noise_sd;
  }
  auto rng = make_stream(spec.seed, "synth.determinant");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) {
    double e = noise_scale > 0.0 ? noise_scale * normal(rng) : 0.0;
    double v = spec.offset + spec.scale * (signal[i] + e);
    if (spec.clamp) v = std::clamp(v, spec.clamp->first, spec.clamp->second);
    out[i] = v;
  }
  return out;
}

// Synthetic measurements -------------------------------------------------------

struct MeasurementPlan {
  /// Installations per region = max(min_installations, round(rate · density)).
  double installations_per_density = 0.01;
  std::size_t min_installations = 2;
  std::size_t max_installations = 40;
  std::size_t records_per_installation = 6;
  /// Share of records from devices faster than 3 m/s.
  double moving_fraction = 0.2;
  /// Provider pool grows linearly with density rank from min to max.
  std::size_t min_providers = 1;
  std::size_t max_providers = 6;
  /// Standard deviation of Gaussian jitter added before rounding the pool size.
  double provider_jitter = 0.0;
  /// Per-region target median download speed (kbps); empty → 8000 flat.
  std::vector<double> speed_kbps;
  /// Relative per-installation spread of the speeds around the target.
  double speed_jitter = 0.0;
  /// First 4G arrival in the country and the planted delay of the least
  /// dense region; delays fall linearly with density.
  ingest::Timestamp fourg_start = 1364774400;  // 2013-04-01
  double max_delay_days = 1000.0;
  /// Standard deviation (days) of Gaussian jitter on each region's arrival.
  double delay_jitter_days = 0.0;
  /// Each region also gets an unconfirmed 4G sighting this many days before
  /// its arrival (0 disables).
  double spurious_lead_days = 0.0;
};

/// Planted per-region quantities, for checking the ingest stage.
struct PlantedMeasurements {
  std::vector<ingest::MeasurementRecord> records;
  std::vector<std::size_t> provider_pool;
  std::vector<std::int64_t> delay_days;
};

inline std::size_t provider_pool_size(double density, double dmin, double dmax,
                                      const MeasurementPlan& plan, double jitter = 0.0) {
  double t = dmax > dmin ? (density - dmin) / (dmax - dmin) : 1.0;
  double span = static_cast<double>(plan.max_providers - plan.min_providers);
  double v = std::floor(t * span + 1e-9 + jitter + (jitter != 0.0 ? 0.5 : 0.0));
  v = std::clamp(v, 0.0, span);
  return plan.min_providers + static_cast<std::size_t>(v);
}

/// Arrival offset (days after the country start) before normalization.
inline std::int64_t arrival_offset(double density, double dmin, double dmax,
                                   const MeasurementPlan& plan, double jitter = 0.0) {
  double t = dmax > dmin ? (density - dmin) / (dmax - dmin) : 1.0;
  return static_cast<std::int64_t>(std::llround(plan.max_delay_days * (1.0 - t) + jitter)) ;
}

namespace detail {

inline geo::Point uniform_in(const geo::Region& r, Rng& rng) {
  std::uniform_real_distribution<double> ux(r.bbox.min_x, r.bbox.max_x);
  std::uniform_real_distribution<double> uy(r.bbox.min_y, r.bbox.max_y);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    geo::Point p{ux(rng), uy(rng), r.crs()};
    if (geo::point_in_polygon(p, r) && !geo::on_boundary(p.x, p.y, r, 1e-6)) return p;
  }
  return r.centroid;
}

}  // namespace detail

/// Crowdsourced-style measurement cloud with planted provider pools, speeds
/// and 4G arrival dates. Every provider in a region's pool emits at least one
/// stationary record, and every arrival is followed by a confirming 4G
/// record within a week.
inline PlantedMeasurements generate_measurements(std::span<const geo::Region> regions,
                                                 const MeasurementPlan& plan,
                                                 std::uint64_t seed) {
  if (plan.min_providers < 1 || plan.max_providers < plan.min_providers) {
    throw ConfigError("provider pool bounds must satisfy 1 <= min <= max");
  }
  if (!(plan.moving_fraction >= 0.0 && plan.moving_fraction <= 1.0)) {
    throw ConfigError("moving_fraction must lie in [0, 1]");
  }
  if (!plan.speed_kbps.empty() && plan.speed_kbps.size() != regions.size()) {
    throw ConfigError("speed targets must align with regions");
  }
  PlantedMeasurements out;
  if (regions.empty()) return out;
  double dmin = regions.front().pop_density;
  double dmax = dmin;
  for (const auto& r : regions) {
    dmin = std::min(dmin, r.pop_density);
    dmax = std::max(dmax, r.pop_density);
  }
  constexpr ingest::Timestamp day = ingest::seconds_per_day;
  // Arrival offsets first, so the earliest one defines the country start.
  std::vector<std::int64_t> offsets;
  std::vector<double> pool_jitter;
  for (const auto& region : regions) {
    auto rng = make_stream(seed, "synth.plan:" + region.id);
    std::normal_distribution<double> normal(0.0, 1.0);
    double dj = plan.delay_jitter_days > 0.0 ? plan.delay_jitter_days * normal(rng) : 0.0;
    double pj = plan.provider_jitter > 0.0 ? plan.provider_jitter * normal(rng) : 0.0;
    offsets.push_back(arrival_offset(region.pop_density, dmin, dmax, plan, dj));
    pool_jitter.push_back(pj);
  }
  const std::int64_t first = *std::min_element(offsets.begin(), offsets.end());
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& region = regions[i];
    auto rng = make_stream(seed, "synth.measurements:" + region.id);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t pool = provider_pool_size(region.pop_density, dmin, dmax, plan, pool_jitter[i]);
    std::int64_t delay = offsets[i] - first;
    out.provider_pool.push_back(pool);
    out.delay_days.push_back(delay);
    auto installs = static_cast<std::size_t>(
        std::llround(plan.installations_per_density * region.pop_density));
    installs = std::clamp(installs, std::max(plan.min_installations, pool), plan.max_installations);
    installs = std::max(installs, pool);
    double target = plan.speed_kbps.empty() ? 8000.0 : plan.speed_kbps[i];
    ingest::Timestamp arrival = plan.fourg_start + delay * day + 6 * 3600;
    // Stationary records need timestamps after the arrival for 4G; earlier ones are 3G.
    std::size_t stationary_seq = 0;
    for (std::size_t inst = 0; inst < installs; ++inst) {
      std::string inst_id = region.id + "-I" + std::to_string(inst);
      std::string op = "OP" + std::to_string(1 + inst % pool);
      double jitter = plan.speed_jitter > 0.0
                          ? std::exp(plan.speed_jitter * (unit(rng) * 2.0 - 1.0))
                          : 1.0;
      double kbps = std::max(1.0, target * jitter);
      for (std::size_t rec = 0; rec < plan.records_per_installation; ++rec) {
        ingest::MeasurementRecord m;
        m.position = detail::uniform_in(region, rng);
        bool moving = rec > 0 && unit(rng) < plan.moving_fraction;
        if (plan.moving_fraction >= 1.0) moving = true;
        m.device_speed = moving ? 3.5 + 25.0 * unit(rng) : 2.5 * unit(rng);
        m.operator_id = op;
        m.installation_id = inst_id;
        m.download_kbps = kbps;
        // Spread records over two years starting at arrival + 10 days, all 4G.
        m.timestamp = arrival + 10 * day + static_cast<ingest::Timestamp>(unit(rng) * 700.0) * day;
        m.tech = ingest::Tech::g4;
        if (!moving) ++stationary_seq;
        out.records.push_back(std::move(m));
      }
    }
    // Pre-arrival 3G traffic, the arrival sighting and its confirmation.
    auto add = [&](ingest::Timestamp t, ingest::Tech tech) {
      ingest::MeasurementRecord m;
      m.position = detail::uniform_in(region, rng);
      m.device_speed = plan.moving_fraction >= 1.0 ? 10.0 : 1.0;
      m.operator_id = "OP1";
      m.installation_id = region.id + "-I0";
      m.download_kbps = target;
      m.timestamp = t;
      m.tech = tech;
      out.records.push_back(std::move(m));
    };
    add(arrival - 30 * day, ingest::Tech::g3);
    add(arrival, ingest::Tech::g4);
    add(arrival + (1 + static_cast<ingest::Timestamp>(unit(rng) * 5.0)) * day, ingest::Tech::g4);
    if (plan.spurious_lead_days > 0.0) {
      add(arrival - static_cast<ingest::Timestamp>(plan.spurious_lead_days) * day, ingest::Tech::g4);
    }
  }
  return out;
}

// Fixture bundle -------------------------------------------------------------

struct PlantedDeterminant {
  ingest::Proxy proxy;
  Pattern pattern;
  /// Sign the classifier should report (after inverted semantics).
  std::string expected;
};

struct Bundle {
  std::vector<geo::Region> regions;
  std::vector<ingest::MeasurementRecord> measurements;
  std::string socio_csv;
  std::vector<PlantedDeterminant> planted;
};

struct BundleConfig {
  CityConfig city = default_bundle_city();
  double noise_sd = 0.1;
  MeasurementPlan plan = default_bundle_plan();

  static CityConfig default_bundle_city() {
    CityConfig c;
    c.rings = 18;
    c.region_count = 1000;
    c.alpha = 1.0;
    c.r0 = 20000.0;
    return c;
  }

  static MeasurementPlan default_bundle_plan() {
    MeasurementPlan p;
    p.provider_jitter = 0.75;
    p.delay_jitter_days = 60.0;
    return p;
  }
};

/// All six determinants planted on one city: competition and education
/// positive, community commitment negative, service quality and income
/// concave in log-density, 4G delay falling with density.
inline Bundle make_bundle(const BundleConfig& config, std::uint64_t seed) {
  Bundle b;
  auto city = config.city;
  city.seed = seed;
  b.regions = generate_city(city);
  auto plant = [&](Pattern p, Link link, double offset, double scale, const char* name,
                   std::optional<std::pair<double, double>> clamp = std::nullopt) {
    PlantSpec s;
    s.pattern = p;
    s.link = link;
    s.noise_sd = config.noise_sd;
    s.offset = offset;
    s.scale = scale;
    s.clamp = clamp;
    s.seed = stream_seed(seed, std::string("synth.plant:") + name);
    return plant_determinant(b.regions, s);
  };
  auto income = plant(Pattern::concave, Link::linear_log_density, 40000.0, 6000.0, "med_hh_income");
  auto bachelors = plant(Pattern::positive, Link::linear_log_density, 0.3, 0.05, "pct_bachelors",
                         std::pair{0.0, 1.0});
  auto ownership = plant(Pattern::negative, Link::linear_log_density, 0.6, 0.06,
                         "pct_dw_ownership", std::pair{0.0, 1.0});
  auto plan = config.plan;
  plan.speed_kbps = plant(Pattern::concave, Link::linear_log_density, 20000.0, 3000.0,
                          "med_speed_mobile", std::pair{100.0, 1e9});
  b.measurements = generate_measurements(b.regions, plan, stream_seed(seed, "synth.measurements"))
                       .records;

  io::CsvWriter w({"id", "med_hh_income", "pct_bachelors", "pct_dw_ownership"});
  for (std::size_t i = 0; i < b.regions.size(); ++i) {
    w.row({b.regions[i].id, io::format_double(income[i]), io::format_double(bachelors[i]),
           io::format_double(ownership[i])});
  }
  b.socio_csv = w.str();
  b.planted = {
      {ingest::Proxy::MBP_number, Pattern::positive, "positive"},
      {ingest::Proxy::med_speed_mobile, Pattern::concave, "non-concentric-concave"},
      {ingest::Proxy::fourg_diffusion_delay, Pattern::negative, "positive"},
      {ingest::Proxy::pct_dw_ownership, Pattern::negative, "negative"},
      {ingest::Proxy::pct_bachelors, Pattern::positive, "positive"},
      {ingest::Proxy::med_hh_income, Pattern::concave, "non-concentric-concave"},
  };
  return b;
}

inline std::string planted_csv(const Bundle& b) {
  io::CsvWriter w({"determinant", "planted_pattern", "expected_sign"});
  for (const auto& p : b.planted) w.row({ingest::proxy_name(p.proxy), to_string(p.pattern), p.expected});
  return w.str();
}

/// Writes regions.geojson, measurements.csv, socio.csv, planted.csv and a
/// run configuration pointing at them.
inline void write_bundle(const Bundle& b, const std::string& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  io::write_file(path("regions.geojson"), geo::regions_to_geojson(b.regions).dump() + "\n");
  io::write_file(path("measurements.csv"), ingest::write_measurements(b.measurements));
  io::write_file(path("socio.csv"), b.socio_csv);
  io::write_file(path("planted.csv"), planted_csv(b));
  io::write_file(path("concentra.toml"),
                 "regions = \"regions.geojson\"\n"
                 "measurements = \"measurements.csv\"\n"
                 "socio = \"socio.csv\"\n"
                 "crs = \"planar\"\n"
                 "seed = " + std::to_string(seed) + "\n");
}

}  // namespace concentra::synth
