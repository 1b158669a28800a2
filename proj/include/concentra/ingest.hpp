#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "concentra/error.hpp"
#include "concentra/geo.hpp"
#include "concentra/io.hpp"
#include "concentra/rng.hpp"

namespace concentra::ingest {

/// UTC seconds since the Unix epoch.
using Timestamp = std::int64_t;

inline constexpr Timestamp seconds_per_day = 86'400;

enum class Tech { g2, g3, g4, other };

inline Tech parse_tech(std::string_view text) {
  text = io::trim(text);
  if (text == "2G" || text == "2g") return Tech::g2;
  if (text == "3G" || text == "3g") return Tech::g3;
  if (text == "4G" || text == "4g" || text == "LTE" || text == "lte") return Tech::g4;
  return Tech::other;
}

inline const char* to_string(Tech t) {
  switch (t) {
    case Tech::g2: return "2G";
    case Tech::g3: return "3G";
    case Tech::g4: return "4G";
    case Tech::other: return "other";
  }
  return "other";
}

struct MeasurementRecord {
  Timestamp timestamp = 0;
  geo::Point position;
  double device_speed = 0.0;  // m/s
  Tech tech = Tech::other;
  double download_kbps = 0.0;
  std::string operator_id;
  std::string installation_id;
};

// Time ---------------------------------------------------------------------

/// Calendar day index (days since 1970-01-01, UTC).
inline std::int64_t day_number(Timestamp t) {
  return t >= 0 ? t / seconds_per_day : -((-t + seconds_per_day - 1) / seconds_per_day);
}

/// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM|-HH:MM]" and a
/// space instead of 'T'.
inline std::optional<Timestamp> parse_iso8601(std::string_view text) {
  text = io::trim(text);
  auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > text.size()) return std::nullopt;
    int v = 0;
    for (std::size_t k = pos; k < pos + len; ++k) {
      if (text[k] < '0' || text[k] > '9') return std::nullopt;
      v = v * 10 + (text[k] - '0');
    }
    return v;
  };
  auto y = digits(0, 4);
  auto mo = digits(5, 2);
  auto d = digits(8, 2);
  if (!y || !mo || !d || text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  using namespace std::chrono;
  year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  Timestamp t = static_cast<Timestamp>(sys_days{ymd}.time_since_epoch().count()) * seconds_per_day;
  if (text.size() == 10) return t;
  if (text[10] != 'T' && text[10] != ' ') return std::nullopt;
  auto hh = digits(11, 2);
  auto mm = digits(14, 2);
  auto ss = digits(17, 2);
  if (!hh || !mm || !ss || text[13] != ':' || text[16] != ':' || *hh > 23 || *mm > 59 ||
      *ss > 60) {
    return std::nullopt;
  }
  t += *hh * 3600 + *mm * 60 + *ss;
  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
  }
  if (pos == text.size()) return t;
  if (text[pos] == 'Z' && pos + 1 == text.size()) return t;
  if ((text[pos] == '+' || text[pos] == '-') && text.size() == pos + 6 && text[pos + 3] == ':') {
    auto oh = digits(pos + 1, 2);
    auto om = digits(pos + 4, 2);
    if (!oh || !om) return std::nullopt;
    Timestamp offset = *oh * 3600 + *om * 60;
    return text[pos] == '+' ? t - offset : t + offset;
  }
  return std::nullopt;
}

inline std::string format_date(std::int64_t day) {
  using namespace std::chrono;
  year_month_day ymd{sys_days{days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string format_iso8601(Timestamp t) {
  std::int64_t day = day_number(t);
  Timestamp rem = t - day * seconds_per_day;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%sT%02d:%02d:%02dZ", format_date(day).c_str(),
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return buf;
}

// Measurement files --------------------------------------------------------

inline const std::vector<std::string>& measurement_columns() {
  static const std::vector<std::string> cols{
      "timestamp_iso8601", "lat", "lon", "device_speed_mps", "tech",
      "download_kbps", "operator_id", "installation_id"};
  return cols;
}

/// Reads the measurement CSV. In planar mode `lon` carries x and `lat` y.
inline std::vector<MeasurementRecord> parse_measurements(std::string_view text, geo::CrsMode crs) {
  auto table = io::parse_csv(text, "ingest");
  std::array<std::size_t, 8> col{};
  for (std::size_t k = 0; k < col.size(); ++k) {
    col[k] = table.require_column(measurement_columns()[k], "ingest");
  }
  std::vector<MeasurementRecord> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto where = "line " + std::to_string(table.lines[r]);
    auto ts = parse_iso8601(row[col[0]]);
    auto lat = io::parse_double(row[col[1]]);
    auto lon = io::parse_double(row[col[2]]);
    auto speed = io::parse_double(row[col[3]]);
    auto kbps = io::parse_double(row[col[5]]);
    if (!ts) throw ParseError("ingest", where + ": bad timestamp '" + row[col[0]] + "'");
    if (!lat || !lon) throw ParseError("ingest", where + ": bad position");
    if (!speed || *speed < 0.0) throw ParseError("ingest", where + ": bad device speed");
    if (!kbps || *kbps < 0.0) throw ParseError("ingest", where + ": bad download_kbps");
    if (crs == geo::CrsMode::geographic &&
        (*lon < -180.0 || *lon > 180.0 || *lat < -90.0 || *lat > 90.0)) {
      throw ParseError("ingest", where + ": coordinate out of geographic range");
    }
    MeasurementRecord m;
    m.timestamp = *ts;
    m.position = geo::Point{*lon, *lat, crs};
    m.device_speed = *speed;
    m.tech = parse_tech(row[col[4]]);
    m.download_kbps = *kbps;
    m.operator_id = std::string(io::trim(row[col[6]]));
    m.installation_id = std::string(io::trim(row[col[7]]));
    out.push_back(std::move(m));
  }
  return out;
}

inline std::string write_measurements(std::span<const MeasurementRecord> records) {
  io::CsvWriter w(measurement_columns());
  for (const auto& m : records) {
    w.row({format_iso8601(m.timestamp), io::format_double(m.position.y),
           io::format_double(m.position.x), io::format_double(m.device_speed), to_string(m.tech),
           io::format_double(m.download_kbps), m.operator_id, m.installation_id});
  }
  return w.str();
}

// Proxy derivations --------------------------------------------------------

/// Keeps records whose device speed is at most `v_max` m/s.
inline std::vector<MeasurementRecord> filter_stationary(std::span<const MeasurementRecord> records,
                                                        double v_max = 3.0) {
  std::vector<MeasurementRecord> out;
  for (const auto& r : records) {
    if (r.device_speed <= v_max) out.push_back(r);
  }
  return out;
}

/// First 4G timestamp t confirmed by another 4G record in (t, t + window].
inline std::optional<Timestamp> first_valid_4g(std::span<const MeasurementRecord> records,
                                               Timestamp confirm_window = 7 * seconds_per_day) {
  std::vector<Timestamp> times;
  for (const auto& r : records) {
    if (r.tech == Tech::g4) times.push_back(r.timestamp);
  }
  std::sort(times.begin(), times.end());
  for (std::size_t k = 0; k < times.size(); ++k) {
    auto next = std::upper_bound(times.begin() + static_cast<std::ptrdiff_t>(k), times.end(),
                                 times[k]);
    if (next != times.end() && *next <= times[k] + confirm_window) return times[k];
  }
  return std::nullopt;
}

/// Whole calendar days between the country-level and region-level first
/// valid 4G sighting.
inline std::optional<std::int64_t> diffusion_delay(std::optional<Timestamp> region_first,
                                                   Timestamp country_first,
                                                   const std::string& region_id = {}) {
  if (!region_first) return std::nullopt;
  if (*region_first < country_first) {
    throw DataConsistencyError("ingest",
                               "region 4G date " + format_iso8601(*region_first) +
                                   " precedes the country date " + format_iso8601(country_first),
                               region_id);
  }
  return day_number(*region_first) - day_number(country_first);
}

/// Number of distinct operators observed; nullopt without records.
inline std::optional<std::size_t> provider_count(std::span<const MeasurementRecord> records) {
  if (records.empty()) return std::nullopt;
  std::set<std::string_view> ops;
  for (const auto& r : records) ops.insert(r.operator_id);
  return ops.size();
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("ingest", "median of an empty sample");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Median download speed after drawing `per_installation` records uniformly
/// at random (without replacement) from each installation. Records with a
/// zero throughput are ignored. Result is independent of record order.
inline std::optional<double> median_speed(std::span<const MeasurementRecord> records,
                                          std::uint64_t seed, std::size_t per_installation = 1) {
  std::map<std::string, std::vector<std::pair<Timestamp, double>>> by_installation;
  for (const auto& r : records) {
    if (r.download_kbps > 0.0) by_installation[r.installation_id].emplace_back(r.timestamp, r.download_kbps);
  }
  if (by_installation.empty()) return std::nullopt;
  Rng rng(seed);
  std::vector<double> draws;
  for (auto& [id, recs] : by_installation) {
    std::sort(recs.begin(), recs.end());
    std::size_t take = std::min(per_installation, recs.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, recs.size() - 1);
      std::swap(recs[k], recs[pick(rng)]);
      draws.push_back(recs[k].second);
    }
  }
  return median(std::move(draws));
}

// Summary statistics -------------------------------------------------------

enum class MomentConvention {
  population,      ///< biased central moments, g1 and m4/m2²
  sample_adjusted  ///< adjusted Fisher-Pearson G1 and G2 (+3)
};

struct SummaryStats {
  double min = 0.0;
  double average = 0.0;
  double max = 0.0;
  double std_dev = 0.0;
  std::size_t cardinal = 0;
  /// Unset when the variance is zero or the sample is too small.
  std::optional<double> skewness;
  /// Non-excess (normal ≈ 3).
  std::optional<double> kurtosis;
};

inline SummaryStats summary_stats(std::span<const double> values,
                                  MomentConvention convention = MomentConvention::population) {
  if (values.empty()) throw ContractViolation("ingest", "summary statistics of an empty sample");
  SummaryStats s;
  s.cardinal = values.size();
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  s.average = std::clamp(mean, s.min, s.max);
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
  for (double v : values) {
    double d = v - mean;
    double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (convention == MomentConvention::population) {
    s.std_dev = std::sqrt(m2);
  } else {
    s.std_dev = values.size() > 1 ? std::sqrt(m2 * n / (n - 1.0)) : 0.0;
  }
  if (values.size() < 2 || !(m2 > 0.0)) return s;
  double g1 = m3 / std::pow(m2, 1.5);
  double b2 = m4 / (m2 * m2);
  if (convention == MomentConvention::population) {
    s.skewness = g1;
    s.kurtosis = b2;
  } else {
    if (values.size() >= 3) s.skewness = g1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
    if (values.size() >= 4) {
      double g2 = b2 - 3.0;
      s.kurtosis = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)) + 3.0;
    }
  }
  return s;
}

// Proxy table --------------------------------------------------------------

enum class Proxy {
  pop_dens,
  MBP_number,
  med_speed_mobile,
  fourg_diffusion_delay,
  pct_dw_ownership,
  pct_bachelors,
  med_hh_income,
};

inline constexpr std::size_t proxy_count = 7;

inline constexpr std::array<Proxy, proxy_count> all_proxies{
    Proxy::pop_dens,         Proxy::MBP_number,    Proxy::med_speed_mobile,
    Proxy::fourg_diffusion_delay, Proxy::pct_dw_ownership, Proxy::pct_bachelors,
    Proxy::med_hh_income};

inline const char* proxy_name(Proxy p) {
  switch (p) {
    case Proxy::pop_dens: return "pop_dens";
    case Proxy::MBP_number: return "MBP_number";
    case Proxy::med_speed_mobile: return "med_speed_mobile";
    case Proxy::fourg_diffusion_delay: return "fourg_diffusion_delay";
    case Proxy::pct_dw_ownership: return "pct_dw_ownership";
    case Proxy::pct_bachelors: return "pct_bachelors";
    case Proxy::med_hh_income: return "med_hh_income";
  }
  return "";
}

inline const char* proxy_units(Proxy p) {
  switch (p) {
    case Proxy::pop_dens: return "inhab/km2";
    case Proxy::MBP_number: return "operators";
    case Proxy::med_speed_mobile: return "kbps";
    case Proxy::fourg_diffusion_delay: return "days";
    case Proxy::pct_dw_ownership: return "fraction";
    case Proxy::pct_bachelors: return "fraction";
    case Proxy::med_hh_income: return "euros/hh";
  }
  return "";
}

inline std::optional<Proxy> find_proxy(std::string_view name) {
  for (auto p : all_proxies) {
    if (name == proxy_name(p)) return p;
  }
  return std::nullopt;
}

struct ProxyRow {
  std::string region_id;
  std::array<std::optional<double>, proxy_count> values;

  std::optional<double>& operator[](Proxy p) { return values[static_cast<std::size_t>(p)]; }
  const std::optional<double>& operator[](Proxy p) const {
    return values[static_cast<std::size_t>(p)];
  }
};

struct ProxyTable {
  std::vector<ProxyRow> rows;
  /// Country-level first valid 4G sighting used for the delays.
  std::optional<Timestamp> country_first_4g;
  std::vector<std::string> warnings;

  const ProxyRow* find(std::string_view id) const {
    for (const auto& r : rows) {
      if (r.region_id == id) return &r;
    }
    return nullptr;
  }

  std::size_t cardinality(Proxy p) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const ProxyRow& r) { return r[p].has_value(); }));
  }

  std::vector<double> present_values(Proxy p) const {
    std::vector<double> out;
    for (const auto& r : rows) {
      if (r[p]) out.push_back(*r[p]);
    }
    return out;
  }
};

inline std::string write_proxy_table(const ProxyTable& table) {
  std::vector<std::string> header{"region_id"};
  for (auto p : all_proxies) header.emplace_back(proxy_name(p));
  io::CsvWriter w(header);
  for (const auto& r : table.rows) {
    std::vector<std::string> fields{r.region_id};
    for (auto p : all_proxies) fields.push_back(io::format_optional(r[p]));
    w.row(fields);
  }
  return w.str();
}

inline ProxyTable parse_proxy_table(std::string_view text) {
  auto csv = io::parse_csv(text, "ingest");
  auto id_col = csv.require_column("region_id", "ingest");
  std::array<std::optional<std::size_t>, proxy_count> cols;
  for (auto p : all_proxies) cols[static_cast<std::size_t>(p)] = csv.column(proxy_name(p));
  ProxyTable table;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    ProxyRow row;
    row.region_id = std::string(io::trim(csv.rows[r][id_col]));
    if (!seen.insert(row.region_id).second) {
      throw ConflictError("ingest", "duplicate region id '" + row.region_id + "' in proxy table",
                          row.region_id);
    }
    for (std::size_t k = 0; k < proxy_count; ++k) {
      if (!cols[k]) continue;
      const auto& cell = csv.rows[r][*cols[k]];
      if (io::trim(cell).empty()) continue;
      auto v = io::parse_double(cell);
      if (!v) {
        throw ParseError("ingest", "line " + std::to_string(csv.lines[r]) + ": bad number '" +
                                       cell + "'", row.region_id);
      }
      row.values[k] = v;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct SocioColumns {
  std::string id = "id";
  std::string med_hh_income = "med_hh_income";
  std::string pct_bachelors = "pct_bachelors";
  std::string pct_dw_ownership = "pct_dw_ownership";
};

struct IngestConfig {
  double v_max = 3.0;
  Timestamp confirm_window = 7 * seconds_per_day;
  std::size_t samples_per_installation = 1;
  /// Overrides the country-level 4G date (default: earliest regional date).
  std::optional<Timestamp> country_first_4g;
  /// Optional [begin, end) windows for the 4G scan and for the provider and
  /// speed proxies.
  std::optional<std::pair<Timestamp, Timestamp>> fourg_window;
  std::optional<std::pair<Timestamp, Timestamp>> measurement_window;
  SocioColumns socio;
};

namespace detail {

inline bool in_window(Timestamp t, const std::optional<std::pair<Timestamp, Timestamp>>& w) {
  return !w || (t >= w->first && t < w->second);
}

}  // namespace detail

/// Joins socio-economic columns and derives the measurement proxies for every
/// region. Regions without qualifying data keep the proxy missing.
inline ProxyTable build_proxy_table(std::span<const geo::Region> regions,
                                    std::span<const MeasurementRecord> measurements,
                                    std::string_view socio_csv, const IngestConfig& config,
                                    std::uint64_t seed) {
  ProxyTable table;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : regions) {
    if (!index.emplace(r.id, table.rows.size()).second) {
      throw ConflictError("ingest", "duplicate region id '" + r.id + "'", r.id);
    }
    ProxyRow row;
    row.region_id = r.id;
    row[Proxy::pop_dens] = r.pop_density;
    table.rows.push_back(std::move(row));
  }

  auto socio = io::parse_csv(socio_csv, "ingest");
  auto id_col = socio.require_column(config.socio.id, "ingest");
  const std::array<std::pair<Proxy, std::string>, 3> socio_fields{{
      {Proxy::med_hh_income, config.socio.med_hh_income},
      {Proxy::pct_bachelors, config.socio.pct_bachelors},
      {Proxy::pct_dw_ownership, config.socio.pct_dw_ownership},
  }};
  std::array<std::optional<std::size_t>, 3> socio_cols;
  for (std::size_t k = 0; k < socio_fields.size(); ++k) {
    socio_cols[k] = socio.column(socio_fields[k].second);
    if (!socio_cols[k]) {
      table.warnings.push_back("socio CSV lacks column '" + socio_fields[k].second + "'");
    }
  }
  std::set<std::string> seen;
  for (std::size_t r = 0; r < socio.rows.size(); ++r) {
    std::string id(io::trim(socio.rows[r][id_col]));
    if (!seen.insert(id).second) {
      throw ConflictError("ingest", "duplicate socio row for region '" + id + "'", id);
    }
    auto it = index.find(id);
    if (it == index.end()) {
      table.warnings.push_back("socio row for unknown region '" + id + "' dropped");
      continue;
    }
    auto& row = table.rows[it->second];
    for (std::size_t k = 0; k < socio_fields.size(); ++k) {
      if (!socio_cols[k]) continue;
      const auto& cell = socio.rows[r][*socio_cols[k]];
      if (io::trim(cell).empty()) continue;
      auto v = io::parse_double(cell);
      if (!v) {
        throw ParseError("ingest", "line " + std::to_string(socio.lines[r]) + ": bad number '" +
                                       cell + "'", id);
      }
      Proxy p = socio_fields[k].first;
      if (p != Proxy::med_hh_income && (*v < 0.0 || *v > 1.0)) {
        throw DataConsistencyError("ingest",
                                   std::string(proxy_name(p)) + " outside [0, 1] for region '" +
                                       id + "'", id);
      }
      row[p] = v;
    }
  }

  auto stationary = filter_stationary(measurements, config.v_max);
  std::vector<geo::Point> points;
  points.reserve(stationary.size());
  for (const auto& m : stationary) points.push_back(m.position);
  auto assignment = geo::spatial_join(points, regions);
  std::vector<std::vector<MeasurementRecord>> per_region(regions.size());
  for (std::size_t k = 0; k < stationary.size(); ++k) {
    if (assignment[k]) per_region[*assignment[k]].push_back(stationary[k]);
  }

  std::vector<std::optional<Timestamp>> first_4g(regions.size());
  for (std::size_t i = 0; i < regions.size(); ++i) {
    std::vector<MeasurementRecord> window_recs;
    std::vector<MeasurementRecord> fourg_recs;
    for (const auto& m : per_region[i]) {
      if (detail::in_window(m.timestamp, config.measurement_window)) window_recs.push_back(m);
      if (detail::in_window(m.timestamp, config.fourg_window)) fourg_recs.push_back(m);
    }
    auto& row = table.rows[i];
    if (auto c = provider_count(window_recs)) row[Proxy::MBP_number] = static_cast<double>(*c);
    row[Proxy::med_speed_mobile] =
        median_speed(window_recs, stream_seed(seed, "ingest.sampling:" + regions[i].id),
                     config.samples_per_installation);
    first_4g[i] = first_valid_4g(fourg_recs, config.confirm_window);
  }

  table.country_first_4g = config.country_first_4g;
  if (!table.country_first_4g) {
    for (const auto& f : first_4g) {
      if (f && (!table.country_first_4g || *f < *table.country_first_4g)) table.country_first_4g = f;
    }
  }
  if (table.country_first_4g) {
    for (std::size_t i = 0; i < regions.size(); ++i) {
      if (auto d = diffusion_delay(first_4g[i], *table.country_first_4g, regions[i].id)) {
        table.rows[i][Proxy::fourg_diffusion_delay] = static_cast<double>(*d);
      }
    }
  }
  return table;
}

}  // namespace concentra::ingest
