#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "concentra/autocorr.hpp"
#include "concentra/classify.hpp"
#include "concentra/error.hpp"
#include "concentra/geo.hpp"
#include "concentra/ingest.hpp"
#include "concentra/io.hpp"
#include "concentra/rng.hpp"

namespace concentra::cli {

inline const std::vector<ingest::Proxy>& default_determinants() {
  static const std::vector<ingest::Proxy> d{
      ingest::Proxy::MBP_number,       ingest::Proxy::med_speed_mobile,
      ingest::Proxy::fourg_diffusion_delay, ingest::Proxy::pct_dw_ownership,
      ingest::Proxy::pct_bachelors,    ingest::Proxy::med_hh_income};
  return d;
}

/// Null distribution of the residual Moran test: permuted residuals passed
/// through the fitted residual maker, or plain permutations.
enum class MoranNull { projected, permutation };

struct RunConfig {
  std::string regions;
  std::string measurements;
  std::string socio;
  std::string out = "run";
  geo::CrsMode crs = geo::CrsMode::planar;
  std::optional<std::uint64_t> seed;
  std::vector<ingest::Proxy> determinants = default_determinants();

  bool truncate = true;
  std::optional<std::size_t> bandwidth;
  std::pair<std::size_t, std::size_t> bandwidth_search{4, 40};
  std::size_t final_bracket = 8;

  autocorr::WeightsOptions weights;
  std::size_t classes = 7;
  std::size_t moran_permutations = 999;
  MoranNull moran_null = MoranNull::projected;
  classify::ClassifierThresholds thresholds;
  std::set<ingest::Proxy> inverted{ingest::Proxy::fourg_diffusion_delay};

  ingest::IngestConfig ingest;
  geo::RegionKeys region_keys;
  ingest::MomentConvention moments = ingest::MomentConvention::population;

  bool is_inverted(ingest::Proxy p) const { return inverted.count(p) > 0; }
};

namespace detail {

inline std::string unquote(std::string_view v) {
  v = io::trim(v);
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(v);
}

inline std::vector<std::string> parse_list(std::string_view v) {
  v = io::trim(v);
  // "a,b" as one quoted string, as written by to_text
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"' &&
      v.substr(1, v.size() - 2).find('"') == std::string_view::npos) {
    v = v.substr(1, v.size() - 2);
  }
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto comma = v.find(',', start);
    auto item = unquote(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_integer(const std::string& key, std::string_view text) {
  text = io::trim(text);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("'" + key + "' expects a nonnegative integer, got '" + std::string(text) + "'");
  }
  return value;
}

inline double parse_real(const std::string& key, std::string_view text) {
  auto v = io::parse_double(text);
  if (!v) throw ConfigError("'" + key + "' expects a number, got '" + std::string(text) + "'");
  return *v;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
  auto t = io::trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + std::string(t) + "'");
}

inline ingest::Proxy parse_determinant(std::string_view name) {
  auto p = ingest::find_proxy(io::trim(name));
  if (!p || *p == ingest::Proxy::pop_dens) {
    throw ConfigError("unknown determinant '" + std::string(name) + "'",
                      "choose from MBP_number, med_speed_mobile, fourg_diffusion_delay, "
                      "pct_dw_ownership, pct_bachelors, med_hh_income");
  }
  return *p;
}

inline std::pair<std::size_t, std::size_t> parse_range(const std::string& key,
                                                       std::string_view text) {
  text = io::trim(text);
  auto dots = text.find("..");
  if (dots == std::string_view::npos) {
    throw ConfigError("'" + key + "' expects MIN..MAX, got '" + std::string(text) + "'");
  }
  auto lo = parse_integer<std::size_t>(key, text.substr(0, dots));
  auto hi = parse_integer<std::size_t>(key, text.substr(dots + 2));
  if (lo > hi) throw ConfigError("'" + key + "' range is empty");
  return {lo, hi};
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are configuration errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string value = unquote(raw);
  if (key == "regions") c.regions = value;
  else if (key == "measurements") c.measurements = value;
  else if (key == "socio") c.socio = value;
  else if (key == "out") c.out = value;
  else if (key == "crs") {
    try {
      c.crs = geo::parse_crs_mode(value);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "seed") c.seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "determinants") {
    c.determinants.clear();
    for (const auto& name : parse_list(raw)) {
      auto p = parse_determinant(name);
      if (std::find(c.determinants.begin(), c.determinants.end(), p) == c.determinants.end()) {
        c.determinants.push_back(p);
      }
    }
  } else if (key == "inverted") {
    c.inverted.clear();
    for (const auto& name : parse_list(raw)) c.inverted.insert(parse_determinant(name));
  } else if (key == "kernel.truncate") c.truncate = parse_bool(key, value);
  else if (key == "bandwidth") {
    if (value.empty() || value == "search") c.bandwidth.reset();
    else c.bandwidth = parse_integer<std::size_t>(key, value);
  } else if (key == "bandwidth_search") {
    c.bandwidth_search = parse_range(key, value);
    c.bandwidth.reset();
  } else if (key == "bandwidth_search.final_bracket") {
    c.final_bracket = parse_integer<std::size_t>(key, value);
  } else if (key == "weights.scheme") {
    try {
      c.weights.scheme = autocorr::parse_scheme(value);
    } catch (const Error& e) {
      throw ConfigError(e.what(), "choose knn, queen, rook or idist");
    }
  } else if (key == "weights.k") c.weights.k = parse_integer<std::size_t>(key, value);
  else if (key == "weights.cutoff") c.weights.cutoff = parse_real(key, value);
  else if (key == "weights.row_standardize") c.weights.row_standardize = parse_bool(key, value);
  else if (key == "classes") c.classes = parse_integer<std::size_t>(key, value);
  else if (key == "moran.permutations") c.moran_permutations = parse_integer<std::size_t>(key, value);
  else if (key == "moran.null") {
    if (value == "projected") c.moran_null = MoranNull::projected;
    else if (value == "permutation") c.moran_null = MoranNull::permutation;
    else throw ConfigError("'" + key + "' expects projected or permutation");
  } else if (key == "classify.alpha") c.thresholds.alpha = parse_real(key, value);
  else if (key == "classify.strong_r2") c.thresholds.strong_r2 = parse_real(key, value);
  else if (key == "classify.sign_consistency") c.thresholds.sign_consistency = parse_real(key, value);
  else if (key == "ingest.v_max") c.ingest.v_max = parse_real(key, value);
  else if (key == "ingest.confirm_window_days") {
    c.ingest.confirm_window = static_cast<ingest::Timestamp>(
        std::llround(parse_real(key, value) * static_cast<double>(ingest::seconds_per_day)));
  } else if (key == "ingest.samples_per_installation") {
    c.ingest.samples_per_installation = parse_integer<std::size_t>(key, value);
  } else if (key == "ingest.country_first_4g") {
    if (value.empty()) {
      c.ingest.country_first_4g.reset();
    } else {
      auto t = ingest::parse_iso8601(value);
      if (!t) throw ConfigError("'" + key + "' expects an ISO-8601 date");
      c.ingest.country_first_4g = *t;
    }
  } else if (key == "stats.moments") {
    if (value == "population") c.moments = ingest::MomentConvention::population;
    else if (value == "sample") c.moments = ingest::MomentConvention::sample_adjusted;
    else throw ConfigError("'" + key + "' expects population or sample");
  } else if (key == "columns.region_id") c.region_keys.id = value;
  else if (key == "columns.pop_density") c.region_keys.pop_density = value;
  else if (key == "columns.area_km2") c.region_keys.area_km2 = value;
  else if (key == "columns.socio_id") c.ingest.socio.id = value;
  else if (key == "columns.med_hh_income") c.ingest.socio.med_hh_income = value;
  else if (key == "columns.pct_bachelors") c.ingest.socio.pct_bachelors = value;
  else if (key == "columns.pct_dw_ownership") c.ingest.socio.pct_dw_ownership = value;
  else throw ConfigError("unknown configuration key '" + key + "'");
}

/// Ordered key/value view of a configuration; `out` is left out because it
/// names where results go, not what they contain.
inline std::vector<std::pair<std::string, std::string>> to_pairs(const RunConfig& c) {
  auto list = [](auto begin, auto end) {
    std::string s;
    for (auto it = begin; it != end; ++it) {
      if (!s.empty()) s += ", ";
      s += ingest::proxy_name(*it);
    }
    return s;
  };
  std::vector<std::pair<std::string, std::string>> p{
      {"regions", c.regions},
      {"measurements", c.measurements},
      {"socio", c.socio},
      {"crs", geo::to_string(c.crs)},
      {"seed", c.seed ? std::to_string(*c.seed) : ""},
      {"determinants", list(c.determinants.begin(), c.determinants.end())},
      {"inverted", list(c.inverted.begin(), c.inverted.end())},
      {"kernel.truncate", c.truncate ? "true" : "false"},
  };
  if (c.bandwidth) {
    p.emplace_back("bandwidth", std::to_string(*c.bandwidth));
  } else {
    p.emplace_back("bandwidth_search", std::to_string(c.bandwidth_search.first) + ".." +
                                           std::to_string(c.bandwidth_search.second));
  }
  p.emplace_back("bandwidth_search.final_bracket", std::to_string(c.final_bracket));
  p.emplace_back("weights.scheme", autocorr::to_string(c.weights.scheme));
  p.emplace_back("weights.k", std::to_string(c.weights.k));
  p.emplace_back("weights.cutoff", io::format_double(c.weights.cutoff));
  p.emplace_back("weights.row_standardize", c.weights.row_standardize ? "true" : "false");
  p.emplace_back("classes", std::to_string(c.classes));
  p.emplace_back("moran.permutations", std::to_string(c.moran_permutations));
  p.emplace_back("moran.null", c.moran_null == MoranNull::projected ? "projected" : "permutation");
  p.emplace_back("classify.alpha", io::format_double(c.thresholds.alpha));
  p.emplace_back("classify.strong_r2", io::format_double(c.thresholds.strong_r2));
  p.emplace_back("classify.sign_consistency", io::format_double(c.thresholds.sign_consistency));
  p.emplace_back("ingest.v_max", io::format_double(c.ingest.v_max));
  p.emplace_back("ingest.confirm_window_days",
                 io::format_double(static_cast<double>(c.ingest.confirm_window) /
                                   static_cast<double>(ingest::seconds_per_day)));
  p.emplace_back("ingest.samples_per_installation",
                 std::to_string(c.ingest.samples_per_installation));
  p.emplace_back("ingest.country_first_4g",
                 c.ingest.country_first_4g ? ingest::format_iso8601(*c.ingest.country_first_4g) : "");
  p.emplace_back("stats.moments",
                 c.moments == ingest::MomentConvention::population ? "population" : "sample");
  p.emplace_back("columns.region_id", c.region_keys.id);
  p.emplace_back("columns.pop_density", c.region_keys.pop_density);
  p.emplace_back("columns.area_km2", c.region_keys.area_km2);
  p.emplace_back("columns.socio_id", c.ingest.socio.id);
  p.emplace_back("columns.med_hh_income", c.ingest.socio.med_hh_income);
  p.emplace_back("columns.pct_bachelors", c.ingest.socio.pct_bachelors);
  p.emplace_back("columns.pct_dw_ownership", c.ingest.socio.pct_dw_ownership);
  return p;
}

inline std::string to_text(const RunConfig& c) {
  std::string s;
  for (const auto& [k, v] : to_pairs(c)) s += k + " = \"" + v + "\"\n";
  return s;
}

/// 64-bit FNV-1a of the canonical text form, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(concentra::detail::fnv1a(to_text(c))));
  return buf;
}

/// Parses key/value text. `[section]` headers prefix the keys that follow
/// with `section.`; `#` starts a comment outside quotes.
inline void apply_text(RunConfig& c, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    auto t = io::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[' && t.back() == ']') {
      section = std::string(io::trim(t.substr(1, t.size() - 2)));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key(io::trim(t.substr(0, eq)));
    if (!section.empty()) key = section + "." + key;
    apply_setting(c, key, std::string(io::trim(t.substr(eq + 1))));
  }
}

/// A run manifest carries its configuration under "config".
inline void apply_json(RunConfig& c, std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON configuration: ") + e.what());
  }
  const auto& cfg = doc.contains("config") ? doc["config"] : doc;
  if (!cfg.is_object()) throw ConfigError("JSON configuration must be an object");
  for (const auto& [k, v] : cfg.items()) {
    if (v.is_string()) apply_setting(c, k, v.get<std::string>());
    else apply_setting(c, k, v.dump());
  }
}

/// Reads a configuration file; relative data paths resolve against the
/// file's directory.
inline RunConfig load_config(const std::string& path) {
  RunConfig c;
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error&) {
    throw ConfigError("cannot read configuration file '" + path + "'");
  }
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') apply_json(c, text);
  else apply_text(c, text);
  auto base = std::filesystem::path(path).parent_path();
  for (auto* p : {&c.regions, &c.measurements, &c.socio}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) {
      *p = (base / *p).lexically_normal().string();
    }
  }
  return c;
}

inline void validate(const RunConfig& c) {
  if (!c.seed) {
    throw ConfigError("no seed given", "set seed in the config or pass --seed");
  }
  for (const auto& [name, path] : {std::pair{"regions", &c.regions},
                                   std::pair{"measurements", &c.measurements},
                                   std::pair{"socio", &c.socio}}) {
    if (path->empty()) throw ConfigError(std::string("no ") + name + " file given");
    std::error_code ec;
    if (!std::filesystem::is_regular_file(*path, ec)) {
      throw ConfigError(std::string(name) + " file '" + *path + "' does not exist",
                        "check the path in the config");
    }
  }
  if (c.determinants.empty()) throw ConfigError("no determinants selected");
  if (c.bandwidth && *c.bandwidth < 2) throw ConfigError("bandwidth must be at least 2");
  if (c.bandwidth_search.first < 2) throw ConfigError("bandwidth search must start at 2 or more");
  if (c.classes < 2) throw ConfigError("classes must be at least 2");
  if (c.weights.scheme == autocorr::WeightsScheme::knn && c.weights.k < 1) {
    throw ConfigError("weights.k must be positive");
  }
  if (c.weights.scheme == autocorr::WeightsScheme::inverse_distance && !(c.weights.cutoff > 0.0)) {
    throw ConfigError("idist weights need weights.cutoff > 0");
  }
  if (c.ingest.samples_per_installation < 1) {
    throw ConfigError("ingest.samples_per_installation must be positive");
  }
  c.thresholds.validate();
}

}  // namespace concentra::cli
