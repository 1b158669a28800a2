#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "concentra/autocorr.hpp"
#include "concentra/classify.hpp"
#include "concentra/config.hpp"
#include "concentra/error.hpp"
#include "concentra/geo.hpp"
#include "concentra/gwr.hpp"
#include "concentra/ingest.hpp"
#include "concentra/io.hpp"
#include "concentra/rng.hpp"

namespace concentra::cli {

inline constexpr const char* version = "0.1.0";

// Choropleth export ------------------------------------------------------------

struct ChoroplethLayer {
  std::string name;
  std::vector<std::string> ids;
  std::vector<std::optional<double>> values;
  std::vector<std::optional<std::size_t>> class_index;
  classify::ClassBreaks breaks;
  std::vector<std::string> labels;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string label_number(double v) { return io::format_double(io::round_significant(v, 6)); }

inline nlohmann::json published(double v) {
  if (!std::isfinite(v)) return nullptr;
  return io::round_significant(v, 9);
}

}  // namespace detail

inline ChoroplethLayer make_layer(std::span<const geo::Region> regions,
                                  const std::map<std::string, double>& values,
                                  std::size_t class_count, std::string name = "value") {
  ChoroplethLayer layer;
  layer.name = std::move(name);
  std::vector<double> present;
  for (const auto& r : regions) {
    layer.ids.push_back(r.id);
    auto it = values.find(r.id);
    if (it != values.end() && std::isfinite(it->second)) {
      layer.values.emplace_back(it->second);
      present.push_back(it->second);
    } else {
      layer.values.emplace_back();
    }
  }
  if (present.empty()) {
    throw Error(ErrorKind::data, "cli", "choropleth '" + layer.name + "' has no values");
  }
  auto [lo, hi] = std::minmax_element(present.begin(), present.end());
  if (*hi > *lo) {
    layer.breaks = classify::geometric_intervals(present, class_count);
  } else {
    layer.breaks.breaks = {*lo, *hi};
    layer.breaks.counts = {present.size()};
    layer.warnings.push_back("values of '" + layer.name + "' are constant; single class");
  }
  for (const auto& v : layer.values) {
    if (v) layer.class_index.emplace_back(layer.breaks.class_of(*v));
    else layer.class_index.emplace_back();
  }
  const auto& b = layer.breaks.breaks;
  for (std::size_t k = 0; k + 1 < b.size(); ++k) {
    layer.labels.push_back(detail::label_number(b[k]) + "–" + detail::label_number(b[k + 1]) +
                           " (" + std::to_string(layer.breaks.counts[k]) + ")");
  }
  return layer;
}

/// FeatureCollection with per-feature value and class_index plus the layer
/// legend. Geometry keeps full precision so the file parses back unchanged.
inline nlohmann::json layer_geojson(std::span<const geo::Region> regions, const ChoroplethLayer& layer) {
  nlohmann::json fc;
  fc["type"] = "FeatureCollection";
  auto features = nlohmann::json::array();
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    nlohmann::json f;
    f["type"] = "Feature";
    nlohmann::json props;
    props["id"] = r.id;
    props["pop_density"] = r.pop_density;
    props["area_km2"] = detail::published(r.area_km2);
    props["value"] = layer.values[i] ? detail::published(*layer.values[i]) : nlohmann::json(nullptr);
    props["class_index"] =
        layer.class_index[i] ? nlohmann::json(*layer.class_index[i]) : nlohmann::json(nullptr);
    f["properties"] = std::move(props);
    f["geometry"] = geo::geometry_json(r);
    features.push_back(std::move(f));
  }
  fc["features"] = std::move(features);
  auto breaks = nlohmann::json::array();
  for (double v : layer.breaks.breaks) breaks.push_back(detail::published(v));
  fc["layer"] = {{"name", layer.name},
                 {"classification", "geometric-interval"},
                 {"ratio", detail::published(layer.breaks.ratio)},
                 {"breaks", breaks},
                 {"counts", layer.breaks.counts},
                 {"labels", layer.labels},
                 {"warnings", layer.warnings}};
  return fc;
}

inline nlohmann::json export_choropleth(std::span<const geo::Region> regions,
                                        const std::map<std::string, double>& values,
                                        std::size_t class_count, std::string name = "value") {
  return layer_geojson(regions, make_layer(regions, values, class_count, std::move(name)));
}

// Pipeline -------------------------------------------------------------------

struct DeterminantResult {
  ingest::Proxy proxy;
  std::vector<gwr::Observation> observations;
  /// Position of each observation in the loaded region list.
  std::vector<std::size_t> region_index;
  std::optional<gwr::BandwidthSearch> search;
  gwr::GwrFit fit;
  std::optional<autocorr::MoranResult> moran;
  std::optional<classify::PatternVerdict> verdict;
};

struct LoadedInputs {
  std::vector<geo::Region> regions;
  ingest::ProxyTable table;
};

inline LoadedInputs load_inputs(const RunConfig& config) {
  LoadedInputs in;
  in.regions = geo::parse_regions(io::read_file(config.regions), config.crs, config.region_keys);
  auto records = ingest::parse_measurements(io::read_file(config.measurements), config.crs);
  in.table = ingest::build_proxy_table(in.regions, records, io::read_file(config.socio),
                                       config.ingest, *config.seed);
  return in;
}

/// Observations of one determinant: regions where both the density and the
/// determinant are known.
inline DeterminantResult collect(const LoadedInputs& in, ingest::Proxy proxy) {
  DeterminantResult d;
  d.proxy = proxy;
  for (std::size_t i = 0; i < in.regions.size(); ++i) {
    const auto& row = in.table.rows[i];
    if (!row[ingest::Proxy::pop_dens] || !row[proxy]) continue;
    d.observations.push_back(
        {in.regions[i].id, in.regions[i].centroid, *row[ingest::Proxy::pop_dens], *row[proxy]});
    d.region_index.push_back(i);
  }
  if (d.observations.size() < classify::min_slopes) {
    throw Error(ErrorKind::data, "cli",
                std::string("determinant ") + ingest::proxy_name(proxy) + " has only " +
                    std::to_string(d.observations.size()) + " regions with data",
                {}, "drop the determinant or supply more data");
  }
  return d;
}

enum class Stage { fit, moran, classify };

inline DeterminantResult analyze(const LoadedInputs& in, ingest::Proxy proxy, const RunConfig& config,
                                 Stage stage = Stage::classify) {
  auto d = collect(in, proxy);
  const std::size_t n = d.observations.size();
  std::size_t k;
  if (config.bandwidth) {
    k = *config.bandwidth;
  } else {
    std::size_t hi = std::min(config.bandwidth_search.second, n - 2);
    std::size_t lo = std::min(config.bandwidth_search.first, hi);
    d.search = gwr::optimize_bandwidth(d.observations, lo, hi,
                                       {config.truncate, 1.0, config.final_bracket});
    k = d.search->best;
  }
  d.fit = gwr::gwr_fit(d.observations, gwr::KernelConfig{k, config.truncate, 1.0});
  if (stage == Stage::fit) return d;

  std::vector<geo::Region> fitted;
  std::vector<double> residuals;
  for (std::size_t i = 0; i < n; ++i) {
    if (!d.fit.locals[i].ok) continue;
    fitted.push_back(in.regions[d.region_index[i]]);
    residuals.push_back(d.fit.locals[i].residual);
  }
  auto weights = autocorr::build_weights(fitted, config.weights);
  auto moran_seed =
      stream_seed(*config.seed, "moran.permutations", static_cast<std::uint64_t>(proxy));
  if (config.moran_null == MoranNull::projected) {
    std::vector<std::size_t> full;
    for (std::size_t i = 0; i < n; ++i) {
      if (d.fit.locals[i].ok) full.push_back(i);
    }
    const auto& fit = d.fit;
    autocorr::detail::Projection project = [&](std::span<const double> z) {
      std::vector<double> e(n, 0.0);
      for (std::size_t k = 0; k < full.size(); ++k) e[full[k]] = z[k];
      auto r = gwr::apply_residual_maker(fit, e);
      std::vector<double> out(full.size());
      for (std::size_t k = 0; k < full.size(); ++k) out[k] = r[full[k]];
      return out;
    };
    d.moran = autocorr::morans_p_projected(residuals, weights, project, config.moran_permutations,
                                           moran_seed);
  } else {
    d.moran = autocorr::morans_p(residuals, weights, config.moran_permutations, moran_seed);
  }
  if (stage == Stage::moran) return d;

  std::vector<double> densities;
  for (const auto& o : d.observations) densities.push_back(o.x);
  d.verdict = classify::classify_pattern(d.fit, *d.moran, densities, config.thresholds,
                                         config.is_inverted(proxy));
  return d;
}

// Artifacts --------------------------------------------------------------------

using Artifacts = std::map<std::string, std::string>;

inline std::string summary_stats_csv(const ingest::ProxyTable& table, ingest::MomentConvention m) {
  io::CsvWriter w({"proxy", "units", "min", "average", "max", "std_dev", "cardinal", "skewness",
                   "kurtosis"});
  for (auto p : ingest::all_proxies) {
    auto values = table.present_values(p);
    if (values.empty()) {
      w.row({ingest::proxy_name(p), ingest::proxy_units(p), "", "", "", "", "0", "", ""});
      continue;
    }
    auto s = ingest::summary_stats(values, m);
    auto f = [](double v) { return io::format_double(io::round_significant(v, 9)); };
    auto fo = [&](const std::optional<double>& v) { return v ? f(*v) : std::string{}; };
    w.row({ingest::proxy_name(p), ingest::proxy_units(p), f(s.min), f(s.average), f(s.max),
           f(s.std_dev), std::to_string(s.cardinal), fo(s.skewness), fo(s.kurtosis)});
  }
  return w.str();
}

inline std::string fit_csv(const DeterminantResult& d) {
  io::CsvWriter w({"region_id", "x", "y", "c0", "c1", "fitted", "residual", "std_residual", "hat",
                   "condition_number", "bandwidth_distance", "ok"});
  for (std::size_t i = 0; i < d.observations.size(); ++i) {
    const auto& o = d.observations[i];
    const auto& l = d.fit.locals[i];
    w.row({o.region_id, io::format_double(o.x), io::format_double(o.y), io::format_double(l.c0),
           io::format_double(l.c1), io::format_double(l.fitted), io::format_double(l.residual),
           io::format_double(l.std_residual), io::format_double(l.hat),
           io::format_double(l.condition_number), io::format_double(l.bandwidth_distance),
           l.ok ? "1" : "0"});
  }
  return w.str();
}

inline nlohmann::json moran_json(const autocorr::MoranResult& m) {
  using detail::published;
  return {{"I", published(m.i_statistic)},      {"expected_I", published(m.expected_i)},
          {"p_value", published(m.p_value)},    {"p_normal", published(m.p_normal)},
          {"z_normal", published(m.z_normal)},  {"permutations", m.n_permutations},
          {"seed", m.seed},                     {"n_used", m.n_used},
          {"dropped", m.dropped.size()},        {"null_model", m.null_model},
          {"null_mean", published(m.null_mean)},
          {"null_sd", published(m.null_sd)}};
}

inline nlohmann::json verdict_json(const classify::PatternVerdict& v) {
  return {{"sign", classify::to_string(v.sign)},
          {"strength", classify::to_string(v.strength)},
          {"sign_trusted", v.sign_trusted},
          {"dominant_sign_fraction", detail::published(v.dominant_sign_fraction)},
          {"inverted_semantics", v.inverted_semantics},
          {"degenerate_orientation", v.degenerate_orientation}};
}

inline nlohmann::json fit_json(const DeterminantResult& d) {
  using detail::published;
  nlohmann::json j;
  j["determinant"] = ingest::proxy_name(d.proxy);
  j["n"] = d.observations.size();
  j["n_fitted"] = d.fit.n_fitted;
  j["bandwidth_neighbors"] = d.fit.bandwidth_neighbors;
  j["truncate"] = d.fit.truncate;
  if (d.search) {
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [k, s] : d.search->evaluated) scores[std::to_string(k)] = published(s);
    j["bandwidth_search"] = {{"best", d.search->best}, {"score", published(d.search->score)},
                             {"evaluated", scores}};
  }
  j["r_squared"] = published(d.fit.r_squared);
  j["rss"] = published(d.fit.rss);
  j["tss"] = published(d.fit.tss);
  j["trace_s"] = published(d.fit.trace_s);
  j["trace_sts"] = published(d.fit.trace_sts);
  j["effective_number"] = published(d.fit.effective_number);
  j["sigma2_hat"] = published(d.fit.sigma2_hat);
  j["warnings"] = d.fit.warnings;
  if (d.moran) j["moran"] = moran_json(*d.moran);
  if (d.verdict) j["verdict"] = verdict_json(*d.verdict);
  return j;
}

inline std::string verdicts_csv(const std::vector<DeterminantResult>& results) {
  io::CsvWriter w({"determinant", "sign", "strength", "trusted", "dominant_fraction", "moran_p",
                   "r2", "bandwidth"});
  for (const auto& d : results) {
    if (!d.verdict || !d.moran) continue;
    const auto& v = *d.verdict;
    w.row({ingest::proxy_name(d.proxy), classify::to_string(v.sign), classify::to_string(v.strength),
           v.sign_trusted ? "true" : "false",
           io::format_double(io::round_significant(v.dominant_sign_fraction, 9)),
           io::format_double(io::round_significant(d.moran->p_value, 9)),
           io::format_double(io::round_significant(d.fit.r_squared, 9)),
           std::to_string(d.fit.bandwidth_neighbors)});
  }
  return w.str();
}

struct VerdictRow {
  std::string determinant;
  std::string sign;
  std::string strength;
  bool trusted = false;
  double dominant_fraction = 0.0;
  double moran_p = 0.0;
  double r2 = 0.0;
  std::size_t bandwidth = 0;
};

inline std::vector<VerdictRow> parse_verdicts(std::string_view text) {
  auto csv = io::parse_csv(text, "cli");
  std::vector<std::size_t> c;
  for (const char* name : {"determinant", "sign", "strength", "trusted", "dominant_fraction",
                           "moran_p", "r2", "bandwidth"}) {
    c.push_back(csv.require_column(name, "cli"));
  }
  std::vector<VerdictRow> out;
  for (const auto& row : csv.rows) {
    VerdictRow v;
    v.determinant = row[c[0]];
    v.sign = row[c[1]];
    v.strength = row[c[2]];
    v.trusted = row[c[3]] == "true";
    v.dominant_fraction = io::parse_double(row[c[4]]).value_or(0.0);
    v.moran_p = io::parse_double(row[c[5]]).value_or(1.0);
    v.r2 = io::parse_double(row[c[6]]).value_or(0.0);
    v.bandwidth = static_cast<std::size_t>(io::parse_double(row[c[7]]).value_or(0.0));
    out.push_back(std::move(v));
  }
  return out;
}

/// Human-readable verdict table followed by the literature reference, where
/// determinants without a measured proxy appear as "no data".
inline std::string report_text(const std::vector<VerdictRow>& rows) {
  std::ostringstream out;
  out << "Concentric pattern verdicts\n";
  out << "determinant             sign                    strength  moran_p   R2      bw\n";
  for (const auto& v : rows) {
    char line[200];
    std::snprintf(line, sizeof(line), "%-23s %-23s %-9s %-9s %-7s %zu\n", v.determinant.c_str(),
                  (v.sign + (v.trusted ? "" : "*")).c_str(), v.strength.c_str(),
                  io::format_double(io::round_significant(v.moran_p, 3)).c_str(),
                  io::format_double(io::round_significant(v.r2, 3)).c_str(), v.bandwidth);
    out << line;
  }
  if (std::any_of(rows.begin(), rows.end(), [](const VerdictRow& v) { return !v.trusted; })) {
    out << "* coefficient signs cannot be trusted due to residual spatial autocorrelation\n";
  }
  out << "\n";
  out << "Reference patterns\n";
  for (const auto& ref : classify::reference_patterns) {
    std::string measured = "no data";
    for (const auto& v : rows) {
      if (!ref.proxy.empty() && v.determinant == ref.proxy) {
        measured = v.sign + ", " + v.strength + (v.trusted ? "" : "*");
      }
    }
    char line[240];
    std::snprintf(line, sizeof(line), "%-36s literature: %-38s measured: %s\n",
                  std::string(ref.determinant).c_str(), std::string(ref.literature_pattern).c_str(),
                  measured.c_str());
    out << line;
  }
  return out.str();
}

inline nlohmann::json manifest_json(const RunConfig& config, const Artifacts& artifacts) {
  nlohmann::json m;
  m["tool"] = "concentra";
  m["version"] = version;
  m["config_hash"] = config_hash(config);
  m["seed"] = *config.seed;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : to_pairs(config)) cfg[k] = v;
  m["config"] = std::move(cfg);
  m["versions"] = {
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
      {"cxx_standard", __cplusplus}};
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, body] : artifacts) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(concentra::detail::fnv1a(body)));
    files[name] = buf;
  }
  m["artifacts"] = std::move(files);
  return m;
}

/// Writes all artifacts into a staging directory next to `out`, then swaps
/// it into place. Nothing appears at `out` unless every file was written.
inline void commit_artifacts(const std::string& out, const Artifacts& artifacts) {
  namespace fs = std::filesystem;
  fs::path target(out);
  fs::path staging = target.parent_path() / ("." + target.filename().string() + ".partial");
  std::error_code ec;
  if (fs::exists(target, ec)) {
    bool empty = fs::is_directory(target, ec) && fs::is_empty(target, ec);
    if (!empty && !fs::exists(target / "manifest.json", ec)) {
      throw ConfigError("output path '" + out + "' exists and is not a run directory",
                        "choose a new --out directory");
    }
  }
  fs::remove_all(staging, ec);
  try {
    fs::create_directories(staging);
    for (const auto& [name, body] : artifacts) io::write_file((staging / name).string(), body);
    fs::remove_all(target);
    fs::rename(staging, target);
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

enum class Command { ingest, fit, moran, classify, export_maps, run };

/// Runs the pipeline up to `command` and commits its artifacts to
/// `config.out`. `run` executes everything: ingest, proxy table, bandwidth
/// search and fit per determinant, Moran test on residuals, classification,
/// reports and choropleths.
inline std::vector<DeterminantResult> run_stage(const RunConfig& config, Command command,
                                                Artifacts* out_artifacts = nullptr) {
  validate(config);
  auto in = load_inputs(config);
  Artifacts a;
  a["proxy_table.csv"] = ingest::write_proxy_table(in.table);
  a["summary_stats.csv"] = summary_stats_csv(in.table, config.moments);
  if (!in.table.warnings.empty()) {
    std::string w;
    for (const auto& s : in.table.warnings) w += s + "\n";
    a["warnings.txt"] = w;
  }

  std::vector<DeterminantResult> results;
  bool analyzing = command != Command::ingest && command != Command::export_maps;
  if (analyzing) {
    Stage stage = command == Command::fit     ? Stage::fit
                  : command == Command::moran ? Stage::moran
                                              : Stage::classify;
    for (auto proxy : config.determinants) results.push_back(analyze(in, proxy, config, stage));
    for (const auto& d : results) {
      std::string name = ingest::proxy_name(d.proxy);
      a["fit_" + name + ".csv"] = fit_csv(d);
      a["fit_" + name + ".json"] = dump(fit_json(d));
    }
  }
  if (command == Command::classify || command == Command::run) {
    a["verdicts.csv"] = verdicts_csv(results);
    a["report.txt"] = report_text(parse_verdicts(a["verdicts.csv"]));
  }
  if (command == Command::export_maps || command == Command::run) {
    std::map<std::string, double> dens;
    for (const auto& r : in.regions) dens[r.id] = r.pop_density;
    a["choropleth_pop_dens.geojson"] =
        dump(export_choropleth(in.regions, dens, config.classes, "pop_dens"));
    for (auto proxy : config.determinants) {
      std::string name = ingest::proxy_name(proxy);
      std::map<std::string, double> values;
      for (const auto& row : in.table.rows) {
        if (row[proxy]) values[row.region_id] = *row[proxy];
      }
      if (!values.empty()) {
        a["choropleth_" + name + ".geojson"] =
            dump(export_choropleth(in.regions, values, config.classes, name));
      }
    }
    for (const auto& d : results) {
      std::string name = ingest::proxy_name(d.proxy);
      std::map<std::string, double> slopes;
      for (std::size_t i = 0; i < d.observations.size(); ++i) {
        if (d.fit.locals[i].ok) slopes[d.observations[i].region_id] = d.fit.locals[i].c1;
      }
      a["coefficients_" + name + ".geojson"] =
          dump(export_choropleth(in.regions, slopes, config.classes, name + ":c1"));
    }
  }
  a["manifest.json"] = dump(manifest_json(config, a));
  commit_artifacts(config.out, a);
  if (out_artifacts) *out_artifacts = std::move(a);
  return results;
}

inline std::vector<DeterminantResult> run_pipeline(const RunConfig& config,
                                                   Artifacts* out_artifacts = nullptr) {
  return run_stage(config, Command::run, out_artifacts);
}

}  // namespace concentra::cli
