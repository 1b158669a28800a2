#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "concentra/config.hpp"
#include "concentra/error.hpp"
#include "concentra/io.hpp"
#include "concentra/pipeline.hpp"
#include "concentra/synth.hpp"

namespace {

using namespace concentra;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> determinants;
  std::optional<std::size_t> bandwidth;
  std::string bandwidth_search;
  std::string weights_scheme;
  std::optional<std::size_t> classes;
  std::string out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "configuration file (key = value, or a run manifest)")
      ->required();
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--determinant", o.determinants, "determinant to analyze (repeatable)");
  auto* bw = cmd->add_option("--bandwidth", o.bandwidth, "fixed adaptive bandwidth (neighbors)");
  cmd->add_option("--bandwidth-search", o.bandwidth_search, "search range MIN..MAX")->excludes(bw);
  cmd->add_option("--weights-scheme", o.weights_scheme, "knn, queen, rook or idist");
  cmd->add_option("--classes", o.classes, "choropleth class count");
  cmd->add_option("--out", o.out, "output directory");
}

cli::RunConfig resolve(const Overrides& o) {
  auto c = cli::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.determinants.empty()) {
    std::string list;
    for (const auto& d : o.determinants) list += (list.empty() ? "" : ",") + d;
    cli::apply_setting(c, "determinants", list);
  }
  if (o.bandwidth) c.bandwidth = *o.bandwidth;
  if (!o.bandwidth_search.empty()) cli::apply_setting(c, "bandwidth_search", o.bandwidth_search);
  if (!o.weights_scheme.empty()) cli::apply_setting(c, "weights.scheme", o.weights_scheme);
  if (o.classes) c.classes = *o.classes;
  if (!o.out.empty()) c.out = o.out;
  return c;
}

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("CONCENTRA_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
  spdlog::set_pattern("[%l] %v");
}

int report_error(const Error& e) {
  std::cerr << "error: " << e.what() << "\n"
            << "  kind: " << to_string(e.kind()) << "\n"
            << "  module: " << e.module() << "\n";
  if (!e.region_id().empty()) std::cerr << "  region: " << e.region_id() << "\n";
  if (!e.hint().empty()) std::cerr << "  hint: " << e.hint() << "\n";
  return exit_code(e.kind());
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Concentric diffusion patterns: GWR, Moran's I and pattern verdicts"};
  app.require_subcommand(1);

  Overrides o;
  const std::vector<std::pair<const char*, cli::Command>> stages{
      {"ingest", cli::Command::ingest},     {"fit", cli::Command::fit},
      {"moran", cli::Command::moran},       {"classify", cli::Command::classify},
      {"export", cli::Command::export_maps}, {"run", cli::Command::run}};
  const std::vector<const char*> help{
      "derive the proxy table and summary statistics",
      "fit GWR per determinant",
      "fit and test residual autocorrelation",
      "fit, test and classify the patterns",
      "write choropleth GeoJSON layers",
      "run the full pipeline"};
  std::vector<std::pair<CLI::App*, cli::Command>> stage_cmds;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    auto* cmd = app.add_subcommand(stages[k].first, help[k]);
    add_common(cmd, o);
    stage_cmds.emplace_back(cmd, stages[k].second);
  }

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic concentric city bundle");
  std::uint64_t synth_seed = 0;
  std::string synth_out = "synthetic";
  synth::BundleConfig bundle;
  synth_cmd->add_option("--seed", synth_seed, "master seed")->required();
  synth_cmd->add_option("--out", synth_out, "bundle directory");
  std::string layout = "grid";
  synth_cmd->add_option("--layout", layout, "grid or sectors")
      ->check(CLI::IsMember({"grid", "sectors"}));
  synth_cmd->add_option("--rings", bundle.city.rings, "number of rings");
  synth_cmd->add_option("--regions", bundle.city.region_count, "grid: cells kept nearest the center");
  synth_cmd->add_option("--per-ring", bundle.city.regions_per_ring, "sectors: regions per ring");
  synth_cmd->add_option("--d0", bundle.city.d0, "peak density");
  synth_cmd->add_option("--alpha", bundle.city.alpha, "density decay exponent");
  synth_cmd->add_option("--r0", bundle.city.r0, "softening radius (m)");
  synth_cmd->add_option("--region-size", bundle.city.region_size, "ring width (m)");
  synth_cmd->add_option("--noise", bundle.noise_sd, "noise sd as a fraction of the signal sd");
  synth_cmd->add_option("--max-installations", bundle.plan.max_installations,
                        "cap on simulated installations per region");
  synth_cmd->add_option("--records-per-installation", bundle.plan.records_per_installation,
                        "measurements per installation");

  auto* report_cmd = app.add_subcommand("report", "print the verdict report of a run directory");
  std::string run_dir;
  report_cmd->add_option("run_dir", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) {
      bundle.city.layout = layout == "grid" ? synth::Layout::grid : synth::Layout::sectors;
      if (bundle.city.layout == synth::Layout::sectors) bundle.city.region_count.reset();
      auto b = synth::make_bundle(bundle, synth_seed);
      synth::write_bundle(b, synth_out, synth_seed);
      spdlog::info("wrote {} regions and {} measurements to {}", b.regions.size(),
                   b.measurements.size(), synth_out);
      return 0;
    }
    if (report_cmd->parsed()) {
      auto text = io::read_file(run_dir + "/verdicts.csv");
      std::cout << cli::report_text(cli::parse_verdicts(text));
      return 0;
    }
    for (const auto& [cmd, command] : stage_cmds) {
      if (!cmd->parsed()) continue;
      auto config = resolve(o);
      spdlog::info("config hash {}", config.seed ? cli::config_hash(config) : "-");
      auto results = cli::run_stage(config, command);
      for (const auto& d : results) {
        spdlog::info("{}: bandwidth {} R2 {}", ingest::proxy_name(d.proxy),
                     d.fit.bandwidth_neighbors, d.fit.r_squared);
      }
      if (command == cli::Command::classify || command == cli::Command::run) {
        std::cout << io::read_file(config.out + "/report.txt");
      }
      return 0;
    }
  } catch (const Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
