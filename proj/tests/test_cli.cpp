#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>

#include "concentra/config.hpp"
#include "concentra/io.hpp"
#include "concentra/pipeline.hpp"

using namespace concentra;
using namespace concentra::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("concentra_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& log) {
  std::string cmd = std::string("\"") + CONCENTRA_CLI + "\" " + args + " > \"" + log.string() +
                    "\" 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    out[e.path().filename().string()] = io::read_file(e.path().string());
  }
  return out;
}

// Small city so the end-to-end runs stay fast.
fs::path small_bundle(const fs::path& root) {
  auto dir = root / "bundle";
  EXPECT_EQ(run("synth --seed 11 --rings 6 --regions 140 --r0 2000 --out \"" + dir.string() + "\"",
                root / "synth.log"),
            0);
  return dir;
}

}  // namespace

TEST(Config, TextSectionsCommentsAndQuotes) {
  RunConfig c;
  apply_text(c,
             "seed = 42  # master seed\n"
             "determinants = [MBP_number, \"pct_bachelors\"]\n"
             "\n"
             "[weights]\n"
             "scheme = queen\n"
             "row_standardize = false\n"
             "[moran]\n"
             "permutations = 199\n"
             "[ingest]\n"
             "confirm_window_days = 3.5\n"
             "country_first_4g = \"2013-04-01T10:00:00Z\"\n");
  EXPECT_EQ(*c.seed, 42u);
  ASSERT_EQ(c.determinants.size(), 2u);
  EXPECT_EQ(c.determinants[1], ingest::Proxy::pct_bachelors);
  EXPECT_EQ(c.weights.scheme, autocorr::WeightsScheme::queen);
  EXPECT_FALSE(c.weights.row_standardize);
  EXPECT_EQ(c.moran_permutations, 199u);
  EXPECT_EQ(c.ingest.confirm_window, 3 * ingest::seconds_per_day + ingest::seconds_per_day / 2);
  EXPECT_EQ(*c.ingest.country_first_4g, *ingest::parse_iso8601("2013-04-01T10:00:00Z"));
}

TEST(Config, BandwidthForms) {
  RunConfig c;
  apply_setting(c, "bandwidth", "12");
  EXPECT_EQ(*c.bandwidth, 12u);
  apply_setting(c, "bandwidth_search", "5..30");
  EXPECT_FALSE(c.bandwidth);
  EXPECT_EQ(c.bandwidth_search, (std::pair<std::size_t, std::size_t>{5, 30}));
  EXPECT_THROW(apply_setting(c, "bandwidth_search", "30..5"), ConfigError);
  EXPECT_THROW(apply_setting(c, "bandwidth_search", "30"), ConfigError);
  EXPECT_THROW(apply_setting(c, "bandwidth", "-3"), ConfigError);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(apply_text(c, "sede = 3\n"), ConfigError);
  EXPECT_THROW(apply_text(c, "seed 3\n"), ConfigError);
  EXPECT_THROW(apply_setting(c, "weights.scheme", "hexagonal"), ConfigError);
  EXPECT_THROW(apply_setting(c, "determinants", "shoe_size"), ConfigError);
  EXPECT_THROW(apply_setting(c, "moran.null", "bootstrap"), ConfigError);
  EXPECT_THROW(apply_setting(c, "kernel.truncate", "maybe"), ConfigError);
  EXPECT_THROW(apply_json(c, "{\"seed\": "), ConfigError);
}

TEST(Config, HashIsStableAndIgnoresOutput) {
  RunConfig a;
  a.seed = 7;
  RunConfig b = a;
  b.out = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.classes = 5;
  EXPECT_NE(config_hash(a), config_hash(b));

  // The canonical text parses back to the same configuration.
  a.weights.scheme = autocorr::WeightsScheme::knn;
  a.weights.k = 6;
  a.bandwidth = 9;
  RunConfig back;
  apply_text(back, to_text(a));
  EXPECT_EQ(config_hash(back), config_hash(a));

  // So does a manifest built from it.
  RunConfig from_manifest;
  apply_json(from_manifest, manifest_json(a, {}).dump());
  EXPECT_EQ(config_hash(from_manifest), config_hash(a));
}

TEST(Config, RelativePathsResolveAgainstTheFile) {
  auto dir = scratch("relative");
  io::write_file((dir / "cfg.toml").string(), "regions = r.geojson\nmeasurements = \"/abs/m.csv\"\n");
  auto c = load_config((dir / "cfg.toml").string());
  EXPECT_EQ(c.regions, (dir / "r.geojson").string());
  EXPECT_EQ(c.measurements, "/abs/m.csv");
  EXPECT_THROW(load_config((dir / "missing.toml").string()), ConfigError);
}

TEST(Config, ValidationNamesWhatIsMissing) {
  RunConfig c;
  EXPECT_THROW(validate(c), ConfigError);
  c.seed = 1;
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("regions"), std::string::npos);
  }
}

TEST(Cli, MissingInputFailsWithoutOutputs) {
  auto root = scratch("missing");
  io::write_file((root / "cfg.toml").string(),
                 "regions = nowhere.geojson\nmeasurements = m.csv\nsocio = s.csv\nseed = 1\n");
  auto out = root / "out";
  int rc = run("run --config \"" + (root / "cfg.toml").string() + "\" --out \"" + out.string() + "\"",
               root / "log");
  EXPECT_EQ(rc, 2);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_NE(io::read_file((root / "log").string()).find("nowhere.geojson"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  auto root = scratch("usage");
  EXPECT_EQ(run("", root / "log"), 2);
  EXPECT_EQ(run("run", root / "log"), 2);
  EXPECT_EQ(run("run --config x --bandwidth 5 --bandwidth-search 4..9", root / "log"), 2);
  EXPECT_EQ(run("synth --seed 1 --layout hexagons", root / "log"), 2);
  EXPECT_EQ(run("--help", root / "log"), 0);
}

TEST(Cli, SynthRunReportIsDeterministic) {
  auto root = scratch("e2e");
  auto bundle = small_bundle(root);
  auto cfg = (bundle / "concentra.toml").string();
  auto a = root / "a";
  auto b = root / "b";
  ASSERT_EQ(run("run --config \"" + cfg + "\" --moran-perm 0 --out x", root / "bad.log"), 2);
  ASSERT_EQ(run("run --config \"" + cfg + "\" --out \"" + a.string() + "\"", root / "a.log"), 0)
      << io::read_file((root / "a.log").string());
  ASSERT_EQ(run("run --config \"" + cfg + "\" --out \"" + b.string() + "\"", root / "b.log"), 0);

  auto fa = read_dir(a);
  auto fb = read_dir(b);
  for (const char* f : {"manifest.json", "verdicts.csv", "report.txt", "proxy_table.csv",
                        "summary_stats.csv", "choropleth_pop_dens.geojson",
                        "fit_MBP_number.csv", "coefficients_MBP_number.geojson"}) {
    EXPECT_TRUE(fa.count(f)) << f;
  }
  EXPECT_EQ(fa, fb);
  EXPECT_EQ(io::read_file((root / "a.log").string()), fa["report.txt"]);

  // The report subcommand re-renders the same table from verdicts.csv.
  ASSERT_EQ(run("report \"" + a.string() + "\"", root / "report.log"), 0);
  EXPECT_EQ(io::read_file((root / "report.log").string()), fa["report.txt"]);

  // A run manifest is itself a configuration and reproduces the run.
  auto c = root / "c";
  ASSERT_EQ(run("run --config \"" + (a / "manifest.json").string() + "\" --out \"" + c.string() + "\"",
                root / "c.log"),
            0)
      << io::read_file((root / "c.log").string());
  EXPECT_EQ(read_dir(c)["verdicts.csv"], fa["verdicts.csv"]);

  // Re-running into an existing run directory replaces it.
  ASSERT_EQ(run("run --config \"" + cfg + "\" --out \"" + a.string() + "\"", root / "a2.log"), 0);
  EXPECT_EQ(read_dir(a), fa);
}

TEST(Cli, StagesWriteTheirOwnArtifacts) {
  auto root = scratch("stages");
  auto bundle = small_bundle(root);
  auto cfg = (bundle / "concentra.toml").string();
  auto ing = root / "ingest";
  ASSERT_EQ(run("ingest --config \"" + cfg + "\" --out \"" + ing.string() + "\"", root / "i.log"), 0);
  auto fi = read_dir(ing);
  EXPECT_TRUE(fi.count("proxy_table.csv"));
  EXPECT_FALSE(fi.count("verdicts.csv"));

  auto fit = root / "fit";
  ASSERT_EQ(run("fit --config \"" + cfg + "\" --determinant MBP_number --bandwidth 12 --out \"" +
                    fit.string() + "\"",
                root / "f.log"),
            0);
  auto ff = read_dir(fit);
  EXPECT_TRUE(ff.count("fit_MBP_number.json"));
  EXPECT_FALSE(ff.count("fit_pct_bachelors.json"));
  auto j = nlohmann::json::parse(ff["fit_MBP_number.json"]);
  EXPECT_EQ(j["bandwidth_neighbors"], 12);
}

TEST(Cli, RefusesToOverwriteForeignDirectory) {
  auto root = scratch("foreign");
  auto bundle = small_bundle(root);
  auto out = root / "precious";
  fs::create_directories(out);
  io::write_file((out / "thesis.tex").string(), "keep me\n");
  int rc = run("ingest --config \"" + (bundle / "concentra.toml").string() + "\" --out \"" +
                   out.string() + "\"",
               root / "log");
  EXPECT_EQ(rc, 2);
  EXPECT_EQ(io::read_file((out / "thesis.tex").string()), "keep me\n");
  EXPECT_FALSE(fs::exists(out / "manifest.json"));
}
