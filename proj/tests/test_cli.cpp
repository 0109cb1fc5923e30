#include "brwlab/runner.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace brwlab;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("brwlab_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
  const auto p = scratch() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

/// Runs the tool; returns its exit code.
int run_tool(const std::string& args, const std::string& threads = "1") {
  const std::string cmd = "BRWLAB_THREADS=" + threads + " " + BRWLAB_EXE + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::string> header;
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    Row r;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

double num(const Row& r, const std::string& key) { return std::stod(r.at(key)); }

// Small but valid configurations for every command.
const std::map<std::string, std::string>& base_configs() {
  static const std::map<std::string, std::string> configs{
      {"spectral", "[spectral]\ngraph = srw(1)\nradii = 1..5\n"},
      {"simulate", "[simulate]\ngraph = srw(1)\nlambda = 0.5, 1.5\nm = 2, inf\nhorizon = 3\nreplicas = 200\n"},
      {"scan", "[scan]\ngraph = loop\nmode = weak\nlambda_lo = 0.2\nlambda_hi = 3\nrefinements = 2\nhorizon = 10\nreplicas = 200\n"
               "ceiling = 500\n"},
      {"coupling", "[coupling]\nmode = iid\np = 0.5, 0.7\nsamples = 20\ndepth = 10\n"},
      {"drift", "[drift]\np = 0.7\nq = 0.1\nlambda = 1.2\n"},
      {"percolation", "[percolation]\nside = 6\np = dyadic:1..3\nseeds = 3\n"},
  };
  return configs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsFillUnsetKeys) {
  const auto s = load_settings("seed = 9\n[drift]\np = 0.7\nq = 0.1\nlambda = 1.2\n", "drift");
  EXPECT_EQ(s.seed(), 9u);
  EXPECT_EQ(s.raw("margin"), "0.001");
  EXPECT_EQ(s.raw("out"), "drift.csv");
}

TEST(Config, RequiredKeysMustBePresent) {
  EXPECT_THROW(load_settings("[drift]\np = 0.7\nq = 0.1\n", "drift"), ConfigError);
}

TEST(Config, UnknownNamesAreRejected) {
  EXPECT_THROW(load_settings("[drift]\np = 1\nq = 1\nlambda = 1\nwidth = 2\n", "drift"), ConfigError);
  EXPECT_THROW(load_settings("[drfit]\np = 1\n", "drift"), ConfigError);
  EXPECT_THROW(load_settings("threads = 4\n", "drift"), ConfigError);
  // Other sections are checked too.
  EXPECT_THROW(load_settings("[spectral]\nbogus = 1\n[drift]\np = 1\nq = 1\nlambda = 1\n", "drift"), ConfigError);
  EXPECT_THROW(load_settings("[drift]\np = 1\n[drift]\nq = 1\n", "drift"), ConfigError);
  EXPECT_THROW(load_settings("", "plot"), ConfigError);
}

TEST(Config, CommentsAndInlineSemicolons) {
  const auto s = load_settings("# a comment\n; another\n[simulate]\ngraph = srw(1)\nlambda = 1\n"
                               "initial = (0):2; (3):1\n",
                               "simulate");
  EXPECT_EQ(s.raw("initial"), "(0):2; (3):1");
}

TEST(Config, TypedAccessors) {
  Settings s("x", {{"a", "1..3, 7"}, {"b", "inf"}, {"c", "0"}, {"d", "3..1"}, {"e", "1.5, 2"}, {"f", "yes"},
                   {"g", "1e999"}, {"h", "-2"}});
  EXPECT_EQ(s.integers("a"), (std::vector<std::int64_t>{1, 2, 3, 7}));
  EXPECT_EQ(s.cap("b", 1, kUnbounded), kUnbounded);
  EXPECT_THROW(s.cap("c", 1, kUnbounded), ConfigError);
  EXPECT_THROW(s.integers("d"), ConfigError);
  EXPECT_EQ(s.doubles("e"), (std::vector<double>{1.5, 2.0}));
  EXPECT_TRUE(s.to_bool("f"));
  EXPECT_THROW(s.to_double("g"), ConfigError);
  EXPECT_THROW(s.to_uint("h"), ConfigError);
  EXPECT_THROW(s.set("zz", "1"), ConfigError);
}

TEST(Config, HeaderListsResolvedKeys) {
  const auto s = load_settings("seed = 4\n[drift]\np = 0.7\nq = 0.1\nlambda = 1.2\n", "drift");
  std::ostringstream os;
  write_settings_header(os, s, "v");
  EXPECT_EQ(os.str(),
            "# brwlab v drift\n# grid_step = 0.05\n# lambda = 1.2\n# margin = 0.001\n# max_n = 1000000\n"
            "# p = 0.7\n# q = 0.1\n# seed = 4\n");
}

TEST(Config, ManifestRoundTrip) {
  for (const auto& [command, text] : base_configs()) {
    const auto s = load_settings(text, command);
    nlohmann::json m{{"command", command}, {"config", manifest_config(s)}};
    EXPECT_EQ(settings_from_manifest(m).values(), s.values()) << command;
  }
  EXPECT_THROW(settings_from_manifest(nlohmann::json{{"command", "drift"}}), ConfigError);
}

TEST(Config, BaseConfigurationsRun) {
  for (const auto& [command, text] : base_configs()) {
    EXPECT_NO_THROW(run_command(load_settings(text, command))) << command;
  }
}

// Every malformed document is rejected by validation: garbage values, unknown
// keys and sections, and missing required keys.
TEST(Config, FuzzedConfigurationsAreRejected) {
  std::mt19937_64 gen(2024);
  const std::vector<std::string> garbage{"@@", "(", "1..", "--", "nan", "1e999", "x=y"};
  std::size_t cases = 0;
  for (const auto& [command, text] : base_configs()) {
    const auto base = load_settings(text, command);
    std::vector<std::string> keys;
    for (const auto& [k, v] : base.values())
      if (k != "out" && k != "dump") keys.push_back(k);
    for (int trial = 0; trial < 60; ++trial) {
      std::string doc;
      const int kind = static_cast<int>(gen() % 4);
      if (kind == 0) {
        const auto& key = keys[gen() % keys.size()];
        const auto& bad = garbage[gen() % garbage.size()];
        auto values = base.values();
        values[key] = bad;
        std::string top, sec = "[" + command + "]\n";
        for (const auto& [k, v] : values) {
          const bool global = k == "seed" || k == "out";
          (global ? top : sec) += k + " = " + v + "\n";
        }
        doc = top + sec;
      } else if (kind == 1) {
        doc = text + "unexpected_" + std::to_string(gen() % 100) + " = 1\n";
      } else if (kind == 2) {
        doc = text + "[section" + std::to_string(gen() % 100) + "]\nkey = 1\n";
      } else {
        // Drop the section header: keys land at top level.
        doc = text.substr(text.find('\n') + 1);
      }
      ++cases;
      try {
        run_command(load_settings(doc, command));
        ADD_FAILURE() << "accepted:\n" << doc;
      } catch (const std::invalid_argument&) {
      } catch (const std::exception& e) {
        ADD_FAILURE() << "wrong error type (" << e.what() << ") for\n" << doc;
      }
    }
  }
  EXPECT_EQ(cases, 360u);
}

// ---------------------------------------------------------------------------
// The tool

TEST(Tool, ExitCodes) {
  const auto dir = scratch();
  const auto ok = write_config("ok.ini", base_configs().at("drift"));
  EXPECT_EQ(run_tool("drift --config " + ok.string() + " --out " + (dir / "ok.csv").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok.csv.manifest.json"));

  // Usage and configuration errors.
  EXPECT_EQ(run_tool(""), 1);
  EXPECT_EQ(run_tool("plot"), 1);
  EXPECT_EQ(run_tool("drift --config /nonexistent.ini"), 1);
  const auto empty_radii = write_config("er.ini", "[spectral]\ngraph = srw(1)\nradii =\n");
  EXPECT_EQ(run_tool("spectral --config " + empty_radii.string() + " --out " + (dir / "er.csv").string()), 1);
  EXPECT_FALSE(fs::exists(dir / "er.csv"));
  EXPECT_FALSE(fs::exists(dir / "er.csv.manifest.json"));

  // Non-convergence: the table is still written, the manifest records the error.
  const auto sp = write_config("nc.ini", "[spectral]\ngraph = srw(1)\nradii = 5..8\nmax_iter = 2\n");
  EXPECT_EQ(run_tool("spectral --config " + sp.string() + " --out " + (dir / "nc.csv").string()), 2);
  EXPECT_EQ(read_json(dir / "nc.csv.manifest.json")["exit_code"], 2);
  EXPECT_EQ(read_csv(dir / "nc.csv").size(), 4u);
  EXPECT_EQ(run_tool("drift --config " + ok.string() + " --set lambda=0.9 --out " + (dir / "d.csv").string()), 2);

  // Tuning failure.
  const auto tune = write_config("tf.ini",
                                 "[coupling]\nmode = tune\ngraph = srw(1)\nlambda = 1.2\nepsilon = 0.001\n"
                                 "t_points = 1\nk_doublings = 2\nreplicas = 100\n");
  EXPECT_EQ(run_tool("coupling --config " + tune.string() + " --out " + (dir / "tf.csv").string()), 3);
  EXPECT_TRUE(read_json(dir / "tf.csv.manifest.json").contains("error"));
}

TEST(Tool, ManifestContents) {
  const auto dir = scratch();
  const auto cfg = write_config("m.ini", "seed = 17\n" + base_configs().at("percolation"));
  ASSERT_EQ(run_tool("percolation --config " + cfg.string() + " --out " + (dir / "m.csv").string()), 0);
  const auto m = read_json(dir / "m.csv.manifest.json");
  EXPECT_EQ(m["version"], kVersion);
  EXPECT_EQ(m["command"], "percolation");
  EXPECT_EQ(m["config"]["seed"], "17");
  EXPECT_EQ(m["config"]["side"], "6");
  EXPECT_TRUE(m.contains("started_at"));
  EXPECT_TRUE(m.contains("finished_at"));
  EXPECT_EQ(m["outputs"][0]["fnv1a64"], content_digest(slurp(dir / "m.csv")));
  EXPECT_EQ(m["summary"]["rows"], 9);
}

TEST(Tool, SeedFlagOverridesTheConfig) {
  const auto dir = scratch();
  const auto cfg = write_config("seed.ini", "seed = 1\n" + base_configs().at("simulate"));
  ASSERT_EQ(run_tool("simulate --config " + cfg.string() + " --out " + (dir / "s1.csv").string()), 0);
  ASSERT_EQ(run_tool("simulate --config " + cfg.string() + " --seed 2 --out " + (dir / "s2.csv").string()), 0);
  EXPECT_NE(slurp(dir / "s1.csv"), slurp(dir / "s2.csv"));
  EXPECT_EQ(read_json(dir / "s2.csv.manifest.json")["config"]["seed"], "2");
}

TEST(Tool, ByteIdenticalAcrossRerunsAndThreadCounts) {
  const auto dir = scratch();
  for (const auto& [command, text] : base_configs()) {
    const auto cfg = write_config(command + ".ini", text);
    const auto a = dir / (command + "_a.csv"), b = dir / (command + "_b.csv"), c = dir / (command + "_c.csv");
    ASSERT_EQ(run_tool(command + " --config " + cfg.string() + " --out " + a.string(), "1"), 0) << command;
    ASSERT_EQ(run_tool(command + " --config " + cfg.string() + " --out " + b.string(), "3"), 0) << command;
    const auto manifest = dir / (command + "_a.csv.manifest.json");
    ASSERT_EQ(run_tool("rerun " + manifest.string() + " --out " + c.string(), "2"), 0) << command;
    EXPECT_FALSE(slurp(a).empty());
    EXPECT_EQ(slurp(a), slurp(b)) << command;
    EXPECT_EQ(slurp(a), slurp(c)) << command;
    EXPECT_EQ(slurp(a).find('\r'), std::string::npos);
  }
}

TEST(Tool, BlockFieldAndDumpAreDeterministic) {
  const auto dir = scratch();
  const auto cfg = write_config("blk.ini",
                                "[coupling]\nmode = block\nlambda = 3\nk = 2\nt_bar = 1\nnbar = 200\nsamples = 5\n"
                                "depth = 8\ndump = " +
                                    (dir / "f1.txt").string() + "\n");
  ASSERT_EQ(run_tool("coupling --config " + cfg.string() + " --out " + (dir / "b1.csv").string(), "1"), 0);
  const auto first = slurp(dir / "f1.txt");
  ASSERT_EQ(run_tool("coupling --config " + cfg.string() + " --out " + (dir / "b2.csv").string(), "4"), 0);
  EXPECT_EQ(slurp(dir / "b1.csv"), slurp(dir / "b2.csv"));
  EXPECT_EQ(slurp(dir / "f1.txt"), first);
  EXPECT_EQ(first.substr(0, first.find('\n')), "index_lo index_hi depth");
}

// ---------------------------------------------------------------------------
// Command examples

TEST(Commands, SpectralLadderOnTheLine) {
  const auto dir = scratch();
  const auto cfg = write_config("z.ini", "[spectral]\ngraph = srw(1)\nradii = 1..30\n");
  ASSERT_EQ(run_tool("spectral --config " + cfg.string() + " --out " + (dir / "z.csv").string()), 0);
  const auto rows = read_csv(dir / "z.csv");
  ASSERT_EQ(rows.size(), 30u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(num(rows[i], "nR"), num(rows[i - 1], "nR"));
}

TEST(Commands, SpectralLadderOnTheTree) {
  const auto dir = scratch();
  const auto cfg = write_config("t.ini", "[spectral]\ngraph = tree(4)\nradii = 25\n");
  ASSERT_EQ(run_tool("spectral --config " + cfg.string() + " --out " + (dir / "t.csv").string()), 0);
  const auto rows = read_csv(dir / "t.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(num(rows[0], "nR"), 1.154701, 0.02 * 1.154701);
}

TEST(Commands, SimulateZeroRateAndLoop) {
  const auto dir = scratch();
  const auto cfg = write_config("sim.ini",
                                "seed = 1\n[simulate]\ngraph = loop\nlambda = 0, 2\nhorizon = 200\n"
                                "replicas = 10000\nceiling = 1000\n");
  ASSERT_EQ(run_tool("simulate --config " + cfg.string() + " --out " + (dir / "sim.csv").string()), 0);
  const auto rows = read_csv(dir / "sim.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(num(rows[0], "p_hat"), 0.0);
  // 1 - 1 / lambda = 0.5 lies inside the Wilson interval.
  EXPECT_LE(num(rows[1], "ci_lo"), 0.5);
  EXPECT_GE(num(rows[1], "ci_hi"), 0.5);
}

TEST(Commands, ScanReportsABracket) {
  const auto dir = scratch();
  const auto cfg = write_config("scan.ini", base_configs().at("scan"));
  ASSERT_EQ(run_tool("scan --config " + cfg.string() + " --out " + (dir / "scan.csv").string()), 0);
  const auto m = read_json(dir / "scan.csv.manifest.json");
  const auto& scan = m["summary"]["scans"][0];
  EXPECT_TRUE(scan["separated"].get<bool>());
  EXPECT_EQ(read_csv(dir / "scan.csv").size(), 4u);
  EXPECT_LE(scan["bracket_lo"].get<double>(), scan["bracket_hi"].get<double>());
}

TEST(Commands, DriftAnchorPasses) {
  const auto dir = scratch();
  const auto cfg = write_config("dr.ini", base_configs().at("drift"));
  ASSERT_EQ(run_tool("drift --config " + cfg.string() + " --out " + (dir / "dr.csv").string()), 0);
  const auto m = read_json(dir / "dr.csv.manifest.json");
  EXPECT_EQ(m["summary"]["anchor_check"], "pass");
  EXPECT_LT(m["summary"]["d1"].get<int>(), m["summary"]["d2"].get<int>());
  EXPECT_FALSE(read_csv(dir / "dr.csv").empty());
}

TEST(Commands, PercolationWithFullRetentionHasNoGap) {
  const auto dir = scratch();
  const auto cfg = write_config("p1.ini", "[percolation]\nside = 8\np = 1..5:1\nseeds = 4\n");
  ASSERT_EQ(run_tool("percolation --config " + cfg.string() + " --out " + (dir / "p1.csv").string()), 0);
  const auto rows = read_csv(dir / "p1.csv");
  ASSERT_EQ(rows.size(), 20u);
  for (const auto& r : rows) EXPECT_EQ(num(r, "lambda_s_largest"), num(r, "lambda_s_full_box"));
}

TEST(Commands, IidCouplingIsSupercriticalAtHighP) {
  const auto dir = scratch();
  const auto cfg = write_config("iid.ini", "[coupling]\nmode = iid\np = 0.8\nsamples = 300\ndepth = 100\n");
  ASSERT_EQ(run_tool("coupling --config " + cfg.string() + " --out " + (dir / "iid.csv").string()), 0);
  const auto rows = read_csv(dir / "iid.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_GT(num(rows[0], "survival_freq"), 0.5);
}

TEST(Commands, CouplingEstimateAndTune) {
  const auto dir = scratch();
  const auto est = write_config("est.ini",
                                "[coupling]\nmode = estimate\nlambda = 3\nk = 2\nt_bar = 1.5\nm = 3\nn0 = 4\n"
                                "nbar = 20\nreplicas = 500\n");
  ASSERT_EQ(run_tool("coupling --config " + est.string() + " --out " + (dir / "est.csv").string()), 0);
  const auto rows = read_csv(dir / "est.csv");
  ASSERT_EQ(rows.size(), 15u);
  std::vector<double> joint;
  for (const auto& r : rows)
    if (r.at("target") == "joint") joint.push_back(num(r, "successes"));
  ASSERT_EQ(joint.size(), 5u);
  EXPECT_LE(joint[3], joint[1]);
  EXPECT_LE(joint[4], joint[3]);
  EXPECT_LE(joint[1], joint[0]);

  const auto tune = write_config("tune.ini", "[coupling]\nmode = tune\ngraph = loop\nlambda = 2\nepsilon = 0.1\n");
  ASSERT_EQ(run_tool("coupling --config " + tune.string() + " --out " + (dir / "tune.csv").string()), 0);
  const auto t = read_csv(dir / "tune.csv");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_GE(num(t[0], "joint_p_hat"), 0.9);
  EXPECT_EQ(t[0].at("paths_H"), std::to_string(1));
}
