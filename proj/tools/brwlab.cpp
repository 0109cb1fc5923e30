// brwlab: configuration-driven runner for the branching random walk lab.
//
//   brwlab <command> --config FILE [--seed N] [--out PATH] [--manifest PATH] [--set key=value ...]
//   brwlab rerun SOURCE_MANIFEST [--out PATH] [--manifest PATH]
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 numerical
// non-convergence, 3 tuning failure.

#include "brwlab/runner.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace brwlab;

struct Invocation {
  std::string command;
  std::string config_path;
  std::string manifest_in;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest_out;
  std::vector<std::string> sets;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
}

Settings resolve(const Invocation& inv) {
  Settings s;
  if (!inv.manifest_in.empty()) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(inv.manifest_in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("manifest '" + inv.manifest_in + "' is not valid JSON: " + e.what());
    }
    s = settings_from_manifest(m);
  } else {
    const std::string text = inv.config_path.empty() ? std::string() : read_file(inv.config_path);
    s = load_settings(text, inv.command);
  }
  for (const auto& kv : inv.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    s.set(std::string(detail::trim(kv.substr(0, eq))), std::string(detail::trim(kv.substr(eq + 1))));
  }
  if (inv.seed) s.set("seed", std::to_string(*inv.seed));
  if (!inv.out.empty()) s.set("out", inv.out);
  s.seed();  // validate early
  return s;
}

int execute(const Invocation& inv) {
  Settings settings;
  try {
    settings = resolve(inv);
  } catch (const std::exception& e) {
    std::cerr << "brwlab: " << e.what() << '\n';
    return 1;
  }
  const std::string out_path = settings.raw("out");
  const std::string manifest_path = inv.manifest_out.empty() ? out_path + ".manifest.json" : inv.manifest_out;

  nlohmann::json manifest;
  manifest["tool"] = "brwlab";
  manifest["version"] = kVersion;
  manifest["command"] = settings.command();
  manifest["config"] = manifest_config(settings);
  manifest["threads"] = thread_count();
  manifest["started_at"] = utc_now();

  int code = 0;
  CommandOutput result;
  bool have_output = false;
  try {
    result = run_command(settings);
    have_output = true;
  } catch (const NonConvergence& e) {
    std::cerr << "brwlab: " << e.what() << '\n';
    code = 2;
    manifest["error"] = e.what();
    result.summary = e.summary;
    result.csv = e.csv;
    have_output = !e.csv.empty();
  } catch (const TuningFailure& e) {
    std::cerr << "brwlab: tuning failed: " << e.what() << '\n';
    code = 3;
    manifest["error"] = e.what();
  } catch (const SpectralError& e) {
    std::cerr << "brwlab: " << e.what() << '\n';
    code = 2;
    manifest["error"] = e.what();
  } catch (const std::invalid_argument& e) {
    // ConfigError, GraphError, CouplingError, PercolationError.
    std::cerr << "brwlab: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "brwlab: " << e.what() << '\n';
    return 1;
  }

  nlohmann::json outputs = nlohmann::json::array();
  try {
    if (have_output) {
      write_file(out_path, result.csv);
      outputs.push_back({{"path", out_path}, {"fnv1a64", content_digest(result.csv)}});
      for (const auto& [path, bytes] : result.extra) {
        write_file(path, bytes);
        outputs.push_back({{"path", path}, {"fnv1a64", content_digest(bytes)}});
      }
    }
    manifest["outputs"] = outputs;
    manifest["summary"] = result.summary;
    manifest["exit_code"] = code;
    manifest["finished_at"] = utc_now();
    write_file(manifest_path, manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "brwlab: " << e.what() << '\n';
    return 1;
  }
  if (code == 0) std::cerr << "brwlab: wrote " << out_path << " and " << manifest_path << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"brwlab: branching random walks, their truncations and percolation couplings"};
  app.require_subcommand(1);
  Invocation inv;

  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " pipeline");
    sub->add_option("--config", inv.config_path, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", inv.seed, "override the master seed");
    sub->add_option("--out", inv.out, "override the output CSV path");
    sub->add_option("--manifest", inv.manifest_out, "manifest path (default <out>.manifest.json)");
    sub->add_option("--set", inv.sets, "override one key, key=value (repeatable)");
    sub->callback([&inv, name] { inv.command = name; });
  }
  auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest");
  rerun->add_option("source", inv.manifest_in, "manifest written by an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  rerun->add_option("--out", inv.out, "override the output CSV path");
  rerun->add_option("--manifest", inv.manifest_out, "manifest path (default <out>.manifest.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  return execute(inv);
}
