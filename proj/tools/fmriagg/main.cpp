#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "fmriagg/error.hpp"
#include "run_config.hpp"

using namespace fmriagg;
using namespace fmriagg::cli;

namespace {

constexpr int kExitMismatch = 1;
constexpr int kExitSchema = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

int fail(int code, const std::string& kind, const std::string& message, const std::string& path = {}) {
  Json err = {{"code", code}, {"kind", kind}, {"message", message}};
  if (!path.empty()) err["path"] = path;
  std::cerr << Json{{"error", err}}.dump() << "\n";
  return code;
}

// "key.sub=value"; the value is read as JSON and falls back to a string.
void apply_set(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "--set expects key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  set_config_path(doc, key, value);
}

Json parse_grid(const std::string& text) {
  Json values = Json::array();
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      values.push_back(Json::parse(item));
    } catch (const Json::parse_error&) {
      values.push_back(item);
    }
  }
  return values;
}

struct CommonOptions {
  std::string config;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "Run config (JSON)");
  cmd->add_option("-o,--out", o.out, "Output directory (overrides output.dir)");
  cmd->add_option("-s,--set", o.sets, "Override a config value: key.path=json")->take_all();
}

Json user_config(const CommonOptions& o) {
  Json doc = o.config.empty() ? Json::object() : load_json_file(o.config);
  for (const auto& s : o.sets) apply_set(doc, s);
  return doc;
}

void report(const std::filesystem::path& dir) { std::cout << Json{{"status", "ok"}, {"dir", dir.string()}}.dump() << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-subject fMRI aggregation: SRM variants, autoencoders and evaluation"};
  app.require_subcommand(1);
  CommonOptions common;
  Invocation inv;

  struct Simple {
    const char* name;
    const char* help;
  };
  const Simple simple[] = {
      {"synth", "Generate a synthetic multi-subject dataset"},
      {"srm", "Fit a whole-brain SRM"},
      {"slsrm", "Fit an independent SRM in every searchlight"},
      {"mvae", "Train a multi-view autoencoder"},
      {"cae-train", "Train the convolutional autoencoder"},
      {"dispersion", "Compare between-subject map dispersion of WB-SRM, S-SRM and the CAE"},
  };
  for (const auto& s : simple) add_common(app.add_subcommand(s.name, s.help), common);

  auto* eval = app.add_subcommand("eval", "Evaluate a method");
  add_common(eval, common);
  eval->add_option("task", inv.task, "tsm | recall | wholebrain | dispersion")
      ->required()
      ->check(CLI::IsMember({"tsm", "recall", "wholebrain", "dispersion"}));

  auto* sweep = app.add_subcommand("sweep", "Time-segment matching over a one-dimensional parameter grid");
  add_common(sweep, common);
  std::string grid;
  sweep->add_option("--param", inv.sweep_param, "Dotted config path, e.g. method.cae.k1")->required();
  sweep->add_option("--values", grid, "Comma-separated values")->required();

  auto* rep = app.add_subcommand("replay", "Re-run a manifest and compare its artifacts");
  std::string manifest;
  std::optional<std::string> replay_out;
  rep->add_option("manifest", manifest, "Path to manifest.json")->required();
  rep->add_option("-o,--out", replay_out, "Output directory for the re-run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitSchema, "usage", e.what());
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    if (chosen == rep) {
      const ReplayReport r = replay(manifest, replay_out);
      std::cout << Json{{"status", r.mismatched.empty() ? "identical" : "mismatch"},
                        {"dir", r.dir.string()},
                        {"matched", r.matched},
                        {"mismatched", r.mismatched}}
                       .dump()
                << "\n";
      return r.mismatched.empty() ? 0 : kExitMismatch;
    }
    inv.command = chosen->get_name();
    if (chosen == sweep) {
      inv.sweep_values = parse_grid(grid);
      if (inv.sweep_values.empty()) throw ConfigError("/invocation/sweep_values", "empty sweep grid");
    }
    report(run_invocation(inv, user_config(common), common.out));
    return 0;
  } catch (const ConfigError& e) {
    return fail(kExitSchema, "config", e.what(), e.path());
  } catch (const InvalidInput& e) {
    return fail(kExitSchema, "invalid_input", e.what());
  } catch (const IoError& e) {
    return fail(kExitIo, "io", e.what());
  } catch (const FormatError& e) {
    return fail(kExitIo, "format", e.what());
  } catch (const NumericalError& e) {
    return fail(kExitNumerical, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}
