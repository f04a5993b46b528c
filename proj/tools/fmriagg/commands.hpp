#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "run_config.hpp"

namespace fmriagg::cli {

/// What to run. Stored verbatim in the manifest so a run can be replayed.
struct Invocation {
  std::string command;     // synth | srm | slsrm | mvae | cae-train | eval | sweep | dispersion
  std::string task;        // eval: tsm | recall | wholebrain | dispersion
  std::string sweep_param; // dotted config path
  Json sweep_values = Json::array();

  Json to_json() const;
  static Invocation from_json(const Json& j);
};

/// Runs one invocation against a user config document and returns the
/// output directory. `out_override` replaces output.dir.
std::filesystem::path run_invocation(const Invocation& inv, Json user_config,
                                     const std::optional<std::string>& out_override);

struct ReplayReport {
  std::filesystem::path dir;
  int matched = 0;
  std::vector<std::string> mismatched;
};

/// Re-runs the invocation recorded in a manifest into a fresh directory and
/// compares every non-volatile artifact hash.
ReplayReport replay(const std::filesystem::path& manifest, const std::optional<std::string>& out_override);

}  // namespace fmriagg::cli
