#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "fmriagg/eval.hpp"
#include "fmriagg/methods.hpp"
#include "fmriagg/svol.hpp"
#include "fmriagg/synthgen.hpp"

namespace fmriagg::cli {

using Json = nlohmann::ordered_json;

/// Schema violation in a run config; `path` is a JSON pointer to the culprit.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what) : std::runtime_error(what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct RoiSpec {
  Coord center{6, 6, 6};
  int half_width = 1;
  int from = 0;
  int to = 1;
};

/// Typed view of a resolved run config.
struct RunConfig {
  Json resolved;  // defaults merged with the user document
  std::uint64_t seed = 0;

  std::string data_source = "synth";  // "synth" or "dir"
  std::string data_dir;
  SynthSpec synth;
  int n_scenes = 10;

  MethodConfig method;
  Exp1Config exp1;
  SvmConfig svm;
  RoiSpec roi;

  std::string out_dir;
  Dtype dtype = Dtype::f64;
};

/// Every key with its default value. User documents may only use these keys.
Json default_config();

/// Merges `user` onto the defaults, rejecting unknown keys and type changes,
/// then converts to the typed view and validates it.
RunConfig resolve_config(const Json& user);

/// Reads and parses a JSON file (IoError / ConfigError on failure).
Json load_json_file(const std::string& path);

/// Sets the value at a dotted path ("method.cae.k1") in a config document.
void set_config_path(Json& doc, const std::string& dotted, const Json& value);

}  // namespace fmriagg::cli
