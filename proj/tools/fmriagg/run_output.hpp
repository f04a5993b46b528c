#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/svol.hpp"
#include "fmriagg/volume.hpp"
#include "run_config.hpp"

namespace fmriagg::cli {

/// Shortest round-trip text for a double.
std::string fmt(double v);

std::string hex64(std::uint64_t v);

/// Writes the artifacts of one run under a directory and records their
/// FNV-1a hashes for the manifest.
class RunOutput {
 public:
  RunOutput(std::filesystem::path dir, Dtype dtype);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& rel) const { return dir_ / rel; }

  void text(const std::string& rel, const std::string& content);
  void volume(const std::string& rel, const Volume4D& vol);
  void matrix(const std::string& rel, const Eigen::MatrixXd& m);
  /// Registers a file that was written directly under dir().
  void record(const std::string& rel);
  /// Written but left out of replay comparison (wall-clock timings).
  void volatile_text(const std::string& rel, const std::string& content);

  /// Writes manifest.json: invocation, resolved config, seeds, artifacts.
  void finish(const Json& invocation, const RunConfig& cfg) const;

 private:
  struct Artifact {
    std::string path;
    std::uint64_t bytes = 0;
    std::uint64_t hash = 0;
  };
  std::filesystem::path dir_;
  Dtype dtype_;
  std::vector<Artifact> artifacts_;
  std::vector<std::string> volatile_;
};

/// Hash of a file as recorded in manifests.
std::string file_hash(const std::filesystem::path& p);

}  // namespace fmriagg::cli
