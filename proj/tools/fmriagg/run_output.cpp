#include "run_output.hpp"

#include <algorithm>
#include <cstdio>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg::cli {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

RunOutput::RunOutput(std::filesystem::path dir, Dtype dtype) : dir_(std::move(dir)), dtype_(dtype) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
}

void RunOutput::text(const std::string& rel, const std::string& content) {
  write_file_bytes(path(rel), std::vector<std::uint8_t>(content.begin(), content.end()));
  record(rel);
}

void RunOutput::volume(const std::string& rel, const Volume4D& vol) {
  write_volume(vol, path(rel), dtype_);
  record(rel);
}

void RunOutput::matrix(const std::string& rel, const Eigen::MatrixXd& m) {
  write_matrix(m, path(rel), dtype_);
  record(rel);
}

void RunOutput::record(const std::string& rel) {
  const auto bytes = read_file_bytes(path(rel));
  artifacts_.push_back({rel, bytes.size(), fnv1a(bytes.data(), bytes.size())});
}

void RunOutput::volatile_text(const std::string& rel, const std::string& content) {
  write_file_bytes(path(rel), std::vector<std::uint8_t>(content.begin(), content.end()));
  volatile_.push_back(rel);
}

void RunOutput::finish(const Json& invocation, const RunConfig& cfg) const {
  Json m;
  m["tool"] = "fmriagg";
  m["format"] = 1;
  m["invocation"] = invocation;
  m["config"] = cfg.resolved;
  m["seeds"] = {{"run", cfg.seed},
                {"synth", cfg.synth.seed},
                {"srm", cfg.method.srm.seed},
                {"train", cfg.method.cae_train.seed},
                {"svm", cfg.svm.seed}};
  auto sorted = artifacts_;
  std::sort(sorted.begin(), sorted.end(), [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
  auto& arts = m["artifacts"] = Json::array();
  for (const auto& a : sorted) arts.push_back({{"path", a.path}, {"bytes", a.bytes}, {"fnv1a", hex64(a.hash)}});
  m["volatile"] = volatile_;
  const std::string text = m.dump(2) + "\n";
  write_file_bytes(dir_ / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace fmriagg::cli
