#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/volume.hpp"

namespace fmriagg {

/// SVOL1 layout:
///   bytes 0..4   magic "SVOL1"
///   bytes 5..8   little-endian uint32 header length n
///   bytes 9..    n bytes of UTF-8 JSON
///                {"dims":[vx,vy,vz,d],"dtype":"f32"|"f64","order":"xyzt","endian":"little"}
///   then         raw little-endian payload, x fastest, t slowest
enum class Dtype { f32, f64 };

inline constexpr char kSvolMagic[] = "SVOL1";
inline constexpr std::size_t kSvolMagicSize = 5;

struct SvolHeader {
  std::int64_t dims[4] = {1, 1, 1, 1};
  Dtype dtype = Dtype::f64;

  std::size_t element_count() const;
  std::size_t element_size() const { return dtype == Dtype::f32 ? 4 : 8; }
};

/// Serialized bytes for a header plus payload; exposed for tests and hashing.
std::vector<std::uint8_t> encode_svol(const SvolHeader& header, const std::vector<double>& values);
/// Parses a full SVOL1 buffer. Throws FormatError with the failing byte offset.
std::pair<SvolHeader, std::vector<double>> decode_svol(const std::vector<std::uint8_t>& bytes);

void write_volume(const Volume4D& vol, const std::filesystem::path& path, Dtype dtype = Dtype::f64);
Volume4D read_volume(const std::filesystem::path& path);

/// Matrices are stored with dims [rows, cols, 1, 1] (column-major == x fastest).
void write_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path, Dtype dtype = Dtype::f64);
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

void write_mask(const BrainMask& mask, const std::filesystem::path& path);
BrainMask read_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace fmriagg
