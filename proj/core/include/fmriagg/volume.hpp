#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fmriagg {

struct Dims3 {
  int x = 1;
  int y = 1;
  int z = 1;

  std::size_t count() const { return static_cast<std::size_t>(x) * y * z; }
  bool contains(int cx, int cy, int cz) const {
    return cx >= 0 && cy >= 0 && cz >= 0 && cx < x && cy < y && cz < z;
  }
  std::size_t index(int cx, int cy, int cz) const {
    return static_cast<std::size_t>(cx) + static_cast<std::size_t>(x) * (cy + static_cast<std::size_t>(y) * cz);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Coord {
  int x = 0;
  int y = 0;
  int z = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

Coord coord_of(const Dims3& dims, std::size_t linear);
int chebyshev(const Coord& a, const Coord& b);

/// One subject's recording: vx*vy*vz voxels by d TRs.
///
/// Storage is x-fastest, then y, z and t last, so the payload viewed as a
/// column-major (voxels x TRs) matrix needs no copy.
class Volume4D {
 public:
  Volume4D() = default;
  Volume4D(Dims3 dims, int trs);  // zero-filled
  Volume4D(Dims3 dims, int trs, std::vector<double> data);

  const Dims3& dims() const { return dims_; }
  int trs() const { return trs_; }
  std::size_t voxels() const { return dims_.count(); }

  double at(int x, int y, int z, int t) const { return data_[dims_.index(x, y, z) + voxels() * t]; }
  std::span<const double> data() const { return data_; }

  /// voxels x TRs view of the payload.
  Eigen::Map<const Eigen::MatrixXd> matrix() const {
    return {data_.data(), static_cast<Eigen::Index>(voxels()), trs_};
  }

  /// Voxel time series for linear voxel index `v`.
  Eigen::VectorXd series(std::size_t v) const;

 private:
  Dims3 dims_{};
  int trs_ = 0;
  std::vector<double> data_;
};

/// Wraps a voxels x TRs matrix (rows in x-fastest order) as a volume.
Volume4D volume_from_matrix(Dims3 dims, const Eigen::MatrixXd& m);

class BrainMask {
 public:
  BrainMask() = default;
  BrainMask(Dims3 dims, std::vector<std::uint8_t> flags);

  static BrainMask full(Dims3 dims);
  /// Voxels whose first-TR value is non-zero.
  static BrainMask from_volume(const Volume4D& vol);

  const Dims3& dims() const { return dims_; }
  bool at(int x, int y, int z) const { return flags_[dims_.index(x, y, z)] != 0; }
  bool at(std::size_t linear) const { return flags_[linear] != 0; }
  std::size_t count() const { return indices_.size(); }
  /// In-mask linear voxel indices, ascending (x-fastest).
  const std::vector<std::size_t>& indices() const { return indices_; }
  std::span<const std::uint8_t> flags() const { return flags_; }

 private:
  Dims3 dims_{};
  std::vector<std::uint8_t> flags_;
  std::vector<std::size_t> indices_;
};

/// Chebyshev dilation of a mask by `radius` voxels (radius 0 is the identity).
std::vector<std::uint8_t> dilate(const Dims3& dims, std::span<const std::uint8_t> flags, int radius);

struct Searchlight {
  Coord center;
  int edge = 1;
  std::vector<Coord> voxels;          // in-bounds, in-mask, x-fastest order
  std::vector<std::size_t> linear;    // same voxels as linear indices

  std::size_t vs() const { return voxels.size(); }
};

/// One cube searchlight per in-mask voxel, centers ordered x, then y, then z.
/// Centers with fewer than `min_vs` voxels are dropped.
std::vector<Searchlight> enumerate_searchlights(const BrainMask& mask, int edge, std::size_t min_vs = 1);

/// Rows are the searchlight voxels' series in `sl.voxels` order (v_s x d).
Eigen::MatrixXd extract_searchlight(const Volume4D& vol, const Searchlight& sl);

/// Per-voxel z-scoring with population variance; constant series become zero.
Volume4D zscore(const Volume4D& vol);
/// Row-wise version of the same rule for a k x d matrix.
Eigen::MatrixXd zscore_rows(const Eigen::MatrixXd& m);

/// 2x2x2 spatial mean pooling; partial cells at odd edges average what exists.
Volume4D downsample2(const Volume4D& vol);
BrainMask downsample2(const BrainMask& mask);

/// TRs [begin, end) of a volume.
Volume4D slice_trs(const Volume4D& vol, int begin, int end);

/// In-mask rows of the voxels x TRs matrix, in mask index order.
Eigen::MatrixXd masked_matrix(const Volume4D& vol, const BrainMask& mask);
/// Inverse of masked_matrix; off-mask voxels are zero.
Volume4D unmask(const Eigen::MatrixXd& rows, const BrainMask& mask);

}  // namespace fmriagg
