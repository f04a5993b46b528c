#include "fmriagg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "fmriagg/error.hpp"

namespace fmriagg {

Coord coord_of(const Dims3& dims, std::size_t linear) {
  const auto x = static_cast<int>(linear % dims.x);
  linear /= dims.x;
  const auto y = static_cast<int>(linear % dims.y);
  const auto z = static_cast<int>(linear / dims.y);
  return {x, y, z};
}

int chebyshev(const Coord& a, const Coord& b) {
  return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)});
}

namespace {

void check_dims(const Dims3& dims) {
  if (dims.x < 1 || dims.y < 1 || dims.z < 1) {
    throw InvalidInput("volume dims must be >= 1, got " + std::to_string(dims.x) + "x" + std::to_string(dims.y) +
                       "x" + std::to_string(dims.z));
  }
}

}  // namespace

Volume4D::Volume4D(Dims3 dims, int trs) : Volume4D(dims, trs, std::vector<double>(dims.count() * std::max(trs, 0))) {}

Volume4D::Volume4D(Dims3 dims, int trs, std::vector<double> data) : dims_(dims), trs_(trs), data_(std::move(data)) {
  check_dims(dims_);
  if (trs_ < 1) throw InvalidInput("volume must have at least one TR");
  if (data_.size() != dims_.count() * static_cast<std::size_t>(trs_)) {
    throw InvalidInput("volume payload has " + std::to_string(data_.size()) + " values, expected " +
                       std::to_string(dims_.count() * trs_));
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw InvalidInput("volume contains a non-finite value");
  }
}

Eigen::VectorXd Volume4D::series(std::size_t v) const {
  Eigen::VectorXd out(trs_);
  for (int t = 0; t < trs_; ++t) out[t] = data_[v + voxels() * t];
  return out;
}

Volume4D volume_from_matrix(Dims3 dims, const Eigen::MatrixXd& m) {
  if (static_cast<std::size_t>(m.rows()) != dims.count()) {
    throw InvalidInput("matrix rows do not match voxel count");
  }
  std::vector<double> data(m.data(), m.data() + m.size());
  return {dims, static_cast<int>(m.cols()), std::move(data)};
}

BrainMask::BrainMask(Dims3 dims, std::vector<std::uint8_t> flags) : dims_(dims), flags_(std::move(flags)) {
  check_dims(dims_);
  if (flags_.size() != dims_.count()) throw InvalidInput("mask flag count does not match dims");
  for (std::size_t i = 0; i < flags_.size(); ++i) {
    if (flags_[i]) {
      flags_[i] = 1;
      indices_.push_back(i);
    }
  }
  if (indices_.empty()) throw InvalidInput("mask has no in-mask voxels");
}

BrainMask BrainMask::full(Dims3 dims) { return {dims, std::vector<std::uint8_t>(dims.count(), 1)}; }

BrainMask BrainMask::from_volume(const Volume4D& vol) {
  std::vector<std::uint8_t> flags(vol.voxels());
  const auto data = vol.data();
  for (std::size_t v = 0; v < flags.size(); ++v) flags[v] = data[v] != 0.0;
  return {vol.dims(), std::move(flags)};
}

std::vector<std::uint8_t> dilate(const Dims3& dims, std::span<const std::uint8_t> flags, int radius) {
  if (flags.size() != dims.count()) throw InvalidInput("dilate: flag count does not match dims");
  if (radius < 0) throw InvalidInput("dilate: negative radius");
  // Separable: a Chebyshev ball is a cube, so dilate one axis at a time.
  std::vector<std::uint8_t> cur(flags.begin(), flags.end());
  std::vector<std::uint8_t> next(cur.size());
  const int extent[3] = {dims.x, dims.y, dims.z};
  for (int axis = 0; axis < 3; ++axis) {
    std::fill(next.begin(), next.end(), 0);
    for (int z = 0; z < dims.z; ++z) {
      for (int y = 0; y < dims.y; ++y) {
        for (int x = 0; x < dims.x; ++x) {
          if (!cur[dims.index(x, y, z)]) continue;
          int c[3] = {x, y, z};
          const int lo = std::max(0, c[axis] - radius);
          const int hi = std::min(extent[axis] - 1, c[axis] + radius);
          for (int p = lo; p <= hi; ++p) {
            c[axis] = p;
            next[dims.index(c[0], c[1], c[2])] = 1;
          }
        }
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

std::vector<Searchlight> enumerate_searchlights(const BrainMask& mask, int edge, std::size_t min_vs) {
  if (edge < 1 || edge % 2 == 0) throw InvalidInput("searchlight edge must be odd and >= 1");
  if (mask.count() == 0) throw InvalidInput("empty mask");
  const int h = (edge - 1) / 2;
  const auto& dims = mask.dims();
  std::vector<Searchlight> out;
  out.reserve(mask.count());
  for (std::size_t c : mask.indices()) {
    Searchlight sl;
    sl.center = coord_of(dims, c);
    sl.edge = edge;
    for (int z = sl.center.z - h; z <= sl.center.z + h; ++z) {
      for (int y = sl.center.y - h; y <= sl.center.y + h; ++y) {
        for (int x = sl.center.x - h; x <= sl.center.x + h; ++x) {
          if (!dims.contains(x, y, z) || !mask.at(x, y, z)) continue;
          sl.voxels.push_back({x, y, z});
          sl.linear.push_back(dims.index(x, y, z));
        }
      }
    }
    if (sl.vs() >= min_vs) out.push_back(std::move(sl));
  }
  return out;
}

Eigen::MatrixXd extract_searchlight(const Volume4D& vol, const Searchlight& sl) {
  for (const auto& c : sl.voxels) {
    if (!vol.dims().contains(c.x, c.y, c.z)) throw InvalidInput("searchlight does not fit the volume dims");
  }
  const auto m = vol.matrix();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(sl.vs()), vol.trs());
  for (std::size_t r = 0; r < sl.vs(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(sl.linear[r]));
  return out;
}

Eigen::MatrixXd zscore_rows(const Eigen::MatrixXd& m) {
  if (m.cols() < 2) throw InvalidInput("z-scoring needs at least 2 time points");
  Eigen::MatrixXd out(m.rows(), m.cols());
  const double n = static_cast<double>(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mean = m.row(r).sum() / n;
    const Eigen::RowVectorXd centered = m.row(r).array() - mean;
    const double var = centered.squaredNorm() / n;
    // Relative floor so rounding noise on a constant series is not amplified.
    const double scale = std::max(1.0, mean * mean);
    if (var <= 1e-24 * scale) {
      out.row(r).setZero();
    } else {
      out.row(r) = centered / std::sqrt(var);
    }
  }
  return out;
}

Volume4D zscore(const Volume4D& vol) {
  if (vol.trs() < 2) throw InvalidInput("z-scoring needs d >= 2");
  // Row-major copy keeps each voxel's series contiguous.
  const Eigen::MatrixXd z = zscore_rows(vol.matrix());
  return volume_from_matrix(vol.dims(), z);
}

Volume4D downsample2(const Volume4D& vol) {
  const auto& in = vol.dims();
  const Dims3 out{(in.x + 1) / 2, (in.y + 1) / 2, (in.z + 1) / 2};
  std::vector<double> data(out.count() * vol.trs(), 0.0);
  std::vector<int> counts(out.count(), 0);
  for (int z = 0; z < in.z; ++z)
    for (int y = 0; y < in.y; ++y)
      for (int x = 0; x < in.x; ++x) ++counts[out.index(x / 2, y / 2, z / 2)];
  const auto src = vol.data();
  for (int t = 0; t < vol.trs(); ++t) {
    for (int z = 0; z < in.z; ++z) {
      for (int y = 0; y < in.y; ++y) {
        for (int x = 0; x < in.x; ++x) {
          data[out.index(x / 2, y / 2, z / 2) + out.count() * t] += src[in.index(x, y, z) + in.count() * t];
        }
      }
    }
    for (std::size_t v = 0; v < out.count(); ++v) data[v + out.count() * t] /= counts[v];
  }
  return {out, vol.trs(), std::move(data)};
}

BrainMask downsample2(const BrainMask& mask) {
  const auto& in = mask.dims();
  const Dims3 out{(in.x + 1) / 2, (in.y + 1) / 2, (in.z + 1) / 2};
  std::vector<std::uint8_t> flags(out.count(), 0);
  for (std::size_t v : mask.indices()) {
    const auto c = coord_of(in, v);
    flags[out.index(c.x / 2, c.y / 2, c.z / 2)] = 1;
  }
  return {out, std::move(flags)};
}

Volume4D slice_trs(const Volume4D& vol, int begin, int end) {
  if (begin < 0 || end > vol.trs() || begin >= end) throw InvalidInput("slice_trs: bad TR range");
  const auto src = vol.data();
  const std::size_t v = vol.voxels();
  std::vector<double> data(src.begin() + static_cast<std::ptrdiff_t>(v * begin),
                           src.begin() + static_cast<std::ptrdiff_t>(v * end));
  return {vol.dims(), end - begin, std::move(data)};
}

Eigen::MatrixXd masked_matrix(const Volume4D& vol, const BrainMask& mask) {
  if (!(vol.dims() == mask.dims())) throw InvalidInput("mask dims do not match volume dims");
  const auto m = vol.matrix();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(mask.count()), vol.trs());
  const auto& idx = mask.indices();
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

Volume4D unmask(const Eigen::MatrixXd& rows, const BrainMask& mask) {
  if (static_cast<std::size_t>(rows.rows()) != mask.count()) throw InvalidInput("unmask: row count does not match mask");
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mask.dims().count()), rows.cols());
  const auto& idx = mask.indices();
  for (std::size_t r = 0; r < idx.size(); ++r) full.row(static_cast<Eigen::Index>(idx[r])) = rows.row(static_cast<Eigen::Index>(r));
  return volume_from_matrix(mask.dims(), full);
}

}  // namespace fmriagg
