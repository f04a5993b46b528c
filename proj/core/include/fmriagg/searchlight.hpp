#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/srm.hpp"
#include "fmriagg/volume.hpp"

namespace fmriagg {

/// Independent SRM per searchlight (S-SRM).
struct SearchlightModelSet {
  int edge = 0;
  std::vector<Searchlight> centers;  // retained centers, x-then-y-then-z order
  std::vector<Coord> skipped;        // centers with v_s < min_vs
  std::vector<SrmModel> models;      // one per retained center
};

/// Order-free per-center seed: base_seed XOR a hash of the center coordinates.
std::uint64_t center_seed(std::uint64_t base_seed, const Coord& c);

/// `min_vs` defaults to cfg.k; centers below it are skipped and recorded.
SearchlightModelSet fit_s_srm(std::span<const Volume4D> vols, const BrainMask& mask, int edge, const SrmConfig& cfg,
                              std::size_t min_vs = 0);

/// Plain searchlight baseline: no factorization, windows are matched in voxel space.
class SlBaseline {
 public:
  SlBaseline(std::vector<Volume4D> vols, const BrainMask& mask, int edge, std::size_t min_vs = 1);

  int edge() const { return edge_; }
  const std::vector<Searchlight>& centers() const { return centers_; }
  int subjects() const { return static_cast<int>(vols_->size()); }
  /// v_s x d window of subject i at retained center c.
  Eigen::MatrixXd window(std::size_t c, int subject) const;

 private:
  int edge_;
  std::shared_ptr<const std::vector<Volume4D>> vols_;
  std::vector<Searchlight> centers_;
};

SlBaseline fit_sl_baseline(std::vector<Volume4D> vols, const BrainMask& mask, int edge, std::size_t min_vs = 1);

/// Local accuracy assigned to searchlight (or filter-support) centers.
struct AccuracyMap {
  static constexpr double kSentinel = -1.0;

  Dims3 dims;
  std::vector<double> values;  // kSentinel where no center exists

  double at(const Coord& c) const { return values[dims.index(c.x, c.y, c.z)]; }
  std::size_t center_count() const;
};

/// Accuracies below `threshold` are written as 0; non-centers keep the sentinel.
AccuracyMap assemble_accuracy_map(std::span<const Coord> centers, std::span<const double> accuracies, Dims3 dims,
                                  double threshold);

/// Mean of the ceil(frac * #centers) largest center values.
double top_fraction_summary(const AccuracyMap& map, double frac);

Volume4D accuracy_volume(const AccuracyMap& map);

/// Sum of each searchlight's local W_j W_i^T M over its own window (S-SRM
/// between-subject mapping of a whole-volume map).
Eigen::VectorXd ssrm_map_between_subjects(const SearchlightModelSet& set, int from, int to, const Eigen::VectorXd& map);

}  // namespace fmriagg
