#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/volume.hpp"

namespace fmriagg {

/// Sample correlation. A zero-variance input gives 0.
double pearson(std::span<const double> a, std::span<const double> b);

struct MatchingConfig {
  int seg_len = 9;
  bool exclusion = true;

  void validate() const;
};

/// Pearson correlation of every test segment (rows) with every reference
/// segment (columns); segments are k x seg_len blocks flattened. Entries
/// where either segment has zero variance are NaN (undefined, never a match).
Eigen::MatrixXd segment_scores(const Eigen::MatrixXd& test, const Eigen::MatrixXd& ref, int seg_len);

/// Candidate set of test segment t: t itself plus, with exclusion on, every
/// start at least seg_len away.
bool is_candidate(int t, int s, const MatchingConfig& cfg);

/// Number of correctly located segments; argmax skips NaN and breaks ties
/// toward the smallest start.
int count_matches(const Eigen::MatrixXd& scores, const MatchingConfig& cfg);

double time_segment_match(const Eigen::MatrixXd& test, const Eigen::MatrixXd& ref, const MatchingConfig& cfg);

/// Mean over test segments of 1 / #candidates.
double chance_accuracy(int d_test, const MatchingConfig& cfg);

/// Sums score matrices over locations for whole-brain matching; undefined
/// entries contribute 0.
class ScoreAccumulator {
 public:
  void add(const Eigen::MatrixXd& scores);
  bool empty() const { return count_ == 0; }
  int locations() const { return count_; }
  const Eigen::MatrixXd& total() const { return sum_; }

 private:
  Eigen::MatrixXd sum_;
  int count_ = 0;
};

/// Whole-brain time-segment accuracy from per-location score matrices.
double whole_brain_aggregate(std::span<const Eigen::MatrixXd> scores, const MatchingConfig& cfg);

// ---------------------------------------------------------------------------
// Scene recall classification
// ---------------------------------------------------------------------------

struct SvmConfig {
  double lambda = 1e-3;   // L2 weight
  int epochs = 200;       // passes over the training set
  std::uint64_t seed = 0;

  void validate() const;
};

/// One-vs-rest linear max-margin classifier trained by stochastic subgradient
/// descent on the hinge loss (with a constant feature as the bias).
class LinearSvm {
 public:
  /// `x` is features x samples; labels in [0, classes).
  LinearSvm(const Eigen::MatrixXd& x, std::span<const int> labels, int classes, const SvmConfig& cfg);
  int predict(const Eigen::VectorXd& x) const;
  const Eigen::MatrixXd& weights() const { return w_; }

 private:
  Eigen::MatrixXd w_;  // classes x (features + 1)
};

double scene_recall_classify(const Eigen::MatrixXd& train_x, std::span<const int> train_labels,
                             const Eigen::MatrixXd& test_x, std::span<const int> test_labels, int classes,
                             const SvmConfig& cfg);

// ---------------------------------------------------------------------------
// Dispersion
// ---------------------------------------------------------------------------

struct DispersionReport {
  std::string method;
  int radius = 0;               // locality radius used for energy_inside
  double energy_inside = 0;     // fraction of sum M'^2 within the radius-dilated ROI
  int r95 = -1;                 // first dilation reaching 0.95 of the energy
  double dice = 0;              // |M'| >= 0.1 max|M'| against the ROI
  double total_energy = 0;
  std::vector<double> energy_curve;  // energy_inside at r = 0, 1, ...
};

/// ROI is a voxel flag vector over dims; mapped is M' over the same voxels.
DispersionReport dispersion_report(const Dims3& dims, std::span<const std::uint8_t> roi, const Eigen::VectorXd& mapped,
                                   int radius, std::string method = {});

/// Cube ROI of the given half-width around a center, clipped to the volume.
std::vector<std::uint8_t> cube_roi(const Dims3& dims, const Coord& center, int half_width);

}  // namespace fmriagg
