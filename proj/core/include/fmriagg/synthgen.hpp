#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/volume.hpp"

namespace fmriagg {

/// Parameters of a synthetic multi-subject recording.
///
/// Every subject sees the same k_true latent time courses. Factors are dealt
/// round-robin to `regions` informative regions. The factors of a region are
/// the orthonormal columns of a random template over a box of radius
/// `topo_radius`; subject i sees the box around the region anchor moved by its
/// own jitter of at most `jitter` voxels per axis, so anatomical
/// correspondence is only approximate. Each subject's recording is centered per
/// voxel and scaled as a whole to unit mean variance.
struct SynthSpec {
  int m = 5;
  Dims3 dims{12, 12, 12};
  int d = 200;
  int k_true = 4;
  int topo_radius = 1;
  int jitter = 1;
  int regions = 1;
  double noise_sigma = 1.0;
  double smoothness = 0.5;   // AR(1) coefficient
  double signal_gain = 1.0;  // 0 turns every subject into pure noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthTruth {
  Eigen::MatrixXd shared;                        // k_true x d, rows z-scored
  std::vector<Coord> anchors;                    // per factor, its region anchor
  std::vector<std::vector<Coord>> centers;       // [subject][factor]
  std::vector<Eigen::MatrixXd> topographies;     // [subject] v x k_true, unit-norm local columns
};

struct SynthDataset {
  std::vector<Volume4D> subjects;
  SynthTruth truth;
};

Eigen::MatrixXd gen_shared_response(const SynthSpec& spec);
SynthDataset gen_dataset(const SynthSpec& spec);

/// Equal-width contiguous scenes: scene c covers TRs [floor(c*d/n), floor((c+1)*d/n)).
struct ScenePartition {
  int d = 0;
  int n_scenes = 0;
  std::vector<int> labels;  // per TR
  std::vector<int> starts;  // n_scenes + 1 boundaries
};

ScenePartition scene_partition(int d, int n_scenes);

/// Averages the columns of `m` (rows x d) within each scene.
Eigen::MatrixXd average_by_scene(const Eigen::MatrixXd& m, const ScenePartition& scenes);

/// Labeled recall analogue: each subject's re-recording of the same shared
/// response with fresh noise, averaged within scenes.
struct SceneRecallSet {
  ScenePartition scenes;
  Eigen::MatrixXd targets;                // k_true x n_scenes, scene-averaged shared response
  std::vector<Eigen::MatrixXd> recall;    // [subject] voxels x n_scenes
};

SceneRecallSet gen_scene_labels(const SynthSpec& spec, int n_scenes);

}  // namespace fmriagg
