#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/cae.hpp"
#include "fmriagg/eval.hpp"
#include "fmriagg/mvae.hpp"
#include "fmriagg/searchlight.hpp"
#include "fmriagg/srm.hpp"
#include "fmriagg/synthgen.hpp"
#include "fmriagg/volume.hpp"

namespace fmriagg {

// The experiments run every feature source through one interface: a method
// fitted on training TRs yields, for a subject's recording, a k x d feature
// matrix at each of its locations (searchlight centers, feature-map voxels, or
// the single whole-brain location of the global methods).

enum class Method { wbsrm, ssrm, sl, voxel, cae, mvae_linear, mvae_nonlinear };

std::string method_name(Method m);
/// Accepts the names returned by method_name; throws InvalidInput otherwise.
Method parse_method(const std::string& name);

struct MethodConfig {
  Method method = Method::ssrm;
  SrmConfig srm;           // k, iterations and seed of WB-SRM and S-SRM
  int edge = 5;            // searchlight edge for S-SRM and SL
  std::size_t min_vs = 0;  // 0 means srm.k for S-SRM and 1 otherwise
  CaeConfig cae;
  DistConfig cae_train = [] {  // its seed also initializes the weights
    DistConfig c;
    c.epochs = 5;
    return c;
  }();
  MvaeConfig mvae;

  void validate() const;
};

/// Per-location features of one subject's recording.
using Encoding = std::function<Eigen::MatrixXd(std::size_t location)>;

class FittedMethod {
 public:
  virtual ~FittedMethod() = default;
  virtual Method method() const = 0;
  virtual int subjects() const = 0;
  /// Location centers; global methods report the volume center once.
  virtual const std::vector<Coord>& centers() const = 0;
  virtual Encoding encode(int subject, const Volume4D& data) const = 0;
  /// Whole-volume map M of subject `from` expressed in subject `to`'s space.
  virtual Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const = 0;
  /// Chebyshev bound on how far map_between moves energy; -1 if unbounded.
  virtual int locality_radius() const = 0;
  /// Training trace of the gradient-trained methods (empty otherwise).
  virtual const TrainResult* trace() const { return nullptr; }
};

std::unique_ptr<FittedMethod> fit_method(const MethodConfig& cfg, std::span<const Volume4D> train,
                                         const BrainMask& mask);

struct Exp1Config {
  MatchingConfig matching;
  double top_fraction = 0.005;
  double map_threshold = 0.0;

  void validate() const;
};

struct Exp1Result {
  Method method = Method::ssrm;
  std::vector<Coord> centers;
  std::vector<double> location_accuracy;  // mean over folds and held-out subjects
  AccuracyMap map;
  double top_accuracy = 0;   // top-fraction summary of the map
  double mean = 0;           // over subjects of their own top-fraction summary
  double sem = 0;            // standard error of that mean
  double best_location = 0;  // max of location_accuracy
  double whole_brain = 0;    // score-sum aggregate, mean over folds and subjects
  double chance = 0;
};

/// Two-fold over TR halves, leave-one-subject-out matching at every location,
/// and the whole-brain score aggregate from the same score matrices.
Exp1Result run_exp1(std::span<const Volume4D> subjects, const BrainMask& mask, const MethodConfig& method,
                    const Exp1Config& cfg);

struct Exp2Result {
  Method method = Method::ssrm;
  std::vector<Coord> centers;
  std::vector<double> location_accuracy;  // mean over held-out subjects
  double best_location = 0;
  double whole_brain = 0;  // concatenated features, mean over held-out subjects
  double whole_brain_sem = 0;
  double chance = 0;
};

/// Fits on the movie recordings, encodes each subject's scene-averaged recall
/// and classifies scenes leave-one-subject-out.
Exp2Result run_exp2(std::span<const Volume4D> movie, const SceneRecallSet& recall, const BrainMask& mask,
                    const MethodConfig& method, const SvmConfig& svm);

/// Maps an ROI indicator from subject i to subject j with a fitted method.
DispersionReport dispersion_experiment(const FittedMethod& fitted, const Dims3& dims,
                                       std::span<const std::uint8_t> roi, int i, int j);

/// The synthetic dataset used throughout the test suite and the CLI defaults.
SynthSpec standard_synth_spec(std::uint64_t seed);

}  // namespace fmriagg
