#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/volume.hpp"

namespace fmriagg {

/// Parameter (or gradient) groups, one flat block per group.
using ParamBlocks = std::vector<Eigen::VectorXd>;

// ---------------------------------------------------------------------------
// 3D convolution
//
// Feature maps are (voxels x channels) matrices: column c is channel c, and
// within a column voxels are x-fastest, matching Volume4D. Filters are
// (C_out x C_in*f^3) with column c*f^3 + tap, tap = dx + f*(dy + f*dz) for
// offsets (dx,dy,dz) - (f-1)/2. Cross-correlation, zero same-padding, stride 1.
// ---------------------------------------------------------------------------

class ConvGeometry {
 public:
  ConvGeometry(Dims3 dims, int f);

  const Dims3& dims() const { return dims_; }
  int edge() const { return f_; }
  int taps() const { return taps_; }
  Eigen::Index voxels() const { return static_cast<Eigen::Index>(dims_.count()); }
  /// Linear index of voxel p shifted by tap offset, or -1 when out of bounds.
  int neighbor(Eigen::Index p, int tap) const { return nb_[static_cast<std::size_t>(p) * taps_ + tap]; }
  /// The tap with negated offset.
  int mirror(int tap) const { return taps_ - 1 - tap; }

 private:
  Dims3 dims_;
  int f_;
  int taps_;
  std::vector<int> nb_;
};

Eigen::MatrixXd conv3d_forward(const ConvGeometry& geom, const Eigen::MatrixXd& input, const Eigen::MatrixXd& filters,
                               const Eigen::VectorXd& bias);

struct ConvGrads {
  Eigen::MatrixXd input;    // empty when not requested
  Eigen::MatrixXd filters;
  Eigen::VectorXd bias;
};

ConvGrads conv3d_backward(const ConvGeometry& geom, const Eigen::MatrixXd& grad_out, const Eigen::MatrixXd& input,
                          const Eigen::MatrixXd& filters, bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Activations, dropout, sparsity
// ---------------------------------------------------------------------------

Eigen::MatrixXd tanh_forward(const Eigen::MatrixXd& x);
/// (1 - y^2) * grad, with y the forward output.
Eigen::MatrixXd tanh_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& grad);

/// Inverted-dropout multipliers: 0 with probability p, else 1/(1-p). Entry e
/// draws from mix(key, e), so a mask depends only on its key.
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t key);
Eigen::MatrixXd dropout_apply(const Eigen::MatrixXd& x, double p, bool train, std::uint64_t key);

struct SparsityConfig {
  double rho = 0.75;
  double lambda = 1.0;
  double clamp_eps = 1e-6;

  void validate() const;
};

/// KL(rho || rho_hat) for a Bernoulli target, from the pooled statistics of
/// tanh activations mapped to [0,1] by (a+1)/2.
struct KlTerm {
  double rho_hat = 0;     // after clamping
  bool clamped = false;
  double penalty = 0;     // D_KL, not yet multiplied by lambda
  double slope = 0;       // d penalty / d activation entry (same for all entries)
};

KlTerm kl_from_stats(double sum_unit, double count, const SparsityConfig& cfg);

struct KlSparsity {
  double penalty = 0;
  double rho_hat = 0;
  bool clamped = false;
  Eigen::MatrixXd grad;   // d penalty / d activations
};

KlSparsity kl_sparsity(const Eigen::MatrixXd& activations, const SparsityConfig& cfg);

// ---------------------------------------------------------------------------
// Optimizer and initialization
// ---------------------------------------------------------------------------

struct RmspropConfig {
  double decay = 0.9;
  double epsilon = 1e-6;
  double lr = 1e-3;

  void validate() const;
};

/// cache <- decay*cache + (1-decay) g^2 ; p <- p - lr * g / (sqrt(cache) + eps)
struct RmspropState {
  RmspropConfig cfg;
  ParamBlocks cache;  // zero-initialized on first step
};

void rmsprop_step(ParamBlocks& params, const ParamBlocks& grads, RmspropState& state);

/// First `num_filters` rows of a sign-normalized Q from the QR of a seeded
/// fan_in x fan_in Gaussian matrix.
Eigen::MatrixXd orthogonal_init(int num_filters, int fan_in, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Returns the loss and, when `grad` is non-null, writes the analytic gradient.
using LossWithGrad = std::function<double(const Eigen::VectorXd& params, Eigen::VectorXd* grad)>;

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  Eigen::Index worst_index = -1;
  bool passed = false;
};

/// Central differences with step h*(|p|+1). The relative error of entry i is
/// |a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max_j |n_j|, 1e-12).
GradCheckReport grad_check(const LossWithGrad& loss, const Eigen::VectorXd& params, double h = 1e-5,
                           double tolerance = 1e-6);

}  // namespace fmriagg
