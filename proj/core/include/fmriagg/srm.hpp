#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fmriagg {

/// Shared response model: X_i ~ W_i S with W_i (v x k) and S (k x d).
struct SrmModel {
  int k = 0;
  std::vector<Eigen::MatrixXd> w;
  Eigen::MatrixXd s;
  bool constrained = true;
  /// Objective at initialization followed by one value per iteration.
  std::vector<double> objective_trace;

  int subjects() const { return static_cast<int>(w.size()); }
  Eigen::Index voxels() const { return w.empty() ? 0 : w.front().rows(); }
};

struct SrmConfig {
  int k = 10;
  int max_iters = 10;
  double tol = 1e-6;  // relative objective decrease that stops the solver
  std::uint64_t seed = 0;
  /// Overrides the random orthonormal start (one v x k matrix per subject).
  std::optional<std::vector<Eigen::MatrixXd>> initial_w;
};

/// sum_i (1/m) ||X_i - W_i S||_F^2
double srm_objective(std::span<const Eigen::MatrixXd> w, const Eigen::MatrixXd& s, std::span<const Eigen::MatrixXd> x);

/// S = (1/m) sum_i W_i^T X_i
Eigen::MatrixXd update_shared(std::span<const Eigen::MatrixXd> w, std::span<const Eigen::MatrixXd> x);

/// argmax over orthonormal-column W of trace(W^T A), i.e. U V^T from the thin SVD of A.
Eigen::MatrixXd procrustes(const Eigen::MatrixXd& a);

/// Alternating solver for the orthonormality-constrained model.
SrmModel fit_srm(std::span<const Eigen::MatrixXd> x, const SrmConfig& cfg);

/// Tied-weight variant without the orthonormality constraint: ridge
/// least-squares W-step, S = (1/m) sum W_i^T X_i.
SrmModel fit_srm_unconstrained(std::span<const Eigen::MatrixXd> x, const SrmConfig& cfg);

/// S' = W_i^T X'
Eigen::MatrixXd project(const Eigen::MatrixXd& w_i, const Eigen::MatrixXd& x_heldout);

/// W_j W_i^T X', i.e. subject i's data expressed in subject j's voxel space.
Eigen::MatrixXd map_between_subjects(const Eigen::MatrixXd& w_j, const Eigen::MatrixXd& w_i, const Eigen::MatrixXd& x);

}  // namespace fmriagg
