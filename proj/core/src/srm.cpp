#include "fmriagg/srm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

namespace {

void check_inputs(std::span<const Eigen::MatrixXd> x, int k) {
  if (x.empty()) throw InvalidInput("SRM needs at least one subject");
  const auto v = x.front().rows();
  const auto d = x.front().cols();
  for (const auto& xi : x) {
    if (xi.rows() != v || xi.cols() != d) throw InvalidInput("SRM: all subjects must share the same v x d shape");
    if (!xi.allFinite()) throw InvalidInput("SRM: non-finite data");
  }
  if (k < 1) throw InvalidInput("SRM: k must be >= 1");
  if (v < k) throw InvalidInput("SRM: v (" + std::to_string(v) + ") < k (" + std::to_string(k) + ")");
}

std::vector<Eigen::MatrixXd> initial_maps(std::span<const Eigen::MatrixXd> x, const SrmConfig& cfg) {
  const auto v = x.front().rows();
  if (cfg.initial_w) {
    if (cfg.initial_w->size() != x.size()) throw InvalidInput("SRM: initial_w needs one matrix per subject");
    for (const auto& w : *cfg.initial_w) {
      if (w.rows() != v || w.cols() != cfg.k) throw InvalidInput("SRM: initial_w has the wrong shape");
    }
    return *cfg.initial_w;
  }
  std::vector<Eigen::MatrixXd> w;
  for (std::size_t i = 0; i < x.size(); ++i) w.push_back(random_orthonormal(v, cfg.k, derive_seed({cfg.seed, i})));
  return w;
}

bool converged(double prev, double cur, double tol) {
  if (cur <= 0) return true;
  return prev > 0 && std::abs(prev - cur) / prev < tol;
}

}  // namespace

double srm_objective(std::span<const Eigen::MatrixXd> w, const Eigen::MatrixXd& s, std::span<const Eigen::MatrixXd> x) {
  if (w.size() != x.size() || x.empty()) throw InvalidInput("srm_objective: subject count mismatch");
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i].rows() != x[i].rows() || w[i].cols() != s.rows() || s.cols() != x[i].cols()) {
      throw InvalidInput("srm_objective: shape mismatch for subject " + std::to_string(i));
    }
    total += (x[i] - w[i] * s).squaredNorm();
  }
  return total / static_cast<double>(x.size());
}

Eigen::MatrixXd update_shared(std::span<const Eigen::MatrixXd> w, std::span<const Eigen::MatrixXd> x) {
  if (w.size() != x.size() || x.empty()) throw InvalidInput("update_shared: subject count mismatch");
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(w.front().cols(), x.front().cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i].rows() != x[i].rows() || w[i].cols() != s.rows() || x[i].cols() != s.cols()) {
      throw InvalidInput("update_shared: shape mismatch for subject " + std::to_string(i));
    }
    s.noalias() += w[i].transpose() * x[i];
  }
  return s / static_cast<double>(x.size());
}

Eigen::MatrixXd procrustes(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw NumericalError("procrustes: non-finite input");
  if (a.rows() < a.cols()) throw InvalidInput("procrustes: need rows >= cols");
  // Well-conditioned A: U V^T = A (A^T A)^{-1/2} from a k x k eigensolve,
  // much cheaper than an SVD of the tall matrix.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a.transpose() * a);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  if (eig.info() == Eigen::Success && ev.size() > 0 && ev[0] > 1e-6 * ev[ev.size() - 1]) {
    const Eigen::MatrixXd& q = eig.eigenvectors();
    return a * (q * ev.cwiseSqrt().cwiseInverse().asDiagonal() * q.transpose());
  }
  // Jacobi SVD is deterministic; for zero singular values its U and V are
  // still completed to orthonormal bases, which the trace objective ignores.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

SrmModel fit_srm(std::span<const Eigen::MatrixXd> x, const SrmConfig& cfg) {
  check_inputs(x, cfg.k);
  SrmModel model;
  model.k = cfg.k;
  model.constrained = true;
  model.w = initial_maps(x, cfg);
  model.s = update_shared(model.w, x);
  model.objective_trace.push_back(srm_objective(model.w, model.s, x));
  for (int it = 0; it < cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < x.size(); ++i) model.w[i] = procrustes(x[i] * model.s.transpose());
    model.s = update_shared(model.w, x);
    const double obj = srm_objective(model.w, model.s, x);
    if (!std::isfinite(obj)) throw NumericalError("fit_srm: objective became non-finite");
    const double prev = model.objective_trace.back();
    model.objective_trace.push_back(obj);
    if (converged(prev, obj, cfg.tol)) break;
  }
  return model;
}

SrmModel fit_srm_unconstrained(std::span<const Eigen::MatrixXd> x, const SrmConfig& cfg) {
  check_inputs(x, cfg.k);
  SrmModel model;
  model.k = cfg.k;
  model.constrained = false;
  model.w = initial_maps(x, cfg);
  model.s = update_shared(model.w, x);
  model.objective_trace.push_back(srm_objective(model.w, model.s, x));
  const auto k = cfg.k;
  for (int it = 0; it < cfg.max_iters; ++it) {
    // W-step for the current S, then the tied encoder recomputes S.
    model.s = update_shared(model.w, x);
    const Eigen::MatrixXd sst = model.s * model.s.transpose();
    const double ridge = std::max(1e-8 * sst.trace() / k, 1e-300);
    const Eigen::LDLT<Eigen::MatrixXd> solver(sst + ridge * Eigen::MatrixXd::Identity(k, k));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Eigen::MatrixXd rhs = model.s * x[i].transpose();  // k x v
      model.w[i] = solver.solve(rhs).transpose();
    }
    const double obj = srm_objective(model.w, model.s, x);
    if (!std::isfinite(obj)) throw NumericalError("fit_srm_unconstrained: objective became non-finite");
    const double prev = model.objective_trace.back();
    model.objective_trace.push_back(obj);
    if (converged(prev, obj, cfg.tol) || obj <= 1e-30 * model.objective_trace.front()) break;
  }
  return model;
}

Eigen::MatrixXd project(const Eigen::MatrixXd& w_i, const Eigen::MatrixXd& x_heldout) {
  if (w_i.rows() != x_heldout.rows()) throw InvalidInput("project: voxel count mismatch");
  return w_i.transpose() * x_heldout;
}

Eigen::MatrixXd map_between_subjects(const Eigen::MatrixXd& w_j, const Eigen::MatrixXd& w_i, const Eigen::MatrixXd& x) {
  if (w_i.rows() != x.rows() || w_i.cols() != w_j.cols()) throw InvalidInput("map_between_subjects: shape mismatch");
  return w_j * (w_i.transpose() * x);
}

}  // namespace fmriagg
