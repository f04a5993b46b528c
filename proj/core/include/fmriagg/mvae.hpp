#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/dist.hpp"
#include "fmriagg/nncore.hpp"

namespace fmriagg {

// Fully connected multi-view autoencoders. Inputs are per-subject v x n
// matrices whose columns are TRs; every column is an independent sample.

/// Tied weights: encoder W_i^T, decoder W_i, S = (1/m) sum_i W_i^T X_i.
struct LinearMvae {
  std::vector<Eigen::MatrixXd> w;  // v x k
  double dropout = 0.5;           // on S during training

  int subjects() const { return static_cast<int>(w.size()); }
  void validate() const;
  ParamBlocks to_blocks() const;
  void from_blocks(const ParamBlocks& blocks);
};

/// f_i(x) = tanh(E_i x + b_i), S = mean_i f_i(X_i), g_i(S) = D_i S + c_i,
/// or tanh(D_i S + c_i) with tanh_decoder.
struct NonlinearMvae {
  std::vector<Eigen::MatrixXd> enc;       // k x v
  std::vector<Eigen::VectorXd> enc_bias;  // k
  std::vector<Eigen::MatrixXd> dec;       // v x k
  std::vector<Eigen::VectorXd> dec_bias;  // v
  SparsityConfig sparsity;
  double dropout = 0.5;  // on f_i and on S during training
  bool tanh_decoder = false;

  int subjects() const { return static_cast<int>(enc.size()); }
  void validate() const;
  ParamBlocks to_blocks() const;
  void from_blocks(const ParamBlocks& blocks);
};

struct MvaeConfig {
  int k = 10;
  SparsityConfig sparsity;  // nonlinear only
  double dropout = 0.5;
  bool tanh_decoder = false;  // nonlinear only
  DistConfig train;         // samples are TRs

  void validate() const;
};

LinearMvae linear_mvae_init(int m, int v, int k, std::uint64_t seed);
NonlinearMvae nonlinear_mvae_init(int m, int v, int k, const MvaeConfig& cfg, std::uint64_t seed);

Eigen::MatrixXd mvae_shared(const LinearMvae& model, std::span<const Eigen::MatrixXd> x);
Eigen::MatrixXd mvae_shared(const NonlinearMvae& model, std::span<const Eigen::MatrixXd> x);

/// sum_i ||X_i - g_i(S)||_F^2, plus lambda * KL on S for the nonlinear model.
/// Inference mode (no dropout).
double mvae_loss(const LinearMvae& model, std::span<const Eigen::MatrixXd> x);
double mvae_loss(const NonlinearMvae& model, std::span<const Eigen::MatrixXd> x);

struct MvaeGrad {
  double loss = 0;
  ParamBlocks grads;  // to_blocks() ordering
};

/// Loss and gradient over all columns of x. With train on, column c uses the
/// dropout masks of keys[c].
MvaeGrad mvae_gradient(const LinearMvae& model, std::span<const Eigen::MatrixXd> x, bool train = false,
                       std::span<const std::uint64_t> keys = {});
MvaeGrad mvae_gradient(const NonlinearMvae& model, std::span<const Eigen::MatrixXd> x, bool train = false,
                       std::span<const std::uint64_t> keys = {});

struct LinearMvaeFit {
  LinearMvae model;
  TrainResult trace;
};
struct NonlinearMvaeFit {
  NonlinearMvae model;
  TrainResult trace;
};

LinearMvaeFit fit_linear_mvae(std::span<const Eigen::MatrixXd> x, const MvaeConfig& cfg);
NonlinearMvaeFit fit_nonlinear_mvae(std::span<const Eigen::MatrixXd> x, const MvaeConfig& cfg);

}  // namespace fmriagg
