#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/dist.hpp"
#include "fmriagg/nncore.hpp"
#include "fmriagg/volume.hpp"

namespace fmriagg {

struct CaeConfig {
  int f = 5;
  int k1 = 20;
  int k3 = 20;
  SparsityConfig sparsity;
  double dropout = 0.5;

  void validate() const;
};

/// Multi-subject convolutional autoencoder.
///
///   L1  per-subject conv f^3, 1 -> k1, tanh, dropout
///   L2  mean over subjects
///   L3  1x1x1 conv k1 -> k3, tanh, dropout      (shared feature maps)
///   L4  per-subject conv f^3, k3 -> 1, affine   (reconstruction)
struct CaeModel {
  int m = 0;
  Dims3 dims;
  CaeConfig cfg;
  std::vector<Eigen::MatrixXd> enc;       // k1 x f^3
  std::vector<Eigen::VectorXd> enc_bias;  // k1
  Eigen::MatrixXd mix;                    // k3 x k1
  Eigen::VectorXd mix_bias;               // k3
  std::vector<Eigen::MatrixXd> dec;       // 1 x k3*f^3
  std::vector<Eigen::VectorXd> dec_bias;  // 1
  std::shared_ptr<const ConvGeometry> geom;

  void validate() const;
  std::size_t num_params() const;

  /// Parameter groups: enc_i, enc_bias_i for each subject, then mix, mix_bias,
  /// then dec_i, dec_bias_i for each subject. Matrices flatten column-major.
  ParamBlocks to_blocks() const;
  void from_blocks(const ParamBlocks& blocks);
};

CaeModel cae_init(int m, Dims3 dims, const CaeConfig& cfg, std::uint64_t seed);

/// Forward pass for one TR; `x[i]` is subject i's volume as a voxel vector.
struct CaeForward {
  std::vector<Eigen::MatrixXd> a1;   // V x k1 after tanh
  std::vector<Eigen::MatrixXd> d1;   // dropout multipliers (empty at inference)
  Eigen::MatrixXd pooled;            // V x k1
  Eigen::MatrixXd a3;                // V x k3 after tanh, before dropout
  Eigen::MatrixXd d3;
  Eigen::MatrixXd shared;            // V x k3, layer-3 output fed to the decoder
  std::vector<Eigen::VectorXd> xhat;
  bool train = false;
  std::uint64_t mask_checksum = 0;
};

/// `key` seeds the dropout masks of this sample; ignored when train is false.
CaeForward cae_forward(const CaeModel& model, std::span<const Eigen::VectorXd> x, bool train, std::uint64_t key);

/// Per-sample reconstruction error (1/m) sum_i ||x_i - xhat_i||^2.
double cae_reconstruction(std::span<const Eigen::VectorXd> x, const CaeForward& fwd);

/// Sum over the sample's layer-3 activations of (a+1)/2, and the count.
std::pair<double, double> cae_sparsity_stats(const CaeForward& fwd);

/// Gradient of one sample's reconstruction error plus `kl_slope` times the
/// sum of its layer-3 activations (the sample's share of the batch KL term).
ParamBlocks cae_sample_backward(const CaeModel& model, std::span<const Eigen::VectorXd> x, const CaeForward& fwd,
                                double kl_slope, std::uint64_t key);

/// The training set seen as samples: sample t is TR t of every subject.
class CaeData {
 public:
  explicit CaeData(std::vector<Volume4D> volumes);
  int subjects() const { return static_cast<int>(vols_.size()); }
  int samples() const { return vols_.front().trs(); }
  const Dims3& dims() const { return vols_.front().dims(); }
  std::vector<Eigen::VectorXd> sample(int t) const;

 private:
  std::vector<Volume4D> vols_;
};

struct CaeLoss {
  double total = 0;
  double reconstruction = 0;
  double kl = 0;         // lambda * D_KL
  double rho_hat = 0;
};

/// Batch loss: summed reconstruction error plus lambda * KL with rho_hat pooled
/// over the batch.
CaeLoss cae_loss(const CaeModel& model, const CaeData& data, std::span<const int> batch, bool train = false,
                 std::uint64_t seed = 0);

/// Gradients of cae_loss with respect to to_blocks() ordering.
struct CaeBatchGrad {
  CaeLoss loss;
  ParamBlocks grads;
};
CaeBatchGrad cae_backward(const CaeModel& model, const CaeData& data, std::span<const int> batch, bool train,
                          std::uint64_t seed);

/// Dropout key of a training sample.
std::uint64_t cae_sample_key(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample);

/// Trains in place through sync_sgd_run; samples are TRs.
TrainResult cae_train(CaeModel& model, const CaeData& data, const DistConfig& cfg);

/// Layer-3 maps of one subject without pooling, for each TR. Returns a list of
/// V x k3 matrices.
std::vector<Eigen::MatrixXd> cae_encode_heldout(const CaeModel& model, int subject, const Volume4D& vol);

/// Encodes M with subject i's path and decodes with subject j's, relative to
/// the response to an all-zero input.
Eigen::VectorXd cae_map_between_subjects(const CaeModel& model, int i, int j, const Eigen::VectorXd& m_volume);

void save_cae(const CaeModel& model, const std::string& dir);
CaeModel load_cae(const std::string& dir);

}  // namespace fmriagg
