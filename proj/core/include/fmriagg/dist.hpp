#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmriagg/nncore.hpp"

namespace fmriagg {

struct DistConfig {
  int workers = 1;
  int batch = 10;
  int epochs = 1;
  RmspropConfig rmsprop;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

struct GradientBundle {
  ParamBlocks grads;
  double count = 0;
  double loss = 0;
};

/// Contiguous shards whose sizes differ by at most one, larger shards first.
std::vector<std::vector<int>> shard_minibatch(std::span<const int> batch, int workers);

/// Binomial-tree sum: in round r, worker w with w mod 2^(r+1) == 0 absorbs
/// worker w + 2^r. Sums gradients, counts and losses.
GradientBundle tree_reduce(std::vector<GradientBundle> bundles);

/// Same tree over plain vectors; used for batch statistics.
Eigen::VectorXd tree_reduce(std::vector<Eigen::VectorXd> parts);

int reduction_rounds(int workers);

/// What the trainer needs from a model. Each call gets an explicit parameter
/// set (the calling worker's replica) and the samples of one shard.
struct SgdProblem {
  int samples = 0;
  /// Size of the batch statistics vector; 0 skips the statistics phase.
  int stats_size = 0;
  std::function<Eigen::VectorXd(const ParamBlocks& params, std::span<const int> shard, std::uint64_t epoch)> stats;
  /// Summed gradient and summed loss over the shard, given the reduced batch
  /// statistics.
  std::function<GradientBundle(const ParamBlocks& params, std::span<const int> shard, std::uint64_t epoch,
                               const Eigen::VectorXd& batch_stats)>
      gradient;
  /// Loss contributed once per batch from the statistics (e.g. a sparsity term).
  std::function<double(const Eigen::VectorXd& batch_stats)> batch_loss;
  /// Called after the last worker of a step; lets a model drop cached state.
  std::function<void()> end_step;
};

struct IterationTrace {
  int epoch = 0;
  int iteration = 0;
  int batch_size = 0;
  int active_workers = 0;
  double loss = 0;        // batch loss divided by batch size
  double grad_norm = 0;   // norm of the applied (mean) gradient
  int rounds = 0;
};

struct TrainResult {
  ParamBlocks params;
  std::vector<IterationTrace> iterations;
  std::vector<double> epoch_loss;  // mean per-sample loss over each epoch
};

/// Synchronous data-parallel training. Workers are simulated in sequence, each
/// holding its own replica; the reduced gradient is divided by the batch size,
/// one RMSprop step updates the root replica and the result is broadcast.
TrainResult sync_sgd_run(const ParamBlocks& init, const SgdProblem& problem, const DistConfig& cfg);

/// Batches of one epoch: a seeded permutation cut into consecutive chunks.
std::vector<std::vector<int>> epoch_batches(int samples, int batch, std::uint64_t seed, int epoch, bool shuffle);

struct SpeedupRow {
  int workers = 0;
  int batch = 0;
  int rounds = 0;
  int messages = 0;
  int max_shard = 0;
};
std::vector<SpeedupRow> speedup_report(std::span<const int> workers, std::span<const int> batches);

std::string traces_json(const TrainResult& result);

}  // namespace fmriagg
