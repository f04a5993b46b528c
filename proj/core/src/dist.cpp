#include "fmriagg/dist.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <string>

#include <json.hpp>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

void DistConfig::validate() const {
  if (workers < 1) throw InvalidInput("workers must be >= 1");
  if (batch < 1) throw InvalidInput("batch size must be >= 1");
  if (batch < workers) {
    throw InvalidInput("batch size " + std::to_string(batch) + " is smaller than the worker count " +
                       std::to_string(workers));
  }
  if (epochs < 0) throw InvalidInput("epochs must be >= 0");
  rmsprop.validate();
}

std::vector<std::vector<int>> shard_minibatch(std::span<const int> batch, int workers) {
  if (workers < 1) throw InvalidInput("shard_minibatch: workers must be >= 1");
  if (batch.size() < static_cast<std::size_t>(workers)) {
    throw InvalidInput("shard_minibatch: " + std::to_string(batch.size()) + " samples for " +
                       std::to_string(workers) + " workers");
  }
  const std::size_t n = batch.size();
  const std::size_t w = static_cast<std::size_t>(workers);
  std::vector<std::vector<int>> shards(w);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < w; ++i) {
    const std::size_t len = n / w + (i < n % w ? 1 : 0);
    shards[i].assign(batch.begin() + static_cast<std::ptrdiff_t>(pos),
                     batch.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return shards;
}

int reduction_rounds(int workers) {
  if (workers < 1) throw InvalidInput("reduction_rounds: workers must be >= 1");
  int rounds = 0;
  while ((1 << rounds) < workers) ++rounds;
  return rounds;
}

namespace {

void absorb(GradientBundle& into, const GradientBundle& from) {
  if (into.grads.size() != from.grads.size()) throw InvalidInput("tree_reduce: bundles have different block counts");
  for (std::size_t b = 0; b < into.grads.size(); ++b) {
    if (into.grads[b].size() != from.grads[b].size()) {
      throw InvalidInput("tree_reduce: block " + std::to_string(b) + " shape mismatch");
    }
    into.grads[b] += from.grads[b];
  }
  into.count += from.count;
  into.loss += from.loss;
}

template <class T, class Absorb>
T tree_sum(std::vector<T> parts, Absorb&& absorb_fn) {
  if (parts.empty()) throw InvalidInput("tree_reduce: no inputs");
  const std::size_t n = parts.size();
  for (std::size_t stride = 1; stride < n; stride *= 2) {
    for (std::size_t w = 0; w + stride < n; w += 2 * stride) absorb_fn(parts[w], parts[w + stride]);
  }
  return std::move(parts.front());
}

}  // namespace

GradientBundle tree_reduce(std::vector<GradientBundle> bundles) { return tree_sum(std::move(bundles), absorb); }

Eigen::VectorXd tree_reduce(std::vector<Eigen::VectorXd> parts) {
  return tree_sum(std::move(parts), [](Eigen::VectorXd& into, const Eigen::VectorXd& from) {
    if (into.size() != from.size()) throw InvalidInput("tree_reduce: statistics length mismatch");
    into += from;
  });
}

std::vector<std::vector<int>> epoch_batches(int samples, int batch, std::uint64_t seed, int epoch, bool shuffle) {
  if (samples < 1) throw InvalidInput("no training samples");
  if (batch < 1) throw InvalidInput("batch size must be >= 1");
  std::vector<int> order(static_cast<std::size_t>(samples));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(derive_seed({seed, 0x5348u, static_cast<std::uint64_t>(epoch)}));
    // Fisher-Yates with our own index draw: std::shuffle's use of the engine
    // is implementation-defined, and batch order must be portable.
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(order[i], order[j]);
    }
  }
  std::vector<std::vector<int>> out;
  for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(batch));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

namespace {

bool bit_identical(const ParamBlocks& a, const ParamBlocks& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), sizeof(double) * static_cast<std::size_t>(a[i].size())) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TrainResult sync_sgd_run(const ParamBlocks& init, const SgdProblem& problem, const DistConfig& cfg) {
  cfg.validate();
  if (!problem.gradient) throw InvalidInput("sync_sgd_run: missing gradient callback");
  if (problem.stats_size > 0 && !problem.stats) throw InvalidInput("sync_sgd_run: missing statistics callback");

  std::vector<ParamBlocks> replicas(static_cast<std::size_t>(cfg.workers), init);
  RmspropState opt{cfg.rmsprop, {}};
  TrainResult result;
  int iteration = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0;
    int epoch_samples = 0;
    for (const auto& batch : epoch_batches(problem.samples, cfg.batch, cfg.seed, epoch, cfg.shuffle)) {
      // A short final batch only occupies as many workers as it has samples.
      const int active = std::min<int>(cfg.workers, static_cast<int>(batch.size()));
      const auto shards = shard_minibatch(batch, active);
      const auto ep = static_cast<std::uint64_t>(epoch);
      try {
        Eigen::VectorXd stats;
        if (problem.stats_size > 0) {
          std::vector<Eigen::VectorXd> parts;
          for (int w = 0; w < active; ++w) parts.push_back(problem.stats(replicas[w], shards[w], ep));
          stats = tree_reduce(std::move(parts));
          if (stats.size() != problem.stats_size) throw InvalidInput("statistics callback returned the wrong length");
        }
        std::vector<GradientBundle> bundles;
        for (int w = 0; w < active; ++w) bundles.push_back(problem.gradient(replicas[w], shards[w], ep, stats));
        GradientBundle total = tree_reduce(std::move(bundles));
        if (problem.end_step) problem.end_step();

        const double b = static_cast<double>(batch.size());
        if (total.count != b) throw InvalidInput("shard sample counts do not add up to the batch size");
        double loss = total.loss;
        if (problem.batch_loss) loss += problem.batch_loss(stats);

        double sq = 0;
        for (auto& g : total.grads) {
          g /= b;
          sq += g.squaredNorm();
        }
        ParamBlocks next = replicas.front();
        rmsprop_step(next, total.grads, opt);
        for (auto& r : replicas) r = next;
        for (const auto& r : replicas) {
          if (!bit_identical(r, next)) throw NumericalError("replica diverged after broadcast");
        }

        IterationTrace tr;
        tr.epoch = epoch;
        tr.iteration = iteration++;
        tr.batch_size = static_cast<int>(batch.size());
        tr.active_workers = active;
        tr.loss = loss / b;
        tr.grad_norm = std::sqrt(sq);
        tr.rounds = reduction_rounds(active);
        result.iterations.push_back(tr);
        epoch_loss += loss;
        epoch_samples += static_cast<int>(batch.size());
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration) + ": " +
                             e.what());
      } catch (const InvalidInput& e) {
        throw InvalidInput("epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration) + ": " +
                           e.what());
      }
    }
    result.epoch_loss.push_back(epoch_loss / epoch_samples);
  }
  result.params = replicas.front();
  return result;
}

std::vector<SpeedupRow> speedup_report(std::span<const int> workers, std::span<const int> batches) {
  std::vector<SpeedupRow> rows;
  for (int b : batches) {
    for (int w : workers) {
      if (w < 1 || b < w) throw InvalidInput("speedup_report: need 1 <= workers <= batch");
      rows.push_back({w, b, reduction_rounds(w), w - 1, (b + w - 1) / w});
    }
  }
  return rows;
}

std::string traces_json(const TrainResult& result) {
  nlohmann::ordered_json j;
  j["epoch_loss"] = result.epoch_loss;
  auto& its = j["iterations"] = nlohmann::ordered_json::array();
  for (const auto& t : result.iterations) {
    its.push_back({{"epoch", t.epoch},
                   {"iteration", t.iteration},
                   {"batch_size", t.batch_size},
                   {"workers", t.active_workers},
                   {"loss", t.loss},
                   {"grad_norm", t.grad_norm},
                   {"reduction_rounds", t.rounds}});
  }
  return j.dump(2);
}

}  // namespace fmriagg
