#include <doctest.h>

#include <numeric>
#include <set>

#include "fmriagg/dist.hpp"
#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

using namespace fmriagg;

namespace {

// Least squares on scalar samples y_t = a * t: loss sum (p - y_t)^2 over the
// shard, so the mean gradient is 2 (p - mean y).
SgdProblem mean_problem(int samples, std::vector<int>* seen = nullptr) {
  SgdProblem p;
  p.samples = samples;
  p.gradient = [seen](const ParamBlocks& params, std::span<const int> shard, std::uint64_t, const Eigen::VectorXd&) {
    GradientBundle g;
    g.grads = {Eigen::VectorXd::Zero(1)};
    for (int t : shard) {
      const double r = params[0][0] - 0.1 * t;
      g.grads[0][0] += 2 * r;
      g.loss += r * r;
      if (seen) seen->push_back(t);
    }
    g.count = static_cast<double>(shard.size());
    return g;
  };
  return p;
}

}  // namespace

TEST_CASE("shard_minibatch") {
  std::vector<int> b(7);
  std::iota(b.begin(), b.end(), 0);
  const auto s = shard_minibatch(b, 4);
  REQUIRE(s.size() == 4);
  CHECK(s[0] == std::vector<int>{0, 1});
  CHECK(s[1] == std::vector<int>{2, 3});
  CHECK(s[2] == std::vector<int>{4, 5});
  CHECK(s[3] == std::vector<int>{6});
  CHECK(shard_minibatch(b, 1).front() == b);
  CHECK_THROWS_AS(shard_minibatch(b, 8), InvalidInput);
}

TEST_CASE("tree_reduce equals the serial sum") {
  Rng rng(1);
  for (int w : {1, 2, 3, 5, 8}) {
    std::vector<GradientBundle> bundles;
    GradientBundle serial{{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)}, 0, 0};
    for (int i = 0; i < w; ++i) {
      GradientBundle g{{gaussian_matrix(3, 1, rng), gaussian_matrix(2, 1, rng)}, double(i + 1), 0.5 * i};
      for (std::size_t b = 0; b < 2; ++b) serial.grads[b] += g.grads[b];
      serial.count += g.count;
      serial.loss += g.loss;
      bundles.push_back(g);
    }
    const GradientBundle t = tree_reduce(bundles);
    for (std::size_t b = 0; b < 2; ++b) CHECK((t.grads[b] - serial.grads[b]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(t.count == serial.count);
    CHECK(t.loss == doctest::Approx(serial.loss));
  }
  std::vector<Eigen::VectorXd> parts{Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2)};
  CHECK(tree_reduce(parts) == Eigen::VectorXd::Constant(2, 3));
  std::vector<GradientBundle> bad{{{Eigen::VectorXd::Zero(2)}, 1, 0}, {{Eigen::VectorXd::Zero(3)}, 1, 0}};
  CHECK_THROWS_AS(tree_reduce(bad), InvalidInput);
}

TEST_CASE("reduction rounds") {
  CHECK(reduction_rounds(1) == 0);
  CHECK(reduction_rounds(2) == 1);
  CHECK(reduction_rounds(3) == 2);
  CHECK(reduction_rounds(8) == 3);
  CHECK(reduction_rounds(9) == 4);
  const std::vector<int> ws{1, 4}, bs{10};
  const auto rows = speedup_report(ws, bs);
  CHECK(rows[1].messages == 3);
  CHECK(rows[1].max_shard == 3);
}

TEST_CASE("epoch batches cover every sample once") {
  for (bool shuffle : {false, true}) {
    const auto batches = epoch_batches(23, 5, 7, 2, shuffle);
    CHECK(batches.size() == 5);
    CHECK(batches.back().size() == 3);
    std::set<int> all;
    for (const auto& b : batches) all.insert(b.begin(), b.end());
    CHECK(all.size() == 23);
  }
  CHECK(epoch_batches(23, 5, 7, 2, true) == epoch_batches(23, 5, 7, 2, true));
  CHECK(epoch_batches(23, 5, 7, 2, true) != epoch_batches(23, 5, 7, 3, true));
}

TEST_CASE("one step divides the reduced gradient by the batch size") {
  DistConfig cfg;
  cfg.batch = 4;
  cfg.epochs = 1;
  cfg.shuffle = false;
  cfg.rmsprop.lr = 0.1;
  const SgdProblem p = mean_problem(4);
  const TrainResult r = sync_sgd_run({Eigen::VectorXd::Zero(1)}, p, cfg);
  REQUIRE(r.iterations.size() == 1);
  // Mean gradient 2 * (0 - 0.15) = -0.3; first RMSprop step moves by lr/sqrt(0.1).
  CHECK(r.iterations[0].grad_norm == doctest::Approx(0.3));
  CHECK(r.params[0][0] == doctest::Approx(0.1 * 0.3 / (std::sqrt(0.1 * 0.09) + 1e-6)));
}

TEST_CASE("workers give the same trajectory") {
  DistConfig cfg;
  cfg.batch = 8;
  cfg.epochs = 3;
  cfg.seed = 4;
  cfg.rmsprop.lr = 0.05;
  const SgdProblem p = mean_problem(29);
  cfg.workers = 1;
  const TrainResult ref = sync_sgd_run({Eigen::VectorXd::Zero(1)}, p, cfg);
  for (int w : {2, 4, 8}) {
    cfg.workers = w;
    const TrainResult r = sync_sgd_run({Eigen::VectorXd::Zero(1)}, p, cfg);
    REQUIRE(r.iterations.size() == ref.iterations.size());
    CHECK(std::abs(r.params[0][0] - ref.params[0][0]) < 1e-12);
    for (std::size_t i = 0; i < r.iterations.size(); ++i) {
      CHECK(r.iterations[i].loss == doctest::Approx(ref.iterations[i].loss).epsilon(1e-12));
      CHECK(r.iterations[i].rounds == reduction_rounds(r.iterations[i].active_workers));
    }
    // The final batch of 5 occupies at most 5 workers.
    CHECK(r.iterations.back().active_workers == std::min(w, 5));
  }
}

TEST_CASE("statistics phase feeds the gradient phase") {
  SgdProblem p = mean_problem(6);
  p.stats_size = 1;
  p.stats = [](const ParamBlocks&, std::span<const int> shard, std::uint64_t) {
    return Eigen::VectorXd::Constant(1, static_cast<double>(shard.size()));
  };
  auto base = p.gradient;
  std::vector<double> observed;
  p.gradient = [base, &observed](const ParamBlocks& params, std::span<const int> shard, std::uint64_t e,
                                 const Eigen::VectorXd& stats) {
    observed.push_back(stats[0]);
    return base(params, shard, e, stats);
  };
  p.batch_loss = [](const Eigen::VectorXd& stats) { return 100 * stats[0]; };
  DistConfig cfg;
  cfg.batch = 6;
  cfg.workers = 3;
  cfg.shuffle = false;
  const TrainResult r = sync_sgd_run({Eigen::VectorXd::Zero(1)}, p, cfg);
  for (double s : observed) CHECK(s == 6.0);
  CHECK(r.iterations[0].loss > 100.0);
}

TEST_CASE("config validation and error context") {
  DistConfig cfg;
  cfg.workers = 4;
  cfg.batch = 2;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  SgdProblem p = mean_problem(4);
  p.gradient = [](const ParamBlocks&, std::span<const int> shard, std::uint64_t, const Eigen::VectorXd&) {
    return GradientBundle{{Eigen::VectorXd::Constant(1, std::nan(""))}, double(shard.size()), 0};
  };
  DistConfig ok;
  ok.batch = 2;
  try {
    sync_sgd_run({Eigen::VectorXd::Zero(1)}, p, ok);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}
