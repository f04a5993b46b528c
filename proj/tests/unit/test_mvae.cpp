#include <doctest.h>

#include <cmath>

#include "fmriagg/error.hpp"
#include "fmriagg/methods.hpp"
#include "fmriagg/mvae.hpp"
#include "fmriagg/rng.hpp"
#include "fmriagg/srm.hpp"

using namespace fmriagg;

namespace {

Eigen::VectorXd pack(const ParamBlocks& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.size();
  Eigen::VectorXd out(n);
  Eigen::Index pos = 0;
  for (const auto& b : blocks) out.segment(pos, b.size()) = b, pos += b.size();
  return out;
}

ParamBlocks unpack(const Eigen::VectorXd& flat, const ParamBlocks& like) {
  ParamBlocks out = like;
  Eigen::Index pos = 0;
  for (auto& b : out) b = flat.segment(pos, b.size()), pos += b.size();
  return out;
}

template <class Model>
GradCheckReport check_model(const Model& model, const std::vector<Eigen::MatrixXd>& x, bool train,
                            const std::vector<std::uint64_t>& keys) {
  const ParamBlocks like = model.to_blocks();
  auto loss = [&](const Eigen::VectorXd& p, Eigen::VectorXd* grad) {
    Model local = model;
    local.from_blocks(unpack(p, like));
    MvaeGrad g = mvae_gradient(local, x, train, keys);
    if (grad) *grad = pack(g.grads);
    return g.loss;
  };
  return grad_check(loss, pack(like));
}

std::vector<Eigen::MatrixXd> random_views(int m, int v, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> x;
  for (int i = 0; i < m; ++i) x.push_back(gaussian_matrix(v, n, rng));
  return x;
}

std::vector<Eigen::MatrixXd> synth_matrices(const SynthSpec& spec) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& v : gen_dataset(spec).subjects) out.push_back(v.matrix());
  return out;
}

}  // namespace

TEST_CASE("linear shared response") {
  Eigen::MatrixXd e1(2, 1), e2(2, 1), x(2, 2);
  e1 << 1, 0;
  e2 << 0, 1;
  x << 1, 2, 3, 4;
  LinearMvae model;
  model.w = {e1, e2};
  const std::vector<Eigen::MatrixXd> xs{x, x};
  Eigen::MatrixXd expect(1, 2);
  expect << 2, 3;
  CHECK(mvae_shared(model, xs) == expect);
}

TEST_CASE("linear loss equals m times the SRM objective at the closed-form S") {
  const auto x = random_views(3, 8, 12, 1);
  const LinearMvae model = linear_mvae_init(3, 8, 2, 4);
  const Eigen::MatrixXd s = update_shared(model.w, x);
  CHECK(mvae_shared(model, x) == s);
  CHECK(mvae_loss(model, x) == doctest::Approx(3 * srm_objective(model.w, s, x)).epsilon(1e-12));
}

TEST_CASE("nonlinear shared response") {
  NonlinearMvae model = nonlinear_mvae_init(2, 3, 2, MvaeConfig{}, 1);
  model.enc[0].setZero();
  model.enc[1].setZero();
  model.enc_bias[0] << 1, 0;
  model.enc_bias[1] << 1, 0;
  const auto x = random_views(2, 3, 4, 2);
  const Eigen::MatrixXd s = mvae_shared(model, x);
  for (Eigen::Index c = 0; c < 4; ++c) {
    CHECK(s(0, c) == doctest::Approx(std::tanh(1.0)));
    CHECK(s(1, c) == 0.0);
  }
}

TEST_CASE("gradients match finite differences") {
  const auto x = random_views(3, 6, 5, 3);
  const std::vector<std::uint64_t> keys{11, 12, 13, 14, 15};

  SUBCASE("linear") {
    LinearMvae model = linear_mvae_init(3, 6, 2, 5);
    CHECK(check_model(model, x, false, {}).max_rel_error <= 1e-6);
    model.dropout = 0.5;
    CHECK(check_model(model, x, true, keys).max_rel_error <= 1e-6);
  }
  SUBCASE("nonlinear") {
    MvaeConfig cfg;
    cfg.k = 3;
    for (auto [lambda, tanh_dec] : {std::pair{0.0, false}, std::pair{1.0, false}, std::pair{1.0, true}}) {
      CAPTURE(lambda);
      CAPTURE(tanh_dec);
      cfg.sparsity.lambda = lambda;
      cfg.tanh_decoder = tanh_dec;
      NonlinearMvae model = nonlinear_mvae_init(3, 6, 3, cfg, 6);
      Rng rng(7);
      for (auto& b : model.enc_bias) b = gaussian_matrix(3, 1, rng, 0.3);
      for (auto& b : model.dec_bias) b = gaussian_matrix(6, 1, rng, 0.3);
      CHECK(check_model(model, x, false, {}).max_rel_error <= 1e-6);
      CHECK(check_model(model, x, true, keys).max_rel_error <= 1e-6);
    }
  }
}

TEST_CASE("dropout needs one key per column and is deterministic in the keys") {
  const auto x = random_views(2, 4, 3, 4);
  const LinearMvae model = linear_mvae_init(2, 4, 2, 1);
  const std::vector<std::uint64_t> two{1, 2};
  CHECK_THROWS_AS(mvae_gradient(model, x, true, two), InvalidInput);
  const std::vector<std::uint64_t> keys{1, 2, 3};
  CHECK(mvae_gradient(model, x, true, keys).loss == mvae_gradient(model, x, true, keys).loss);
  CHECK(mvae_gradient(model, x, false, {}).loss == doctest::Approx(mvae_loss(model, x)));
}

TEST_CASE("tanh decoder bounds the reconstruction") {
  MvaeConfig cfg;
  cfg.k = 2;
  cfg.tanh_decoder = true;
  NonlinearMvae model = nonlinear_mvae_init(2, 3, 2, cfg, 1);
  for (auto& b : model.dec_bias) b.setConstant(50.0);
  // Every output saturates at 1, so each entry of x = 0 costs exactly 1.
  const std::vector<Eigen::MatrixXd> zero(2, Eigen::MatrixXd::Zero(3, 4));
  model.sparsity.lambda = 0;
  CHECK(mvae_loss(model, zero) == doctest::Approx(24.0));
  model.tanh_decoder = false;
  CHECK(mvae_loss(model, zero) > 24.0 * 2000);
}

TEST_CASE("input validation") {
  const LinearMvae model = linear_mvae_init(2, 4, 2, 1);
  CHECK_THROWS_AS(mvae_loss(model, random_views(3, 4, 2, 1)), InvalidInput);
  CHECK_THROWS_AS(mvae_loss(model, random_views(2, 5, 2, 1)), InvalidInput);
  CHECK_THROWS_AS(linear_mvae_init(2, 3, 4, 0), InvalidInput);
  MvaeConfig bad;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("linear MVAE fits noiseless data") {
  SynthSpec spec = standard_synth_spec(2);
  spec.noise_sigma = 0;
  spec.dims = {8, 8, 8};
  spec.d = 100;
  const auto x = synth_matrices(spec);
  MvaeConfig cfg;
  cfg.k = spec.k_true;
  cfg.dropout = 0;
  cfg.train.epochs = 300;
  cfg.train.batch = 10;
  cfg.train.rmsprop.lr = 3e-3;
  cfg.train.seed = 3;
  const LinearMvae init = linear_mvae_init(spec.m, static_cast<int>(x.front().rows()), cfg.k, cfg.train.seed);
  const LinearMvaeFit fit = fit_linear_mvae(x, cfg);
  CHECK(mvae_loss(fit.model, x) < 1e-3 * mvae_loss(init, x));
  CHECK(fit.trace.epoch_loss.back() < fit.trace.epoch_loss.front());
}

TEST_CASE("nonlinear MVAE training lowers the loss and is worker-count invariant") {
  SynthSpec spec = standard_synth_spec(3);
  spec.dims = {7, 7, 7};
  spec.d = 60;
  const auto x = synth_matrices(spec);
  MvaeConfig cfg;
  cfg.k = 4;
  cfg.train.epochs = 10;
  cfg.train.batch = 12;
  cfg.train.seed = 5;
  cfg.train.workers = 1;
  const NonlinearMvaeFit one = fit_nonlinear_mvae(x, cfg);
  CHECK(one.trace.epoch_loss.back() < one.trace.epoch_loss.front());
  cfg.train.workers = 4;
  const NonlinearMvaeFit four = fit_nonlinear_mvae(x, cfg);
  const auto a = one.model.to_blocks(), b = four.model.to_blocks();
  REQUIRE(a.size() == b.size());
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, (a[i] - b[i]).cwiseAbs().maxCoeff());
  CHECK(diff < 1e-9);
}
