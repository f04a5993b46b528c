#include "fmriagg/mvae.hpp"

#include <cmath>
#include <string>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

namespace {

Eigen::VectorXd flat(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

void unflat(const Eigen::VectorXd& v, Eigen::MatrixXd& m) {
  if (v.size() != m.size()) throw InvalidInput("parameter block has the wrong length");
  m = Eigen::Map<const Eigen::MatrixXd>(v.data(), m.rows(), m.cols());
}

void copy_vec(const Eigen::VectorXd& v, Eigen::VectorXd& into) {
  if (v.size() != into.size()) throw InvalidInput("parameter block has the wrong length");
  into = v;
}

void check_dropout(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidInput("dropout must be in [0,1)");
}

// Shapes of the inputs against a model with m subjects of v voxels each.
Eigen::Index check_inputs(std::span<const Eigen::MatrixXd> x, int m, Eigen::Index v) {
  if (x.size() != static_cast<std::size_t>(m)) {
    throw InvalidInput("mvae: expected " + std::to_string(m) + " subjects, got " + std::to_string(x.size()));
  }
  const Eigen::Index n = x.front().cols();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != v || x[i].cols() != n) {
      throw InvalidInput("mvae: subject " + std::to_string(i) + " has shape " + std::to_string(x[i].rows()) + "x" +
                         std::to_string(x[i].cols()) + ", expected " + std::to_string(v) + "x" + std::to_string(n));
    }
  }
  return n;
}

// Column c of the mask uses keys[c]; layer 0 is S, layer 1 + i is f_i.
Eigen::MatrixXd column_masks(Eigen::Index rows, double p, std::span<const std::uint64_t> keys, int layer) {
  Eigen::MatrixXd mask(rows, static_cast<Eigen::Index>(keys.size()));
  for (std::size_t c = 0; c < keys.size(); ++c) {
    mask.col(static_cast<Eigen::Index>(c)) =
        dropout_mask(rows, 1, p, derive_seed({keys[c], static_cast<std::uint64_t>(layer)}));
  }
  return mask;
}

bool use_dropout(bool train, double p, std::span<const std::uint64_t> keys, Eigen::Index n) {
  if (!train || p == 0.0) return false;
  if (keys.size() != static_cast<std::size_t>(n)) throw InvalidInput("mvae: need one dropout key per column");
  return true;
}

}  // namespace

void LinearMvae::validate() const {
  if (w.empty()) throw InvalidInput("linear mvae has no subjects");
  check_dropout(dropout);
  for (const auto& wi : w) {
    if (wi.rows() != w.front().rows() || wi.cols() != w.front().cols()) {
      throw InvalidInput("linear mvae: subject maps differ in shape");
    }
  }
}

ParamBlocks LinearMvae::to_blocks() const {
  ParamBlocks out;
  for (const auto& wi : w) out.push_back(flat(wi));
  return out;
}

void LinearMvae::from_blocks(const ParamBlocks& blocks) {
  if (blocks.size() != w.size()) throw InvalidInput("wrong number of linear mvae parameter blocks");
  for (std::size_t i = 0; i < w.size(); ++i) unflat(blocks[i], w[i]);
}

void NonlinearMvae::validate() const {
  if (enc.empty()) throw InvalidInput("nonlinear mvae has no subjects");
  check_dropout(dropout);
  sparsity.validate();
  const auto m = enc.size();
  if (enc_bias.size() != m || dec.size() != m || dec_bias.size() != m) {
    throw InvalidInput("nonlinear mvae: per-subject parameter counts differ");
  }
  const Eigen::Index k = enc.front().rows();
  const Eigen::Index v = enc.front().cols();
  for (std::size_t i = 0; i < m; ++i) {
    if (enc[i].rows() != k || enc[i].cols() != v || enc_bias[i].size() != k || dec[i].rows() != v ||
        dec[i].cols() != k || dec_bias[i].size() != v) {
      throw InvalidInput("nonlinear mvae: subject " + std::to_string(i) + " has inconsistent shapes");
    }
  }
}

ParamBlocks NonlinearMvae::to_blocks() const {
  ParamBlocks out;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    out.push_back(flat(enc[i]));
    out.push_back(enc_bias[i]);
    out.push_back(flat(dec[i]));
    out.push_back(dec_bias[i]);
  }
  return out;
}

void NonlinearMvae::from_blocks(const ParamBlocks& blocks) {
  if (blocks.size() != 4 * enc.size()) throw InvalidInput("wrong number of nonlinear mvae parameter blocks");
  std::size_t b = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    unflat(blocks[b++], enc[i]);
    copy_vec(blocks[b++], enc_bias[i]);
    unflat(blocks[b++], dec[i]);
    copy_vec(blocks[b++], dec_bias[i]);
  }
}

void MvaeConfig::validate() const {
  if (k < 1) throw InvalidInput("mvae latent size k must be >= 1");
  check_dropout(dropout);
  sparsity.validate();
  train.validate();
}

LinearMvae linear_mvae_init(int m, int v, int k, std::uint64_t seed) {
  if (m < 1 || k < 1 || v < k) throw InvalidInput("linear mvae init needs m >= 1 and 1 <= k <= v");
  LinearMvae model;
  for (int i = 0; i < m; ++i) model.w.push_back(random_orthonormal(v, k, derive_seed({seed, 1, std::uint64_t(i)})));
  return model;
}

NonlinearMvae nonlinear_mvae_init(int m, int v, int k, const MvaeConfig& cfg, std::uint64_t seed) {
  if (m < 1 || k < 1 || v < k) throw InvalidInput("nonlinear mvae init needs m >= 1 and 1 <= k <= v");
  NonlinearMvae model;
  model.sparsity = cfg.sparsity;
  model.dropout = cfg.dropout;
  model.tanh_decoder = cfg.tanh_decoder;
  for (int i = 0; i < m; ++i) {
    const auto si = static_cast<std::uint64_t>(i);
    model.enc.push_back(orthogonal_init(k, v, derive_seed({seed, 1, si})));
    model.enc_bias.push_back(Eigen::VectorXd::Zero(k));
    Rng rng(derive_seed({seed, 3, si}));
    model.dec.push_back(gaussian_matrix(v, k, rng, 1.0 / std::sqrt(double(k))));
    model.dec_bias.push_back(Eigen::VectorXd::Zero(v));
  }
  return model;
}

Eigen::MatrixXd mvae_shared(const LinearMvae& model, std::span<const Eigen::MatrixXd> x) {
  model.validate();
  check_inputs(x, model.subjects(), model.w.front().rows());
  Eigen::MatrixXd s = model.w[0].transpose() * x[0];
  for (int i = 1; i < model.subjects(); ++i) s.noalias() += model.w[i].transpose() * x[i];
  return s / model.subjects();
}

Eigen::MatrixXd mvae_shared(const NonlinearMvae& model, std::span<const Eigen::MatrixXd> x) {
  model.validate();
  const Eigen::Index n = check_inputs(x, model.subjects(), model.enc.front().cols());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(model.enc.front().rows(), n);
  for (int i = 0; i < model.subjects(); ++i) {
    Eigen::MatrixXd z = model.enc[i] * x[i];
    z.colwise() += model.enc_bias[i];
    s += tanh_forward(z);
  }
  return s / model.subjects();
}

MvaeGrad mvae_gradient(const LinearMvae& model, std::span<const Eigen::MatrixXd> x, bool train,
                       std::span<const std::uint64_t> keys) {
  model.validate();
  const int m = model.subjects();
  const Eigen::Index n = check_inputs(x, m, model.w.front().rows());
  const Eigen::MatrixXd s = mvae_shared(model, x);
  const bool drop = use_dropout(train, model.dropout, keys, n);
  const Eigen::MatrixXd mask = drop ? column_masks(s.rows(), model.dropout, keys, 0) : Eigen::MatrixXd();
  const Eigen::MatrixXd sd = drop ? Eigen::MatrixXd(s.cwiseProduct(mask)) : s;

  MvaeGrad out;
  std::vector<Eigen::MatrixXd> resid(static_cast<std::size_t>(m));
  Eigen::MatrixXd g_sd = Eigen::MatrixXd::Zero(s.rows(), n);
  for (int i = 0; i < m; ++i) {
    resid[i] = model.w[i] * sd - x[i];
    out.loss += resid[i].squaredNorm();
    g_sd.noalias() += 2.0 * model.w[i].transpose() * resid[i];
  }
  const Eigen::MatrixXd g_s = drop ? Eigen::MatrixXd(g_sd.cwiseProduct(mask)) : g_sd;
  for (int i = 0; i < m; ++i) {
    // Decoder use of W_i plus its encoder use through S.
    Eigen::MatrixXd g = 2.0 * resid[i] * sd.transpose();
    g.noalias() += x[i] * g_s.transpose() / m;
    out.grads.push_back(flat(g));
  }
  return out;
}

namespace {

Eigen::MatrixXd decode(const NonlinearMvae& model, int i, const Eigen::MatrixXd& s) {
  Eigen::MatrixXd y = model.dec[i] * s;
  y.colwise() += model.dec_bias[i];
  return model.tanh_decoder ? tanh_forward(y) : y;
}

}  // namespace

MvaeGrad mvae_gradient(const NonlinearMvae& model, std::span<const Eigen::MatrixXd> x, bool train,
                       std::span<const std::uint64_t> keys) {
  model.validate();
  const int m = model.subjects();
  const Eigen::Index k = model.enc.front().rows();
  const Eigen::Index n = check_inputs(x, m, model.enc.front().cols());
  const bool drop = use_dropout(train, model.dropout, keys, n);

  std::vector<Eigen::MatrixXd> h(static_cast<std::size_t>(m)), h_mask(static_cast<std::size_t>(m));
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, n);
  for (int i = 0; i < m; ++i) {
    Eigen::MatrixXd z = model.enc[i] * x[i];
    z.colwise() += model.enc_bias[i];
    h[i] = tanh_forward(z);
    if (drop) {
      h_mask[i] = column_masks(k, model.dropout, keys, 1 + i);
      s += h[i].cwiseProduct(h_mask[i]);
    } else {
      s += h[i];
    }
  }
  s /= m;
  const KlSparsity kl = kl_sparsity(s, model.sparsity);
  const Eigen::MatrixXd s_mask = drop ? column_masks(k, model.dropout, keys, 0) : Eigen::MatrixXd();
  const Eigen::MatrixXd sd = drop ? Eigen::MatrixXd(s.cwiseProduct(s_mask)) : s;

  MvaeGrad out;
  out.loss = model.sparsity.lambda * kl.penalty;
  out.grads.resize(static_cast<std::size_t>(4 * m));
  Eigen::MatrixXd g_sd = Eigen::MatrixXd::Zero(k, n);
  for (int i = 0; i < m; ++i) {
    const Eigen::MatrixXd y = decode(model, i, sd);
    const Eigen::MatrixXd r = y - x[i];
    out.loss += r.squaredNorm();
    const Eigen::MatrixXd g_y = model.tanh_decoder ? tanh_backward(y, 2.0 * r) : Eigen::MatrixXd(2.0 * r);
    g_sd.noalias() += model.dec[i].transpose() * g_y;
    out.grads[4 * i + 2] = flat(g_y * sd.transpose());
    out.grads[4 * i + 3] = g_y.rowwise().sum();
  }
  Eigen::MatrixXd g_s = drop ? Eigen::MatrixXd(g_sd.cwiseProduct(s_mask)) : g_sd;
  g_s += model.sparsity.lambda * kl.grad;
  for (int i = 0; i < m; ++i) {
    Eigen::MatrixXd g_h = g_s / m;
    if (drop) g_h = g_h.cwiseProduct(h_mask[i]);
    const Eigen::MatrixXd g_z = tanh_backward(h[i], g_h);
    out.grads[4 * i] = flat(g_z * x[i].transpose());
    out.grads[4 * i + 1] = g_z.rowwise().sum();
  }
  return out;
}

double mvae_loss(const LinearMvae& model, std::span<const Eigen::MatrixXd> x) {
  const Eigen::MatrixXd s = mvae_shared(model, x);
  double loss = 0;
  for (int i = 0; i < model.subjects(); ++i) loss += (x[i] - model.w[i] * s).squaredNorm();
  return loss;
}

double mvae_loss(const NonlinearMvae& model, std::span<const Eigen::MatrixXd> x) {
  const Eigen::MatrixXd s = mvae_shared(model, x);
  double loss = model.sparsity.lambda * kl_sparsity(s, model.sparsity).penalty;
  for (int i = 0; i < model.subjects(); ++i) loss += (decode(model, i, s) - x[i]).squaredNorm();
  return loss;
}

namespace {

std::vector<Eigen::MatrixXd> gather(std::span<const Eigen::MatrixXd> x, std::span<const int> cols) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& xi : x) {
    Eigen::MatrixXd g(xi.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) g.col(static_cast<Eigen::Index>(c)) = xi.col(cols[c]);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<std::uint64_t> sample_keys(std::uint64_t seed, std::uint64_t epoch, std::span<const int> cols) {
  std::vector<std::uint64_t> keys;
  for (int t : cols) keys.push_back(derive_seed({seed, epoch, static_cast<std::uint64_t>(t)}));
  return keys;
}

Eigen::Index sample_count(std::span<const Eigen::MatrixXd> x) {
  if (x.empty()) throw InvalidInput("mvae: no subjects");
  return x.front().cols();
}

}  // namespace

// The KL term couples the columns of a batch through rho_hat, so the nonlinear
// fit runs the two-phase reduction: per-shard activation sums first, then
// per-shard gradients with the batch-level slope.
LinearMvaeFit fit_linear_mvae(std::span<const Eigen::MatrixXd> x, const MvaeConfig& cfg) {
  cfg.validate();
  LinearMvaeFit fit;
  fit.model = linear_mvae_init(static_cast<int>(x.size()), static_cast<int>(x.front().rows()), cfg.k, cfg.train.seed);
  fit.model.dropout = cfg.dropout;
  check_inputs(x, fit.model.subjects(), fit.model.w.front().rows());

  const LinearMvae shape = fit.model;
  const std::uint64_t seed = cfg.train.seed;
  SgdProblem problem;
  problem.samples = static_cast<int>(sample_count(x));
  problem.gradient = [x, shape, seed](const ParamBlocks& params, std::span<const int> shard, std::uint64_t epoch,
                                      const Eigen::VectorXd&) {
    LinearMvae local = shape;
    local.from_blocks(params);
    const auto keys = sample_keys(seed, epoch, shard);
    MvaeGrad g = mvae_gradient(local, gather(x, shard), true, keys);
    return GradientBundle{std::move(g.grads), static_cast<double>(shard.size()), g.loss};
  };
  fit.trace = sync_sgd_run(fit.model.to_blocks(), problem, cfg.train);
  fit.model.from_blocks(fit.trace.params);
  return fit;
}

NonlinearMvaeFit fit_nonlinear_mvae(std::span<const Eigen::MatrixXd> x, const MvaeConfig& cfg) {
  cfg.validate();
  NonlinearMvaeFit fit;
  fit.model = nonlinear_mvae_init(static_cast<int>(x.size()), static_cast<int>(x.front().rows()), cfg.k, cfg,
                                  cfg.train.seed);
  const int m = fit.model.subjects();
  check_inputs(x, m, fit.model.enc.front().cols());

  const NonlinearMvae shape = fit.model;
  const std::uint64_t seed = cfg.train.seed;
  const SparsityConfig sp = cfg.sparsity;

  // Pre-dropout shared activations of the shard, for the batch-level rho_hat.
  auto shared_of = [x, seed](const NonlinearMvae& model, std::span<const int> shard, std::uint64_t epoch) {
    const auto xs = gather(x, shard);
    const auto keys = sample_keys(seed, epoch, shard);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(model.enc.front().rows(), static_cast<Eigen::Index>(shard.size()));
    for (int i = 0; i < model.subjects(); ++i) {
      Eigen::MatrixXd z = model.enc[i] * xs[i];
      z.colwise() += model.enc_bias[i];
      Eigen::MatrixXd h = tanh_forward(z);
      if (model.dropout > 0.0) h = h.cwiseProduct(column_masks(h.rows(), model.dropout, keys, 1 + i));
      s += h;
    }
    return Eigen::MatrixXd(s / model.subjects());
  };

  SgdProblem problem;
  problem.samples = static_cast<int>(sample_count(x));
  problem.stats_size = 2;
  problem.stats = [shape, shared_of](const ParamBlocks& params, std::span<const int> shard, std::uint64_t epoch) {
    NonlinearMvae local = shape;
    local.from_blocks(params);
    const Eigen::MatrixXd s = shared_of(local, shard, epoch);
    Eigen::VectorXd out(2);
    out << 0.5 * (s.array() + 1.0).sum(), static_cast<double>(s.size());
    return out;
  };
  problem.gradient = [x, shape, seed, sp](const ParamBlocks& params, std::span<const int> shard,
                                                     std::uint64_t epoch, const Eigen::VectorXd& stats) {
    NonlinearMvae local = shape;
    local.from_blocks(params);
    // Gradient of the shard's reconstruction with the KL slope of the whole
    // batch: run mvae_gradient without KL, then add the slope through S.
    NonlinearMvae no_kl = local;
    no_kl.sparsity.lambda = 0;
    const auto xs = gather(x, shard);
    const auto keys = sample_keys(seed, epoch, shard);
    MvaeGrad g = mvae_gradient(no_kl, xs, true, keys);
    const double slope = sp.lambda * kl_from_stats(stats[0], stats[1], sp).slope;
    if (slope != 0.0) {
      const int mm = local.subjects();
      const Eigen::Index k = local.enc.front().rows();
      const Eigen::Index n = static_cast<Eigen::Index>(shard.size());
      for (int i = 0; i < mm; ++i) {
        Eigen::MatrixXd z = local.enc[i] * xs[i];
        z.colwise() += local.enc_bias[i];
        const Eigen::MatrixXd h = tanh_forward(z);
        Eigen::MatrixXd g_h = Eigen::MatrixXd::Constant(k, n, slope / mm);
        if (local.dropout > 0.0) g_h = g_h.cwiseProduct(column_masks(k, local.dropout, keys, 1 + i));
        const Eigen::MatrixXd g_z = tanh_backward(h, g_h);
        g.grads[4 * i] += flat(g_z * xs[i].transpose());
        g.grads[4 * i + 1] += g_z.rowwise().sum();
      }
    }
    return GradientBundle{std::move(g.grads), static_cast<double>(shard.size()), g.loss};
  };
  problem.batch_loss = [sp](const Eigen::VectorXd& stats) {
    return sp.lambda * kl_from_stats(stats[0], stats[1], sp).penalty;
  };
  fit.trace = sync_sgd_run(fit.model.to_blocks(), problem, cfg.train);
  fit.model.from_blocks(fit.trace.params);
  return fit;
}

}  // namespace fmriagg
