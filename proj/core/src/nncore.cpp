#include "fmriagg/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

ConvGeometry::ConvGeometry(Dims3 dims, int f) : dims_(dims), f_(f), taps_(f * f * f) {
  if (f < 1 || f % 2 == 0) throw InvalidInput("filter edge must be odd and >= 1, got " + std::to_string(f));
  if (dims.x < 1 || dims.y < 1 || dims.z < 1) throw InvalidInput("conv dims must be >= 1");
  const int h = (f - 1) / 2;
  nb_.assign(dims.count() * taps_, -1);
  std::size_t p = 0;
  for (int z = 0; z < dims.z; ++z) {
    for (int y = 0; y < dims.y; ++y) {
      for (int x = 0; x < dims.x; ++x, ++p) {
        int tap = 0;
        for (int dz = -h; dz <= h; ++dz) {
          for (int dy = -h; dy <= h; ++dy) {
            for (int dx = -h; dx <= h; ++dx, ++tap) {
              if (dims.contains(x + dx, y + dy, z + dz)) {
                nb_[p * taps_ + tap] = static_cast<int>(dims.index(x + dx, y + dy, z + dz));
              }
            }
          }
        }
      }
    }
  }
}

namespace {

void check_conv_shapes(const ConvGeometry& g, const Eigen::MatrixXd& input, const Eigen::MatrixXd& filters) {
  if (input.rows() != g.voxels()) throw InvalidInput("conv input rows do not match the volume");
  if (filters.cols() != input.cols() * g.taps()) {
    throw InvalidInput("filter shape " + std::to_string(filters.rows()) + "x" + std::to_string(filters.cols()) +
                       " does not match " + std::to_string(input.cols()) + " input channels");
  }
}

// V x (Cin*T) patch matrix.
Eigen::MatrixXd im2col(const ConvGeometry& g, const Eigen::MatrixXd& input) {
  const Eigen::Index v = g.voxels();
  const int t = g.taps();
  Eigen::MatrixXd patches(v, input.cols() * t);
  for (Eigen::Index c = 0; c < input.cols(); ++c) {
    const double* src = input.col(c).data();
    for (int tap = 0; tap < t; ++tap) {
      double* dst = patches.col(c * t + tap).data();
      for (Eigen::Index p = 0; p < v; ++p) {
        const int q = g.neighbor(p, tap);
        dst[p] = q >= 0 ? src[q] : 0.0;
      }
    }
  }
  return patches;
}

// Filters rearranged to Cin x (Cout*T) for the tap-expansion path.
Eigen::MatrixXd expand_filters(const Eigen::MatrixXd& filters, Eigen::Index cin, int t) {
  const Eigen::Index cout = filters.rows();
  Eigen::MatrixXd m(cin, cout * t);
  for (Eigen::Index o = 0; o < cout; ++o)
    for (Eigen::Index c = 0; c < cin; ++c)
      for (int tap = 0; tap < t; ++tap) m(c, o * t + tap) = filters(o, c * t + tap);
  return m;
}

bool use_im2col(Eigen::Index cin, Eigen::Index cout) { return cin <= cout; }

}  // namespace

Eigen::MatrixXd conv3d_forward(const ConvGeometry& g, const Eigen::MatrixXd& input, const Eigen::MatrixXd& filters,
                               const Eigen::VectorXd& bias) {
  check_conv_shapes(g, input, filters);
  if (bias.size() != filters.rows()) throw InvalidInput("bias length does not match filter count");
  const Eigen::Index v = g.voxels();
  const Eigen::Index cin = input.cols();
  const Eigen::Index cout = filters.rows();
  const int t = g.taps();
  Eigen::MatrixXd out(v, cout);
  if (use_im2col(cin, cout)) {
    out.noalias() = im2col(g, input) * filters.transpose();
    out.rowwise() += bias.transpose();
    return out;
  }
  const Eigen::MatrixXd y = input * expand_filters(filters, cin, t);
  for (Eigen::Index o = 0; o < cout; ++o) {
    double* dst = out.col(o).data();
    for (Eigen::Index p = 0; p < v; ++p) {
      double acc = bias[o];
      for (int tap = 0; tap < t; ++tap) {
        const int q = g.neighbor(p, tap);
        if (q >= 0) acc += y(q, o * t + tap);
      }
      dst[p] = acc;
    }
  }
  return out;
}

ConvGrads conv3d_backward(const ConvGeometry& g, const Eigen::MatrixXd& grad_out, const Eigen::MatrixXd& input,
                          const Eigen::MatrixXd& filters, bool need_input_grad) {
  check_conv_shapes(g, input, filters);
  if (grad_out.rows() != g.voxels() || grad_out.cols() != filters.rows()) {
    throw InvalidInput("conv output gradient has the wrong shape");
  }
  const Eigen::Index v = g.voxels();
  const Eigen::Index cin = input.cols();
  const Eigen::Index cout = filters.rows();
  const int t = g.taps();
  ConvGrads out;
  out.bias = grad_out.colwise().sum().transpose();

  if (use_im2col(cin, cout)) {
    out.filters.noalias() = grad_out.transpose() * im2col(g, input);
    if (need_input_grad) {
      const Eigen::MatrixXd q = grad_out * filters;  // V x Cin*T
      out.input = Eigen::MatrixXd::Zero(v, cin);
      for (Eigen::Index c = 0; c < cin; ++c) {
        double* dst = out.input.col(c).data();
        for (int tap = 0; tap < t; ++tap) {
          const double* src = q.col(c * t + tap).data();
          for (Eigen::Index p = 0; p < v; ++p) {
            const int n = g.neighbor(p, tap);
            if (n >= 0) dst[n] += src[p];
          }
        }
      }
    }
    return out;
  }

  // dY(q, o*T+tap) = grad_out(q - offset(tap), o)
  Eigen::MatrixXd dy(v, cout * t);
  for (Eigen::Index o = 0; o < cout; ++o) {
    const double* src = grad_out.col(o).data();
    for (int tap = 0; tap < t; ++tap) {
      double* dst = dy.col(o * t + tap).data();
      const int back = g.mirror(tap);
      for (Eigen::Index p = 0; p < v; ++p) {
        const int n = g.neighbor(p, back);
        dst[p] = n >= 0 ? src[n] : 0.0;
      }
    }
  }
  const Eigen::MatrixXd dm = input.transpose() * dy;  // Cin x Cout*T
  out.filters.resize(cout, cin * t);
  for (Eigen::Index o = 0; o < cout; ++o)
    for (Eigen::Index c = 0; c < cin; ++c)
      for (int tap = 0; tap < t; ++tap) out.filters(o, c * t + tap) = dm(c, o * t + tap);
  if (need_input_grad) out.input.noalias() = dy * expand_filters(filters, cin, t).transpose();
  return out;
}

Eigen::MatrixXd tanh_forward(const Eigen::MatrixXd& x) { return x.array().tanh().matrix(); }

Eigen::MatrixXd tanh_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& grad) {
  if (y.rows() != grad.rows() || y.cols() != grad.cols()) throw InvalidInput("tanh_backward: shape mismatch");
  return ((1.0 - y.array().square()) * grad.array()).matrix();
}

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t key) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidInput("dropout probability must be in [0,1)");
  Eigen::MatrixXd mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  const std::uint64_t base = mix64(key);
  double* d = mask.data();
  for (Eigen::Index e = 0; e < mask.size(); ++e) {
    d[e] = unit_uniform(base + static_cast<std::uint64_t>(e) * 0x9e3779b97f4a7c15ULL) < p ? 0.0 : keep;
  }
  return mask;
}

Eigen::MatrixXd dropout_apply(const Eigen::MatrixXd& x, double p, bool train, std::uint64_t key) {
  if (!train || p == 0.0) return x;
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), p, key));
}

void SparsityConfig::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidInput("sparsity target rho must be in (0,1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("sparsity weight lambda must be >= 0");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw InvalidInput("clamp_eps must be in (0,0.5)");
}

KlTerm kl_from_stats(double sum_unit, double count, const SparsityConfig& cfg) {
  cfg.validate();
  if (!(count > 0)) throw InvalidInput("sparsity statistics need at least one activation");
  KlTerm kl;
  const double raw = sum_unit / count;
  if (!std::isfinite(raw)) throw NumericalError("non-finite mean activation");
  kl.rho_hat = std::clamp(raw, cfg.clamp_eps, 1.0 - cfg.clamp_eps);
  kl.clamped = kl.rho_hat != raw;
  const double r = cfg.rho;
  const double q = kl.rho_hat;
  kl.penalty = r * std::log(r / q) + (1.0 - r) * std::log((1.0 - r) / (1.0 - q));
  // rho_hat = sum((a+1)/2) / N, so d rho_hat / d a = 1 / (2N).
  kl.slope = kl.clamped ? 0.0 : (-r / q + (1.0 - r) / (1.0 - q)) / (2.0 * count);
  return kl;
}

KlSparsity kl_sparsity(const Eigen::MatrixXd& activations, const SparsityConfig& cfg) {
  if (activations.size() == 0) throw InvalidInput("kl_sparsity: empty activations");
  const double sum_unit = 0.5 * (activations.array() + 1.0).sum();
  const KlTerm t = kl_from_stats(sum_unit, static_cast<double>(activations.size()), cfg);
  KlSparsity out;
  out.penalty = t.penalty;
  out.rho_hat = t.rho_hat;
  out.clamped = t.clamped;
  out.grad = Eigen::MatrixXd::Constant(activations.rows(), activations.cols(), t.slope);
  return out;
}

void RmspropConfig::validate() const {
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidInput("rmsprop decay must be in [0,1)");
  if (!(epsilon > 0.0)) throw InvalidInput("rmsprop epsilon must be > 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("learning rate must be > 0");
}

void rmsprop_step(ParamBlocks& params, const ParamBlocks& grads, RmspropState& state) {
  state.cfg.validate();
  if (params.size() != grads.size()) throw InvalidInput("rmsprop: parameter and gradient block counts differ");
  if (state.cache.empty()) {
    for (const auto& p : params) state.cache.push_back(Eigen::VectorXd::Zero(p.size()));
  }
  if (state.cache.size() != params.size()) throw InvalidInput("rmsprop: state does not match parameters");
  const double g = state.cfg.decay;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || state.cache[b].size() != params[b].size()) {
      throw InvalidInput("rmsprop: block " + std::to_string(b) + " size mismatch");
    }
    if (!grads[b].allFinite()) throw NumericalError("non-finite gradient in block " + std::to_string(b));
    state.cache[b] = g * state.cache[b].array() + (1.0 - g) * grads[b].array().square();
    params[b].array() -= state.cfg.lr * grads[b].array() / (state.cache[b].array().sqrt() + state.cfg.epsilon);
  }
}

Eigen::MatrixXd orthogonal_init(int num_filters, int fan_in, std::uint64_t seed) {
  if (num_filters < 1 || fan_in < 1) throw InvalidInput("orthogonal_init: sizes must be >= 1");
  if (num_filters > fan_in) {
    throw InvalidInput("orthogonal_init: " + std::to_string(num_filters) + " filters exceed fan-in " +
                       std::to_string(fan_in));
  }
  Rng rng(seed);
  const Eigen::MatrixXd q = orthonormalize(gaussian_matrix(fan_in, fan_in, rng));
  return q.topRows(num_filters);
}

GradCheckReport grad_check(const LossWithGrad& loss, const Eigen::VectorXd& params, double h, double tolerance) {
  if (!(h > 0.0)) throw InvalidInput("grad_check: step must be > 0");
  Eigen::VectorXd analytic(params.size());
  const double base = loss(params, &analytic);
  if (!std::isfinite(base) || !analytic.allFinite()) throw NumericalError("grad_check: non-finite loss or gradient");
  if (analytic.size() != params.size()) throw InvalidInput("grad_check: gradient has the wrong length");

  Eigen::VectorXd numeric(params.size());
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double step = h * (std::abs(params[i]) + 1.0);
    probe[i] = params[i] + step;
    const double up = loss(probe, nullptr);
    probe[i] = params[i] - step;
    const double down = loss(probe, nullptr);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("grad_check: non-finite loss");
    numeric[i] = (up - down) / (2.0 * step);
  }

  GradCheckReport r;
  const double floor = std::max(1e-12, 1e-3 * numeric.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double abs_err = std::abs(analytic[i] - numeric[i]);
    const double rel = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error || r.worst_index < 0) {
      r.max_rel_error = std::max(rel, r.max_rel_error);
      if (rel >= r.max_rel_error) r.worst_index = i;
    }
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

}  // namespace fmriagg
