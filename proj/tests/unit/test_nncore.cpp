#include <doctest.h>

#include <cmath>

#include "fmriagg/error.hpp"
#include "fmriagg/nncore.hpp"
#include "fmriagg/rng.hpp"

using namespace fmriagg;

namespace {

// Direct six-loop cross-correlation with zero padding.
Eigen::MatrixXd naive_conv(const Dims3& d, int f, const Eigen::MatrixXd& in, const Eigen::MatrixXd& w,
                           const Eigen::VectorXd& b) {
  const int h = (f - 1) / 2;
  const int taps = f * f * f;
  Eigen::MatrixXd out(in.rows(), w.rows());
  for (int co = 0; co < w.rows(); ++co)
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
          double s = b[co];
          for (int ci = 0; ci < in.cols(); ++ci)
            for (int dz = 0; dz < f; ++dz)
              for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) {
                  const int xx = x + dx - h, yy = y + dy - h, zz = z + dz - h;
                  if (!d.contains(xx, yy, zz)) continue;
                  s += w(co, ci * taps + dx + f * (dy + f * dz)) * in(static_cast<Eigen::Index>(d.index(xx, yy, zz)), ci);
                }
          out(static_cast<Eigen::Index>(d.index(x, y, z)), co) = s;
        }
  return out;
}

Eigen::VectorXd flat(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

}  // namespace

TEST_CASE("conv3d_forward matches the direct loop") {
  Rng rng(1);
  const Dims3 d{4, 5, 3};
  for (auto [f, cin, cout] : {std::tuple{3, 1, 4}, std::tuple{3, 4, 2}, std::tuple{5, 2, 3}, std::tuple{1, 3, 3}}) {
    const ConvGeometry g(d, f);
    const Eigen::MatrixXd in = gaussian_matrix(g.voxels(), cin, rng);
    const Eigen::MatrixXd w = gaussian_matrix(cout, cin * f * f * f, rng);
    const Eigen::VectorXd b = gaussian_matrix(cout, 1, rng);
    CHECK((conv3d_forward(g, in, w, b) - naive_conv(d, f, in, w, b)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv3d_forward special cases") {
  const Dims3 d{4, 4, 4};
  const ConvGeometry g(d, 3);
  SUBCASE("delta filter is the identity per channel") {
    Rng rng(2);
    const Eigen::MatrixXd in = gaussian_matrix(g.voxels(), 2, rng);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 54);
    w(0, 13) = 1;
    w(1, 27 + 13) = 1;
    CHECK(conv3d_forward(g, in, w, Eigen::VectorXd::Zero(2)) == in);
  }
  SUBCASE("all-ones filter counts in-bounds neighbors") {
    const Eigen::MatrixXd out =
        conv3d_forward(g, Eigen::MatrixXd::Ones(g.voxels(), 1), Eigen::MatrixXd::Ones(1, 27), Eigen::VectorXd::Zero(1));
    CHECK(out(static_cast<Eigen::Index>(d.index(1, 1, 1)), 0) == 27);
    CHECK(out(0, 0) == 8);
  }
  SUBCASE("two identical channels double the output") {
    Rng rng(3);
    const Eigen::MatrixXd x = gaussian_matrix(g.voxels(), 1, rng);
    const Eigen::MatrixXd w1 = gaussian_matrix(1, 27, rng);
    Eigen::MatrixXd in2(g.voxels(), 2);
    in2 << x, x;
    Eigen::MatrixXd w2(1, 54);
    w2 << w1, w1;
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    CHECK((conv3d_forward(g, in2, w2, z) - 2 * conv3d_forward(g, x, w1, z)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(ConvGeometry(d, 2), InvalidInput);
}

TEST_CASE("conv3d_backward") {
  Rng rng(4);
  const Dims3 d{4, 4, 4};
  SUBCASE("zero upstream gradient") {
    const ConvGeometry g(d, 3);
    const auto gr = conv3d_backward(g, Eigen::MatrixXd::Zero(64, 2), gaussian_matrix(64, 3, rng),
                                    gaussian_matrix(2, 81, rng));
    CHECK(gr.input.cwiseAbs().maxCoeff() == 0.0);
    CHECK(gr.filters.cwiseAbs().maxCoeff() == 0.0);
    CHECK(gr.bias.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("single voxel, f=1") {
    const ConvGeometry g({1, 1, 1}, 1);
    Eigen::MatrixXd in(1, 1), go(1, 1), w(1, 1);
    in << 3;
    go << 2;
    w << 5;
    const auto gr = conv3d_backward(g, go, in, w);
    CHECK(gr.filters(0, 0) == 6);
    CHECK(gr.input(0, 0) == 10);
    CHECK(gr.bias[0] == 2);
  }
  SUBCASE("finite differences on a random 4^3 instance") {
    for (auto [f, cin, cout] : {std::tuple{3, 2, 3}, std::tuple{3, 3, 1}}) {
      const ConvGeometry g(d, f);
      const int taps = f * f * f;
      const Eigen::MatrixXd in = gaussian_matrix(64, cin, rng);
      const Eigen::MatrixXd w = gaussian_matrix(cout, cin * taps, rng);
      const Eigen::MatrixXd target = gaussian_matrix(64, cout, rng);
      const Eigen::Index n_in = in.size(), n_w = w.size();
      Eigen::VectorXd p(n_in + n_w + cout);
      p << flat(in), flat(w), Eigen::VectorXd::Zero(cout);
      auto loss = [&](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
        const Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(q.data(), 64, cin);
        const Eigen::MatrixXd ww = Eigen::Map<const Eigen::MatrixXd>(q.data() + n_in, cout, cin * taps);
        const Eigen::VectorXd b = q.tail(cout);
        const Eigen::MatrixXd out = conv3d_forward(g, x, ww, b);
        const double l = 0.5 * (out - target).squaredNorm();
        if (grad) {
          const auto gr = conv3d_backward(g, out - target, x, ww);
          *grad << flat(gr.input), flat(gr.filters), gr.bias;
        }
        return l;
      };
      const auto report = grad_check(loss, p);
      CHECK(report.max_rel_error <= 1e-6);
    }
  }
}

TEST_CASE("tanh") {
  Eigen::MatrixXd x(1, 3);
  x << 0, 20, 1;
  const Eigen::MatrixXd y = tanh_forward(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(std::abs(y(0, 1) - 1.0) <= 1e-12);
  CHECK(y(0, 2) == doctest::Approx(0.761594).epsilon(1e-6));
  const Eigen::MatrixXd dy = tanh_backward(y, Eigen::MatrixXd::Ones(1, 3));
  CHECK(dy(0, 0) == 1.0);
  CHECK(dy(0, 2) == doctest::Approx(0.419974).epsilon(1e-6));
}

TEST_CASE("KL sparsity") {
  SparsityConfig cfg;
  SUBCASE("target met") {
    const auto kl = kl_sparsity(Eigen::MatrixXd::Constant(3, 2, 0.5), cfg);  // (0.5+1)/2 = 0.75
    CHECK(std::abs(kl.penalty) < 1e-15);
    CHECK(kl.grad.cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("rho_hat 0.5") {
    CHECK(kl_sparsity(Eigen::MatrixXd::Zero(4, 4), cfg).penalty == doctest::Approx(0.130812).epsilon(1e-6));
  }
  SUBCASE("clamped") {
    SparsityConfig half;
    half.rho = 0.5;
    const auto kl = kl_sparsity(Eigen::MatrixXd::Constant(2, 2, -1.0), half);
    CHECK(kl.clamped);
    CHECK(kl.penalty == doctest::Approx(0.5 * std::log(0.5 / 1e-6) + 0.5 * std::log(0.5 / (1 - 1e-6))));
    CHECK(kl.penalty == doctest::Approx(6.214).epsilon(1e-3));
    CHECK(kl.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("slope against finite differences") {
    Rng rng(5);
    const Eigen::MatrixXd a = gaussian_matrix(3, 4, rng).array().tanh();
    const Eigen::VectorXd p = flat(a);
    auto loss = [&](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
      const Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(q.data(), 3, 4);
      const auto kl = kl_sparsity(m, cfg);
      if (grad) *grad = flat(kl.grad);
      return kl.penalty;
    };
    CHECK(grad_check(loss, p).max_rel_error <= 1e-6);
  }
}

TEST_CASE("dropout") {
  Rng rng(6);
  const Eigen::MatrixXd x = gaussian_matrix(5, 5, rng);
  CHECK(dropout_apply(x, 0.0, true, 1) == x);
  CHECK(dropout_apply(x, 0.9, false, 1) == x);
  const Eigen::MatrixXd big = dropout_apply(Eigen::MatrixXd::Ones(1000, 1000), 0.5, true, 7);
  CHECK(std::abs(big.mean() - 1.0) < 0.01);
  CHECK(dropout_mask(4, 4, 0.5, 3) == dropout_mask(4, 4, 0.5, 3));
  CHECK(dropout_mask(4, 4, 0.5, 3) != dropout_mask(4, 4, 0.5, 4));
  CHECK_THROWS_AS(dropout_mask(2, 2, 1.0, 0), InvalidInput);
}

TEST_CASE("rmsprop") {
  RmspropState st{{0.9, 1e-6, 0.1}, {}};
  ParamBlocks p{Eigen::VectorXd::Zero(1)};
  rmsprop_step(p, {Eigen::VectorXd::Ones(1)}, st);
  CHECK(st.cache[0][0] == doctest::Approx(0.1));
  CHECK(p[0][0] == doctest::Approx(-0.1 / (std::sqrt(0.1) + 1e-6)).epsilon(1e-12));
  CHECK(std::abs(p[0][0]) == doctest::Approx(0.316227).epsilon(1e-6));

  const double before = p[0][0];
  rmsprop_step(p, {Eigen::VectorXd::Zero(1)}, st);
  CHECK(p[0][0] == before);
  CHECK(st.cache[0][0] == doctest::Approx(0.09));

  ParamBlocks bad{Eigen::VectorXd::Zero(1)};
  CHECK_THROWS_AS(rmsprop_step(bad, {Eigen::VectorXd::Constant(1, std::nan(""))}, st), NumericalError);
}

TEST_CASE("orthogonal_init") {
  const Eigen::MatrixXd w2 = orthogonal_init(2, 2, 1);
  CHECK((w2 * w2.transpose() - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd w = orthogonal_init(20, 125, 2);
  CHECK(w.rows() == 20);
  CHECK(w.cols() == 125);
  CHECK((w * w.transpose() - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(orthogonal_init(20, 125, 2) == w);
  CHECK_THROWS_AS(orthogonal_init(30, 27, 0), InvalidInput);
}

TEST_CASE("grad_check") {
  Rng rng(8);
  const Eigen::VectorXd p = gaussian_matrix(6, 1, rng);
  auto quad = [](const Eigen::VectorXd& q, Eigen::VectorXd* g) {
    if (g) *g = 2 * q;
    return q.squaredNorm();
  };
  CHECK(grad_check(quad, p).max_rel_error < 1e-8);

  auto comp = [](const Eigen::VectorXd& q, Eigen::VectorXd* g) {
    const Eigen::ArrayXd t = (1.5 * q.array()).tanh();
    if (g) *g = (2 * t * (1 - t.square()) * 1.5).matrix();
    return t.square().sum();
  };
  CHECK(grad_check(comp, p).passed);

  auto corrupted = [&](const Eigen::VectorXd& q, Eigen::VectorXd* g) {
    const double v = comp(q, g);
    if (g) *g *= 1.01;
    return v;
  };
  const auto r = grad_check(corrupted, p);
  CHECK(r.max_rel_error >= 5e-3);
  CHECK_FALSE(r.passed);
}
