#include "fmriagg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("pearson: length mismatch");
  if (a.size() < 2) throw InvalidInput("pearson: need at least 2 values");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

void MatchingConfig::validate() const {
  if (seg_len < 1) throw InvalidInput("segment length must be >= 1");
}

Eigen::MatrixXd segment_scores(const Eigen::MatrixXd& test, const Eigen::MatrixXd& ref, int seg_len) {
  if (test.rows() != ref.rows() || test.cols() != ref.cols()) {
    throw InvalidInput("test and reference features must have the same shape");
  }
  if (seg_len < 1) throw InvalidInput("segment length must be >= 1");
  const Eigen::Index d = test.cols();
  if (d < seg_len) {
    throw InvalidInput("test duration " + std::to_string(d) + " is shorter than the segment length " +
                       std::to_string(seg_len));
  }
  if (test.rows() * seg_len < 2) throw InvalidInput("segments need at least 2 values");
  const Eigen::Index n = d - seg_len + 1;
  const double count = static_cast<double>(test.rows() * seg_len);

  // Diagonal prefix sums of the TR-by-TR Gram matrix give every segment
  // cross product in O(1).
  Eigen::MatrixXd diag = test.transpose() * ref;
  for (Eigen::Index t = 1; t < d; ++t)
    for (Eigen::Index s = 1; s < d; ++s) diag(t, s) += diag(t - 1, s - 1);

  auto window_sums = [&](const Eigen::MatrixXd& f, Eigen::VectorXd& sum, Eigen::VectorXd& sq) {
    const Eigen::VectorXd col_sum = f.colwise().sum().transpose();
    const Eigen::VectorXd col_sq = f.colwise().squaredNorm().transpose();
    sum.resize(n);
    sq.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
      sum[t] = col_sum.segment(t, seg_len).sum();
      sq[t] = col_sq.segment(t, seg_len).sum();
    }
  };
  Eigen::VectorXd sa, saa, sb, sbb;
  window_sums(test, sa, saa);
  window_sums(ref, sb, sbb);

  auto variance = [count](double s, double sq) {
    const double v = sq - s * s / count;
    return v > 1e-12 * sq ? v : 0.0;
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double va = variance(sa[t], saa[t]);
    for (Eigen::Index s = 0; s < n; ++s) {
      const double vb = variance(sb[s], sbb[s]);
      if (va == 0.0 || vb == 0.0) {
        out(t, s) = nan;
        continue;
      }
      double sab = diag(t + seg_len - 1, s + seg_len - 1);
      if (t > 0 && s > 0) sab -= diag(t - 1, s - 1);
      out(t, s) = std::clamp((sab - sa[t] * sb[s] / count) / std::sqrt(va * vb), -1.0, 1.0);
    }
  }
  return out;
}

bool is_candidate(int t, int s, const MatchingConfig& cfg) {
  return s == t || !cfg.exclusion || std::abs(s - t) >= cfg.seg_len;
}

int count_matches(const Eigen::MatrixXd& scores, const MatchingConfig& cfg) {
  cfg.validate();
  if (scores.rows() != scores.cols()) throw InvalidInput("score matrix must be square");
  int correct = 0;
  for (int t = 0; t < scores.rows(); ++t) {
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < scores.cols(); ++s) {
      if (!is_candidate(t, s, cfg)) continue;
      const double v = scores(t, s);
      if (std::isnan(v)) continue;
      if (best < 0 || v > best_v) {
        best = s;
        best_v = v;
      }
    }
    if (best == t) ++correct;
  }
  return correct;
}

double time_segment_match(const Eigen::MatrixXd& test, const Eigen::MatrixXd& ref, const MatchingConfig& cfg) {
  cfg.validate();
  const Eigen::MatrixXd scores = segment_scores(test, ref, cfg.seg_len);
  return static_cast<double>(count_matches(scores, cfg)) / static_cast<double>(scores.rows());
}

double chance_accuracy(int d_test, const MatchingConfig& cfg) {
  cfg.validate();
  if (d_test < cfg.seg_len) throw InvalidInput("test duration is shorter than the segment length");
  const int n = d_test - cfg.seg_len + 1;
  double total = 0;
  for (int t = 0; t < n; ++t) {
    int candidates = 0;
    for (int s = 0; s < n; ++s) candidates += is_candidate(t, s, cfg);
    total += 1.0 / candidates;
  }
  return total / n;
}

void ScoreAccumulator::add(const Eigen::MatrixXd& scores) {
  if (count_ == 0) {
    sum_ = Eigen::MatrixXd::Zero(scores.rows(), scores.cols());
  } else if (scores.rows() != sum_.rows() || scores.cols() != sum_.cols()) {
    throw InvalidInput("score matrices from different locations have different candidate sets");
  }
  sum_ += scores.unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; });
  ++count_;
}

double whole_brain_aggregate(std::span<const Eigen::MatrixXd> scores, const MatchingConfig& cfg) {
  if (scores.empty()) throw InvalidInput("whole_brain_aggregate: no locations");
  ScoreAccumulator acc;
  for (const auto& s : scores) acc.add(s);
  return static_cast<double>(count_matches(acc.total(), cfg)) / static_cast<double>(acc.total().rows());
}

void SvmConfig::validate() const {
  if (!(lambda > 0.0)) throw InvalidInput("svm lambda must be > 0");
  if (epochs < 1) throw InvalidInput("svm epochs must be >= 1");
}

LinearSvm::LinearSvm(const Eigen::MatrixXd& x, std::span<const int> labels, int classes, const SvmConfig& cfg) {
  cfg.validate();
  if (classes < 2) throw InvalidInput("classification needs at least 2 classes");
  if (static_cast<std::size_t>(x.cols()) != labels.size()) throw InvalidInput("one label per training vector");
  std::vector<int> per_class(static_cast<std::size_t>(classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw InvalidInput("label out of range");
    ++per_class[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      throw InvalidInput("class " + std::to_string(c) + " has no training examples");
    }
  }
  const Eigen::Index dim = x.rows();
  const Eigen::Index n = x.cols();
  w_ = Eigen::MatrixXd::Zero(classes, dim + 1);
  Eigen::VectorXd xi(dim + 1);
  Rng rng(cfg.seed);
  const long long steps = static_cast<long long>(cfg.epochs) * n;
  for (long long step = 1; step <= steps; ++step) {
    const Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    xi.head(dim) = x.col(i);
    xi[dim] = 1.0;
    const double eta = 1.0 / (cfg.lambda * static_cast<double>(step));
    const Eigen::VectorXd margins = w_ * xi;
    w_ *= 1.0 - eta * cfg.lambda;
    for (int c = 0; c < classes; ++c) {
      const double y = labels[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
      if (y * margins[c] < 1.0) w_.row(c) += eta * y * xi.transpose();
    }
  }
}

int LinearSvm::predict(const Eigen::VectorXd& x) const {
  if (x.size() + 1 != w_.cols()) throw InvalidInput("feature length does not match the classifier");
  const Eigen::VectorXd s = w_.leftCols(x.size()) * x + w_.col(x.size());
  Eigen::Index best = 0;
  s.maxCoeff(&best);
  return static_cast<int>(best);
}

double scene_recall_classify(const Eigen::MatrixXd& train_x, std::span<const int> train_labels,
                             const Eigen::MatrixXd& test_x, std::span<const int> test_labels, int classes,
                             const SvmConfig& cfg) {
  if (static_cast<std::size_t>(test_x.cols()) != test_labels.size() || test_labels.empty()) {
    throw InvalidInput("one label per test vector");
  }
  if (test_x.rows() != train_x.rows()) throw InvalidInput("train and test features differ in length");
  const LinearSvm svm(train_x, train_labels, classes, cfg);
  int correct = 0;
  for (Eigen::Index j = 0; j < test_x.cols(); ++j) correct += svm.predict(test_x.col(j)) == test_labels[j];
  return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

DispersionReport dispersion_report(const Dims3& dims, std::span<const std::uint8_t> roi, const Eigen::VectorXd& mapped,
                                   int radius, std::string method) {
  if (roi.size() != dims.count() || static_cast<std::size_t>(mapped.size()) != dims.count()) {
    throw InvalidInput("dispersion: ROI and mapped volume must match the dims");
  }
  if (std::none_of(roi.begin(), roi.end(), [](std::uint8_t f) { return f != 0; })) {
    throw InvalidInput("dispersion: empty ROI");
  }
  if (radius < 0) throw InvalidInput("dispersion: negative radius");
  DispersionReport r;
  r.method = std::move(method);
  r.radius = radius;
  const Eigen::ArrayXd energy = mapped.array().square();
  r.total_energy = energy.sum();
  const int max_r = std::max({dims.x, dims.y, dims.z, radius});
  for (int rr = 0; rr <= max_r; ++rr) {
    double inside = 1.0;
    if (r.total_energy > 0) {
      const auto grown = dilate(dims, roi, rr);
      double e = 0;
      for (std::size_t v = 0; v < grown.size(); ++v) e += grown[v] ? energy[static_cast<Eigen::Index>(v)] : 0.0;
      inside = std::min(1.0, e / r.total_energy);
    }
    r.energy_curve.push_back(inside);
    if (r.r95 < 0 && inside >= 0.95) r.r95 = rr;
    if (rr >= radius && inside >= 1.0) break;
  }
  r.energy_inside = r.energy_curve[static_cast<std::size_t>(radius)];

  const double peak = mapped.cwiseAbs().maxCoeff();
  if (peak > 0) {
    const double thr = 0.1 * peak;
    std::size_t sel = 0, both = 0, in_roi = 0;
    for (std::size_t v = 0; v < roi.size(); ++v) {
      const bool s = std::abs(mapped[static_cast<Eigen::Index>(v)]) >= thr;
      sel += s;
      in_roi += roi[v] != 0;
      both += s && roi[v] != 0;
    }
    r.dice = 2.0 * static_cast<double>(both) / static_cast<double>(sel + in_roi);
  }
  return r;
}

std::vector<std::uint8_t> cube_roi(const Dims3& dims, const Coord& center, int half_width) {
  if (!dims.contains(center.x, center.y, center.z)) throw InvalidInput("ROI center outside the volume");
  if (half_width < 0) throw InvalidInput("ROI half width must be >= 0");
  std::vector<std::uint8_t> roi(dims.count(), 0);
  roi[dims.index(center.x, center.y, center.z)] = 1;
  return dilate(dims, roi, half_width);
}

}  // namespace fmriagg
