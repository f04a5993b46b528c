#include "fmriagg/methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fmriagg/error.hpp"

namespace fmriagg {

namespace {

constexpr std::pair<Method, const char*> kNames[] = {
    {Method::wbsrm, "wbsrm"},
    {Method::ssrm, "ssrm"},
    {Method::sl, "sl"},
    {Method::voxel, "voxel"},
    {Method::cae, "cae"},
    {Method::mvae_linear, "mvae-linear"},
    {Method::mvae_nonlinear, "mvae-nonlinear"},
};

}  // namespace

std::string method_name(Method m) {
  for (const auto& [k, n] : kNames)
    if (k == m) return n;
  throw InvalidInput("unknown method");
}

Method parse_method(const std::string& name) {
  for (const auto& [k, n] : kNames)
    if (name == n) return k;
  throw InvalidInput("unknown method '" + name + "'");
}

void MethodConfig::validate() const {
  if (srm.k < 1) throw InvalidInput("k must be >= 1");
  if (srm.max_iters < 0) throw InvalidInput("srm iterations must be >= 0");
  if (edge < 1 || edge % 2 == 0) throw InvalidInput("searchlight edge must be odd and >= 1");
  if (method == Method::cae) {
    cae.validate();
    cae_train.validate();
  }
  if (method == Method::mvae_linear || method == Method::mvae_nonlinear) mvae.validate();
}

namespace {

Coord volume_center(const Dims3& d) { return {d.x / 2, d.y / 2, d.z / 2}; }

Eigen::VectorXd to_masked(const Eigen::VectorXd& full, const BrainMask& mask) {
  if (static_cast<std::size_t>(full.size()) != mask.dims().count()) {
    throw InvalidInput("map has " + std::to_string(full.size()) + " voxels, the volume has " +
                       std::to_string(mask.dims().count()));
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(mask.count()));
  for (std::size_t r = 0; r < mask.count(); ++r) out[static_cast<Eigen::Index>(r)] = full[static_cast<Eigen::Index>(mask.indices()[r])];
  return out;
}

Eigen::VectorXd from_masked(const Eigen::VectorXd& rows, const BrainMask& mask) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mask.dims().count()));
  for (std::size_t r = 0; r < mask.count(); ++r) out[static_cast<Eigen::Index>(mask.indices()[r])] = rows[static_cast<Eigen::Index>(r)];
  return out;
}

std::vector<Eigen::MatrixXd> masked_all(std::span<const Volume4D> vols, const BrainMask& mask) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& v : vols) out.push_back(masked_matrix(v, mask));
  return out;
}

void check_subject(int i, int m) {
  if (i < 0 || i >= m) throw InvalidInput("subject " + std::to_string(i) + " out of range [0," + std::to_string(m) + ")");
}

Encoding constant_encoding(Eigen::MatrixXd features) {
  auto f = std::make_shared<const Eigen::MatrixXd>(std::move(features));
  return [f](std::size_t) { return *f; };
}

class WbSrm final : public FittedMethod {
 public:
  WbSrm(SrmModel model, BrainMask mask)
      : model_(std::move(model)), mask_(std::move(mask)), centers_{volume_center(mask_.dims())} {}
  Method method() const override { return Method::wbsrm; }
  int subjects() const override { return model_.subjects(); }
  const std::vector<Coord>& centers() const override { return centers_; }
  Encoding encode(int i, const Volume4D& data) const override {
    check_subject(i, subjects());
    return constant_encoding(project(model_.w[i], masked_matrix(data, mask_)));
  }
  Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const override {
    check_subject(from, subjects());
    check_subject(to, subjects());
    return from_masked(map_between_subjects(model_.w[to], model_.w[from], to_masked(m, mask_)), mask_);
  }
  int locality_radius() const override { return -1; }

 private:
  SrmModel model_;
  BrainMask mask_;
  std::vector<Coord> centers_;
};

class Ssrm final : public FittedMethod {
 public:
  Ssrm(SearchlightModelSet set, int m) : set_(std::make_shared<const SearchlightModelSet>(std::move(set))), m_(m) {
    for (const auto& sl : set_->centers) centers_.push_back(sl.center);
  }
  Method method() const override { return Method::ssrm; }
  int subjects() const override { return m_; }
  const std::vector<Coord>& centers() const override { return centers_; }
  Encoding encode(int i, const Volume4D& data) const override {
    check_subject(i, m_);
    auto vol = std::make_shared<const Volume4D>(data);
    return [set = set_, vol, i](std::size_t c) -> Eigen::MatrixXd {
      return set->models[c].w[i].transpose() * extract_searchlight(*vol, set->centers[c]);
    };
  }
  Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const override {
    check_subject(from, m_);
    check_subject(to, m_);
    return ssrm_map_between_subjects(*set_, from, to, m);
  }
  int locality_radius() const override { return set_->edge - 1; }

 private:
  std::shared_ptr<const SearchlightModelSet> set_;
  int m_;
  std::vector<Coord> centers_;
};

// Raw windows without alignment: the between-subject map is the identity.
class RawWindows final : public FittedMethod {
 public:
  RawWindows(Method method, std::vector<Searchlight> windows, int m)
      : method_(method), windows_(std::make_shared<const std::vector<Searchlight>>(std::move(windows))), m_(m) {
    for (const auto& sl : *windows_) centers_.push_back(sl.center);
  }
  Method method() const override { return method_; }
  int subjects() const override { return m_; }
  const std::vector<Coord>& centers() const override { return centers_; }
  Encoding encode(int i, const Volume4D& data) const override {
    check_subject(i, m_);
    auto vol = std::make_shared<const Volume4D>(data);
    return [w = windows_, vol](std::size_t c) { return extract_searchlight(*vol, (*w)[c]); };
  }
  Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const override {
    check_subject(from, m_);
    check_subject(to, m_);
    return m;
  }
  int locality_radius() const override { return 0; }

 private:
  Method method_;
  std::shared_ptr<const std::vector<Searchlight>> windows_;
  int m_;
  std::vector<Coord> centers_;
};

class Cae final : public FittedMethod {
 public:
  Cae(CaeModel model, TrainResult trace, const BrainMask& mask)
      : model_(std::make_shared<const CaeModel>(std::move(model))), trace_(std::move(trace)), voxels_(mask.indices()) {
    for (std::size_t v : voxels_) centers_.push_back(coord_of(mask.dims(), v));
  }
  Method method() const override { return Method::cae; }
  int subjects() const override { return model_->m; }
  const std::vector<Coord>& centers() const override { return centers_; }
  Encoding encode(int i, const Volume4D& data) const override {
    check_subject(i, subjects());
    auto maps = std::make_shared<const std::vector<Eigen::MatrixXd>>(cae_encode_heldout(*model_, i, data));
    return [maps, vox = voxels_](std::size_t c) {
      const auto row = static_cast<Eigen::Index>(vox[c]);
      Eigen::MatrixXd out(maps->front().cols(), static_cast<Eigen::Index>(maps->size()));
      for (std::size_t t = 0; t < maps->size(); ++t) out.col(static_cast<Eigen::Index>(t)) = (*maps)[t].row(row).transpose();
      return out;
    };
  }
  Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const override {
    return cae_map_between_subjects(*model_, from, to, m);
  }
  int locality_radius() const override { return model_->cfg.f - 1; }
  const TrainResult* trace() const override { return &trace_; }

 private:
  std::shared_ptr<const CaeModel> model_;
  TrainResult trace_;
  std::vector<std::size_t> voxels_;
  std::vector<Coord> centers_;
};

class LinearMvaeMethod final : public FittedMethod {
 public:
  LinearMvaeMethod(LinearMvaeFit fit, BrainMask mask)
      : fit_(std::move(fit)), mask_(std::move(mask)), centers_{volume_center(mask_.dims())} {}
  Method method() const override { return Method::mvae_linear; }
  int subjects() const override { return fit_.model.subjects(); }
  const std::vector<Coord>& centers() const override { return centers_; }
  Encoding encode(int i, const Volume4D& data) const override {
    check_subject(i, subjects());
    return constant_encoding(fit_.model.w[i].transpose() * masked_matrix(data, mask_));
  }
  Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const override {
    check_subject(from, subjects());
    check_subject(to, subjects());
    const auto& w = fit_.model.w;
    return from_masked(w[to] * (w[from].transpose() * to_masked(m, mask_)), mask_);
  }
  int locality_radius() const override { return -1; }
  const TrainResult* trace() const override { return &fit_.trace; }

 private:
  LinearMvaeFit fit_;
  BrainMask mask_;
  std::vector<Coord> centers_;
};

class NonlinearMvaeMethod final : public FittedMethod {
 public:
  NonlinearMvaeMethod(NonlinearMvaeFit fit, BrainMask mask)
      : fit_(std::move(fit)), mask_(std::move(mask)), centers_{volume_center(mask_.dims())} {}
  Method method() const override { return Method::mvae_nonlinear; }
  int subjects() const override { return fit_.model.subjects(); }
  const std::vector<Coord>& centers() const override { return centers_; }
  Encoding encode(int i, const Volume4D& data) const override {
    check_subject(i, subjects());
    return constant_encoding(hidden(i, masked_matrix(data, mask_)));
  }
  Eigen::VectorXd map_between(int from, int to, const Eigen::VectorXd& m) const override {
    check_subject(from, subjects());
    check_subject(to, subjects());
    const auto& dec = fit_.model.dec[to];
    const Eigen::MatrixXd x = to_masked(m, mask_);
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(x.rows(), 1);
    const Eigen::VectorXd mapped = dec * (hidden(from, x) - hidden(from, zero));
    return from_masked(mapped, mask_);
  }
  int locality_radius() const override { return -1; }
  const TrainResult* trace() const override { return &fit_.trace; }

 private:
  Eigen::MatrixXd hidden(int i, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd z = fit_.model.enc[i] * x;
    z.colwise() += fit_.model.enc_bias[i];
    return tanh_forward(z);
  }

  NonlinearMvaeFit fit_;
  BrainMask mask_;
  std::vector<Coord> centers_;
};

void check_recordings(std::span<const Volume4D> vols, const BrainMask& mask) {
  if (vols.size() < 2) throw InvalidInput("need at least 2 subjects");
  for (std::size_t i = 0; i < vols.size(); ++i) {
    if (!(vols[i].dims() == mask.dims())) throw InvalidInput("subject " + std::to_string(i) + " dims differ from the mask");
    if (vols[i].trs() != vols.front().trs()) throw InvalidInput("subjects have different TR counts");
  }
  if (mask.count() == 0) throw InvalidInput("empty brain mask");
}

}  // namespace

std::unique_ptr<FittedMethod> fit_method(const MethodConfig& cfg, std::span<const Volume4D> train,
                                         const BrainMask& mask) {
  cfg.validate();
  check_recordings(train, mask);
  const int m = static_cast<int>(train.size());
  switch (cfg.method) {
    case Method::wbsrm:
      return std::make_unique<WbSrm>(fit_srm(masked_all(train, mask), cfg.srm), mask);
    case Method::ssrm:
      return std::make_unique<Ssrm>(fit_s_srm(train, mask, cfg.edge, cfg.srm, cfg.min_vs), m);
    case Method::sl:
      return std::make_unique<RawWindows>(Method::sl, enumerate_searchlights(mask, cfg.edge, std::max<std::size_t>(cfg.min_vs, 1)), m);
    case Method::voxel:
      return std::make_unique<RawWindows>(Method::voxel, enumerate_searchlights(mask, 1, 1), m);
    case Method::cae: {
      CaeModel model = cae_init(m, mask.dims(), cfg.cae, cfg.cae_train.seed);
      CaeData data(std::vector<Volume4D>(train.begin(), train.end()));
      TrainResult trace = cae_train(model, data, cfg.cae_train);
      return std::make_unique<Cae>(std::move(model), std::move(trace), mask);
    }
    case Method::mvae_linear:
      return std::make_unique<LinearMvaeMethod>(fit_linear_mvae(masked_all(train, mask), cfg.mvae), mask);
    case Method::mvae_nonlinear:
      return std::make_unique<NonlinearMvaeMethod>(fit_nonlinear_mvae(masked_all(train, mask), cfg.mvae), mask);
  }
  throw InvalidInput("unknown method");
}

void Exp1Config::validate() const {
  matching.validate();
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw InvalidInput("top_fraction must be in (0,1]");
  if (!(map_threshold >= 0.0 && map_threshold <= 1.0)) throw InvalidInput("map_threshold must be in [0,1]");
}

namespace {

double sem_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1)) / std::sqrt(n);
}

}  // namespace

Exp1Result run_exp1(std::span<const Volume4D> subjects, const BrainMask& mask, const MethodConfig& method,
                    const Exp1Config& cfg) {
  cfg.validate();
  check_recordings(subjects, mask);
  const int m = static_cast<int>(subjects.size());
  const int d = subjects.front().trs();
  const int half = d / 2;
  if (std::min(half, d - half) < cfg.matching.seg_len) {
    throw InvalidInput("each half has fewer TRs than the segment length");
  }

  Exp1Result res;
  res.method = method.method;
  std::vector<std::vector<double>> per_subject;  // [subject][location]
  double wb_sum = 0;
  for (int fold = 0; fold < 2; ++fold) {
    const int tr_begin = fold == 0 ? 0 : half;
    const int tr_end = fold == 0 ? half : d;
    const int te_begin = fold == 0 ? half : 0;
    const int te_end = fold == 0 ? d : half;
    std::vector<Volume4D> train, test;
    for (const auto& s : subjects) {
      train.push_back(slice_trs(s, tr_begin, tr_end));
      test.push_back(slice_trs(s, te_begin, te_end));
    }
    const auto fitted = fit_method(method, train, mask);
    train.clear();
    if (fold == 0) {
      res.centers = fitted->centers();
      per_subject.assign(static_cast<std::size_t>(m), std::vector<double>(res.centers.size(), 0.0));
    } else if (fitted->centers() != res.centers) {
      throw InvalidInput("the two folds produced different location sets");
    }
    std::vector<Encoding> enc;
    for (int i = 0; i < m; ++i) enc.push_back(fitted->encode(i, test[i]));

    std::vector<ScoreAccumulator> acc(static_cast<std::size_t>(m));
    std::vector<Eigen::MatrixXd> feats(static_cast<std::size_t>(m));
    for (std::size_t loc = 0; loc < res.centers.size(); ++loc) {
      for (int i = 0; i < m; ++i) feats[i] = enc[i](loc);
      Eigen::MatrixXd sum = feats[0];
      for (int i = 1; i < m; ++i) sum += feats[i];
      for (int i = 0; i < m; ++i) {
        const Eigen::MatrixXd ref = (sum - feats[i]) / (m - 1);
        const Eigen::MatrixXd scores = segment_scores(feats[i], ref, cfg.matching.seg_len);
        per_subject[i][loc] += 0.5 * count_matches(scores, cfg.matching) / static_cast<double>(scores.rows());
        acc[i].add(scores);
      }
    }
    for (int i = 0; i < m; ++i) {
      wb_sum += count_matches(acc[i].total(), cfg.matching) / static_cast<double>(acc[i].total().rows());
    }
    res.chance += 0.5 * chance_accuracy(te_end - te_begin, cfg.matching);
  }

  res.location_accuracy.assign(res.centers.size(), 0.0);
  std::vector<double> subject_top;
  for (int i = 0; i < m; ++i) {
    for (std::size_t loc = 0; loc < res.centers.size(); ++loc) res.location_accuracy[loc] += per_subject[i][loc] / m;
    subject_top.push_back(
        top_fraction_summary(assemble_accuracy_map(res.centers, per_subject[i], mask.dims(), cfg.map_threshold),
                             cfg.top_fraction));
  }
  res.map = assemble_accuracy_map(res.centers, res.location_accuracy, mask.dims(), cfg.map_threshold);
  res.top_accuracy = top_fraction_summary(res.map, cfg.top_fraction);
  res.mean = std::accumulate(subject_top.begin(), subject_top.end(), 0.0) / m;
  res.sem = sem_of(subject_top);
  res.best_location = *std::max_element(res.location_accuracy.begin(), res.location_accuracy.end());
  res.whole_brain = wb_sum / (2.0 * m);
  return res;
}

Exp2Result run_exp2(std::span<const Volume4D> movie, const SceneRecallSet& recall, const BrainMask& mask,
                    const MethodConfig& method, const SvmConfig& svm) {
  check_recordings(movie, mask);
  const int m = static_cast<int>(movie.size());
  if (recall.recall.size() != movie.size()) throw InvalidInput("recall set and movie have different subject counts");
  const int n = recall.scenes.n_scenes;
  if (n < 2) throw InvalidInput("scene recall needs at least 2 scenes");

  const auto fitted = fit_method(method, movie, mask);
  std::vector<Encoding> enc;
  for (int i = 0; i < m; ++i) {
    if (recall.recall[i].rows() != static_cast<Eigen::Index>(mask.dims().count()) || recall.recall[i].cols() != n) {
      throw InvalidInput("recall matrix of subject " + std::to_string(i) + " has the wrong shape");
    }
    enc.push_back(fitted->encode(i, volume_from_matrix(mask.dims(), recall.recall[i])));
  }
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::iota(labels.begin(), labels.end(), 0);
  std::vector<int> train_labels;
  for (int j = 0; j < m - 1; ++j) train_labels.insert(train_labels.end(), labels.begin(), labels.end());

  auto loso = [&](const std::vector<Eigen::MatrixXd>& feats, int held) {
    Eigen::MatrixXd train_x(feats.front().rows(), static_cast<Eigen::Index>(n) * (m - 1));
    Eigen::Index col = 0;
    for (int j = 0; j < m; ++j) {
      if (j == held) continue;
      train_x.middleCols(col, n) = feats[j];
      col += n;
    }
    return scene_recall_classify(train_x, train_labels, feats[held], labels, n, svm);
  };

  Exp2Result res;
  res.method = method.method;
  res.centers = fitted->centers();
  res.chance = 1.0 / n;
  res.location_accuracy.assign(res.centers.size(), 0.0);
  std::vector<std::vector<Eigen::MatrixXd>> blocks(static_cast<std::size_t>(m));
  std::vector<Eigen::MatrixXd> feats(static_cast<std::size_t>(m));
  for (std::size_t loc = 0; loc < res.centers.size(); ++loc) {
    for (int i = 0; i < m; ++i) {
      feats[i] = enc[i](loc);
      blocks[i].push_back(feats[i]);
    }
    for (int h = 0; h < m; ++h) res.location_accuracy[loc] += loso(feats, h) / m;
  }
  for (int i = 0; i < m; ++i) {
    Eigen::Index rows = 0;
    for (const auto& b : blocks[i]) rows += b.rows();
    Eigen::MatrixXd all(rows, n);
    Eigen::Index r = 0;
    for (const auto& b : blocks[i]) {
      all.middleRows(r, b.rows()) = b;
      r += b.rows();
    }
    feats[i] = std::move(all);
    blocks[i].clear();
  }
  std::vector<double> wb;
  for (int h = 0; h < m; ++h) wb.push_back(loso(feats, h));
  res.whole_brain = std::accumulate(wb.begin(), wb.end(), 0.0) / m;
  res.whole_brain_sem = sem_of(wb);
  res.best_location = *std::max_element(res.location_accuracy.begin(), res.location_accuracy.end());
  return res;
}

DispersionReport dispersion_experiment(const FittedMethod& fitted, const Dims3& dims,
                                       std::span<const std::uint8_t> roi, int i, int j) {
  if (roi.size() != dims.count()) throw InvalidInput("ROI does not match the volume dims");
  Eigen::VectorXd m(static_cast<Eigen::Index>(roi.size()));
  for (std::size_t v = 0; v < roi.size(); ++v) m[static_cast<Eigen::Index>(v)] = roi[v] ? 1.0 : 0.0;
  const Eigen::VectorXd mapped = fitted.map_between(i, j, m);
  return dispersion_report(dims, roi, mapped, std::max(0, fitted.locality_radius()), method_name(fitted.method()));
}

SynthSpec standard_synth_spec(std::uint64_t seed) {
  SynthSpec s;
  s.m = 5;
  s.dims = {12, 12, 12};
  s.d = 200;
  s.k_true = 4;
  s.topo_radius = 1;
  s.jitter = 1;
  s.regions = 1;
  s.noise_sigma = 1.0;
  s.smoothness = 0.2;
  s.seed = seed;
  return s;
}

}  // namespace fmriagg
