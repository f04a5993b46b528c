#include "fmriagg/searchlight.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

namespace {

void check_volumes(std::span<const Volume4D> vols, const BrainMask& mask) {
  if (vols.size() < 2) throw InvalidInput("searchlight analysis needs at least 2 subjects");
  for (const auto& v : vols) {
    if (!(v.dims() == mask.dims()) || v.trs() != vols.front().trs()) {
      throw InvalidInput("all volumes must share dims and TR count with the mask");
    }
  }
}

}  // namespace

std::uint64_t center_seed(std::uint64_t base_seed, const Coord& c) {
  return base_seed ^ derive_seed({static_cast<std::uint64_t>(c.x), static_cast<std::uint64_t>(c.y),
                                  static_cast<std::uint64_t>(c.z)});
}

SearchlightModelSet fit_s_srm(std::span<const Volume4D> vols, const BrainMask& mask, int edge, const SrmConfig& cfg,
                              std::size_t min_vs) {
  check_volumes(vols, mask);
  if (min_vs == 0) min_vs = static_cast<std::size_t>(cfg.k);
  SearchlightModelSet set;
  set.edge = edge;
  for (auto& sl : enumerate_searchlights(mask, edge, 1)) {
    if (sl.vs() < min_vs || sl.vs() < static_cast<std::size_t>(cfg.k)) {
      set.skipped.push_back(sl.center);
    } else {
      set.centers.push_back(std::move(sl));
    }
  }
  if (set.centers.empty()) throw InvalidInput("S-SRM: no searchlight has at least k voxels");

  set.models.reserve(set.centers.size());
  std::vector<Eigen::MatrixXd> x(vols.size());
  for (const auto& sl : set.centers) {
    for (std::size_t i = 0; i < vols.size(); ++i) x[i] = extract_searchlight(vols[i], sl);
    SrmConfig local = cfg;
    local.seed = center_seed(cfg.seed, sl.center);
    local.initial_w.reset();
    set.models.push_back(fit_srm(x, local));
  }
  return set;
}

SlBaseline::SlBaseline(std::vector<Volume4D> vols, const BrainMask& mask, int edge, std::size_t min_vs)
    : edge_(edge), vols_(std::make_shared<const std::vector<Volume4D>>(std::move(vols))) {
  check_volumes(*vols_, mask);
  centers_ = enumerate_searchlights(mask, edge, min_vs);
  if (centers_.empty()) throw InvalidInput("SL baseline: no retained searchlight");
}

Eigen::MatrixXd SlBaseline::window(std::size_t c, int subject) const {
  return extract_searchlight(vols_->at(static_cast<std::size_t>(subject)), centers_.at(c));
}

SlBaseline fit_sl_baseline(std::vector<Volume4D> vols, const BrainMask& mask, int edge, std::size_t min_vs) {
  return {std::move(vols), mask, edge, min_vs};
}

std::size_t AccuracyMap::center_count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](double v) { return v != kSentinel; }));
}

AccuracyMap assemble_accuracy_map(std::span<const Coord> centers, std::span<const double> accuracies, Dims3 dims,
                                  double threshold) {
  if (centers.size() != accuracies.size()) throw InvalidInput("accuracy map: one accuracy per center required");
  AccuracyMap map{dims, std::vector<double>(dims.count(), AccuracyMap::kSentinel)};
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double a = accuracies[c];
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidInput("accuracy map: accuracy outside [0,1]");
    if (!dims.contains(centers[c].x, centers[c].y, centers[c].z)) throw InvalidInput("accuracy map: center out of bounds");
    map.values[dims.index(centers[c].x, centers[c].y, centers[c].z)] = a < threshold ? 0.0 : a;
  }
  return map;
}

double top_fraction_summary(const AccuracyMap& map, double frac) {
  if (!(frac > 0.0 && frac <= 1.0)) throw InvalidInput("top fraction must be in (0,1]");
  std::vector<double> vals;
  for (double v : map.values)
    if (v != AccuracyMap::kSentinel) vals.push_back(v);
  if (vals.empty()) throw InvalidInput("top fraction of an empty accuracy map");
  // Guard against 0.1 * 30 = 3.0000000000000004 style round-up.
  auto n = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(vals.size()) - 1e-9));
  n = std::clamp<std::size_t>(n, 1, vals.size());
  std::stable_sort(vals.begin(), vals.end(), std::greater<>());
  return std::accumulate(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

Volume4D accuracy_volume(const AccuracyMap& map) { return {map.dims, 1, map.values}; }

Eigen::VectorXd ssrm_map_between_subjects(const SearchlightModelSet& set, int from, int to, const Eigen::VectorXd& map) {
  if (set.centers.empty()) throw InvalidInput("S-SRM mapping needs a fitted model set");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(map.size());
  Eigen::VectorXd local;
  for (std::size_t c = 0; c < set.centers.size(); ++c) {
    const auto& sl = set.centers[c];
    const auto& model = set.models[c];
    if (from < 0 || to < 0 || from >= model.subjects() || to >= model.subjects()) {
      throw InvalidInput("S-SRM mapping: subject index out of range");
    }
    local.resize(static_cast<Eigen::Index>(sl.vs()));
    bool any = false;
    for (std::size_t r = 0; r < sl.vs(); ++r) {
      local[static_cast<Eigen::Index>(r)] = map[static_cast<Eigen::Index>(sl.linear[r])];
      any = any || local[static_cast<Eigen::Index>(r)] != 0.0;
    }
    if (!any) continue;
    const Eigen::VectorXd mapped = map_between_subjects(model.w[to], model.w[from], local);
    for (std::size_t r = 0; r < sl.vs(); ++r) out[static_cast<Eigen::Index>(sl.linear[r])] += mapped[static_cast<Eigen::Index>(r)];
  }
  return out;
}

}  // namespace fmriagg
