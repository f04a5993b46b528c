#include "fmriagg/synthgen.hpp"

#include <cmath>
#include <string>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"

namespace fmriagg {

namespace {

enum Stream : std::uint64_t { kShared = 1, kAnchors = 2, kJitter = 3, kNoise = 4, kRecallNoise = 5, kTemplate = 6 };

int support_margin(const SynthSpec& s) { return s.topo_radius + s.jitter; }

int region_of(const SynthSpec& s, int q) { return q % s.regions; }

std::vector<Coord> place_regions(const SynthSpec& spec) {
  const int margin = support_margin(spec);
  Rng rng(derive_seed({spec.seed, kAnchors}));
  std::uniform_int_distribution<int> ux(margin, spec.dims.x - 1 - margin);
  std::uniform_int_distribution<int> uy(margin, spec.dims.y - 1 - margin);
  std::uniform_int_distribution<int> uz(margin, spec.dims.z - 1 - margin);
  std::vector<Coord> anchors;
  for (int g = 0; g < spec.regions; ++g) {
    const int x = ux(rng);
    const int y = uy(rng);
    anchors.push_back({x, y, uz(rng)});
  }
  return anchors;
}

Eigen::MatrixXd noisy_signal(const SynthSpec& spec, const Eigen::MatrixXd& topo, const Eigen::MatrixXd& shared,
                             std::uint64_t noise_seed) {
  Eigen::MatrixXd x = spec.signal_gain * (topo * shared);
  if (spec.noise_sigma > 0) {
    Rng rng(noise_seed);
    x += gaussian_matrix(x.rows(), x.cols(), rng, spec.noise_sigma);
  }
  // Voxels are centered and the subject is scaled as a whole to unit mean
  // variance; per-voxel scaling would change the column space of W_true.
  x.colwise() -= x.rowwise().mean();
  const double var = x.squaredNorm() / static_cast<double>(x.size());
  if (var > 0) x /= std::sqrt(var);
  return x;
}

}  // namespace

void SynthSpec::validate() const {
  if (m < 2) throw InvalidInput("synth: need at least 2 subjects");
  if (k_true < 1) throw InvalidInput("synth: k_true must be >= 1");
  if (d < 2) throw InvalidInput("synth: d must be >= 2");
  if (dims.x < 1 || dims.y < 1 || dims.z < 1) throw InvalidInput("synth: dims must be >= 1");
  if (topo_radius < 0) throw InvalidInput("synth: topo_radius must be >= 0");
  if (jitter < 0 || jitter > topo_radius) throw InvalidInput("synth: jitter must be in [0, topo_radius]");
  if (!(noise_sigma >= 0)) throw InvalidInput("synth: noise_sigma must be >= 0");
  if (!(smoothness >= 0 && smoothness < 1)) throw InvalidInput("synth: smoothness must be in [0,1)");
  if (!(signal_gain >= 0)) throw InvalidInput("synth: signal_gain must be >= 0");
  if (regions < 1 || regions > k_true) throw InvalidInput("synth: regions must be in [1, k_true]");
  const int box = (2 * topo_radius + 1) * (2 * topo_radius + 1) * (2 * topo_radius + 1);
  if ((k_true + regions - 1) / regions > box) {
    throw InvalidInput("synth: more factors per region than voxels in a support box");
  }
  const int need = 2 * support_margin(*this) + 1;
  if (dims.x < need || dims.y < need || dims.z < need) {
    throw InvalidInput("synth: factor support of extent " + std::to_string(need) + " does not fit the volume");
  }
}

Eigen::MatrixXd gen_shared_response(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed({spec.seed, kShared}));
  std::normal_distribution<double> normal;
  const double a = spec.smoothness;
  const double innovation = std::sqrt(1.0 - a * a);
  Eigen::MatrixXd s(spec.k_true, spec.d);
  for (int q = 0; q < spec.k_true; ++q) {
    double prev = normal(rng);
    s(q, 0) = prev;
    for (int t = 1; t < spec.d; ++t) {
      prev = a * prev + innovation * normal(rng);
      s(q, t) = prev;
    }
  }
  return zscore_rows(s);
}

SynthDataset gen_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthDataset out;
  auto& truth = out.truth;
  truth.shared = gen_shared_response(spec);
  const auto regions = place_regions(spec);
  for (int q = 0; q < spec.k_true; ++q) truth.anchors.push_back(regions[region_of(spec, q)]);

  // One orthonormal template per region over the support box, shared by all
  // subjects; a subject sees it shifted by its own jitter.
  const int r = spec.topo_radius;
  const int side = 2 * r + 1;
  std::vector<Eigen::MatrixXd> templates;
  for (int g = 0; g < spec.regions; ++g) {
    int members = 0;
    for (int q = 0; q < spec.k_true; ++q) members += region_of(spec, q) == g;
    Rng rng(derive_seed({spec.seed, kTemplate, static_cast<std::uint64_t>(g)}));
    templates.push_back(orthonormalize(gaussian_matrix(side * side * side, members, rng)));
  }

  const auto v = static_cast<Eigen::Index>(spec.dims.count());
  for (int i = 0; i < spec.m; ++i) {
    Rng rng(derive_seed({spec.seed, kJitter, static_cast<std::uint64_t>(i)}));
    std::uniform_int_distribution<int> jit(-spec.jitter, spec.jitter);
    // One shift per subject: the whole topography moves together, so every
    // subject's W_true is a translate of the same pattern.
    const int sx = jit(rng);
    const int sy = jit(rng);
    const Coord shift{sx, sy, jit(rng)};
    std::vector<Coord> centers;
    std::vector<int> slot(static_cast<std::size_t>(spec.regions), 0);
    Eigen::MatrixXd topo = Eigen::MatrixXd::Zero(v, spec.k_true);
    for (int q = 0; q < spec.k_true; ++q) {
      const int g = region_of(spec, q);
      const auto& a = regions[g];
      const Coord c{a.x + shift.x, a.y + shift.y, a.z + shift.z};
      centers.push_back(c);
      const int col = slot[g]++;
      int e = 0;
      for (int z = c.z - r; z <= c.z + r; ++z)
        for (int y = c.y - r; y <= c.y + r; ++y)
          for (int x = c.x - r; x <= c.x + r; ++x, ++e)
            topo(static_cast<Eigen::Index>(spec.dims.index(x, y, z)), q) = templates[g](e, col);
    }
    const Eigen::MatrixXd x =
        noisy_signal(spec, topo, truth.shared, derive_seed({spec.seed, kNoise, static_cast<std::uint64_t>(i)}));
    out.subjects.push_back(volume_from_matrix(spec.dims, x));
    truth.centers.push_back(std::move(centers));
    truth.topographies.push_back(std::move(topo));
  }
  return out;
}

ScenePartition scene_partition(int d, int n_scenes) {
  if (n_scenes < 1) throw InvalidInput("scene count must be >= 1");
  if (n_scenes > d) throw InvalidInput("more scenes than TRs");
  ScenePartition p;
  p.d = d;
  p.n_scenes = n_scenes;
  p.labels.resize(d);
  for (int c = 0; c <= n_scenes; ++c) p.starts.push_back(static_cast<int>(static_cast<long long>(c) * d / n_scenes));
  for (int c = 0; c < n_scenes; ++c)
    for (int t = p.starts[c]; t < p.starts[c + 1]; ++t) p.labels[t] = c;
  return p;
}

Eigen::MatrixXd average_by_scene(const Eigen::MatrixXd& m, const ScenePartition& scenes) {
  if (m.cols() != scenes.d) throw InvalidInput("average_by_scene: column count does not match partition");
  Eigen::MatrixXd out(m.rows(), scenes.n_scenes);
  for (int c = 0; c < scenes.n_scenes; ++c) {
    const int b = scenes.starts[c];
    const int n = scenes.starts[c + 1] - b;
    out.col(c) = m.middleCols(b, n).rowwise().sum() / n;
  }
  return out;
}

SceneRecallSet gen_scene_labels(const SynthSpec& spec, int n_scenes) {
  const auto data = gen_dataset(spec);
  SceneRecallSet out;
  out.scenes = scene_partition(spec.d, n_scenes);
  out.targets = average_by_scene(data.truth.shared, out.scenes);
  for (int i = 0; i < spec.m; ++i) {
    const Eigen::MatrixXd x = noisy_signal(spec, data.truth.topographies[i], data.truth.shared,
                                           derive_seed({spec.seed, kRecallNoise, static_cast<std::uint64_t>(i)}));
    out.recall.push_back(average_by_scene(x, out.scenes));
  }
  return out;
}

}  // namespace fmriagg
