#include <benchmark/benchmark.h>

#include "fmriagg/cae.hpp"
#include "fmriagg/dist.hpp"
#include "fmriagg/eval.hpp"
#include "fmriagg/methods.hpp"
#include "fmriagg/rng.hpp"
#include "fmriagg/searchlight.hpp"
#include "fmriagg/srm.hpp"

using namespace fmriagg;

namespace {

// Arg: volume edge. 20 input channels to 20 output channels with 5^3 filters,
// the shape of the shared-feature layers at default settings.
void BM_Conv3dForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const ConvGeometry geom({n, n, n}, 5);
  Rng rng(1);
  const Eigen::MatrixXd in = gaussian_matrix(geom.voxels(), 20, rng);
  const Eigen::MatrixXd filt = gaussian_matrix(1, 20 * geom.taps(), rng);
  const Eigen::VectorXd bias = Eigen::VectorXd::Zero(1);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_forward(geom, in, filt, bias));
  state.SetItemsProcessed(state.iterations() * geom.voxels());
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(12)->Arg(16);

void BM_Conv3dBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const ConvGeometry geom({n, n, n}, 5);
  Rng rng(2);
  const Eigen::MatrixXd in = gaussian_matrix(geom.voxels(), 1, rng);
  const Eigen::MatrixXd filt = gaussian_matrix(20, geom.taps(), rng);
  const Eigen::MatrixXd up = gaussian_matrix(geom.voxels(), 20, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_backward(geom, up, in, filt, false));
  state.SetItemsProcessed(state.iterations() * geom.voxels());
}
BENCHMARK(BM_Conv3dBackward)->Arg(8)->Arg(12)->Arg(16);

void BM_CaeTrainStep(benchmark::State& state) {
  const Dims3 d{8, 8, 8};
  CaeConfig cfg;
  cfg.f = 3;
  std::vector<Volume4D> vols;
  Rng rng(3);
  for (int i = 0; i < 3; ++i) vols.push_back(volume_from_matrix(d, gaussian_matrix(512, 10, rng)));
  const CaeData data(vols);
  const CaeModel model = cae_init(3, d, cfg, 4);
  const std::vector<int> batch{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (auto _ : state) benchmark::DoNotOptimize(cae_backward(model, data, batch, true, 5));
}
BENCHMARK(BM_CaeTrainStep)->Unit(benchmark::kMillisecond);

// Arg: latent dimension k on the standard synthetic data.
void BM_FitSrm(benchmark::State& state) {
  const SynthDataset ds = gen_dataset(standard_synth_spec(1));
  std::vector<Eigen::MatrixXd> x;
  for (const auto& v : ds.subjects) x.push_back(v.matrix());
  SrmConfig cfg;
  cfg.k = static_cast<int>(state.range(0));
  cfg.tol = 0;
  for (auto _ : state) benchmark::DoNotOptimize(fit_srm(x, cfg));
}
BENCHMARK(BM_FitSrm)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_FitSsrm(benchmark::State& state) {
  const SynthDataset ds = gen_dataset(standard_synth_spec(1));
  const BrainMask mask = BrainMask::full(ds.subjects.front().dims());
  SrmConfig cfg;
  cfg.k = 10;
  for (auto _ : state) benchmark::DoNotOptimize(fit_s_srm(ds.subjects, mask, 5, cfg));
}
BENCHMARK(BM_FitSsrm)->Unit(benchmark::kMillisecond);

// Arg: TRs per half; k = 10 features, 9-TR segments.
void BM_SegmentScores(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(6);
  const Eigen::MatrixXd a = gaussian_matrix(10, d, rng), b = gaussian_matrix(10, d, rng);
  for (auto _ : state) benchmark::DoNotOptimize(segment_scores(a, b, 9));
}
BENCHMARK(BM_SegmentScores)->Arg(100)->Arg(400);

// Arg: worker count.
void BM_TreeReduce(benchmark::State& state) {
  const int w = static_cast<int>(state.range(0));
  Rng rng(7);
  std::vector<GradientBundle> bundles;
  for (int i = 0; i < w; ++i) bundles.push_back({{gaussian_matrix(5000, 1, rng)}, 1, 0});
  for (auto _ : state) benchmark::DoNotOptimize(tree_reduce(bundles));
}
BENCHMARK(BM_TreeReduce)->Arg(2)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
