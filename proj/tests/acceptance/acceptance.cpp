// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmriagg/cae.hpp"
#include "fmriagg/dist.hpp"
#include "fmriagg/eval.hpp"
#include "fmriagg/methods.hpp"
#include "fmriagg/mvae.hpp"
#include "fmriagg/rng.hpp"
#include "fmriagg/srm.hpp"

using namespace fmriagg;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 20;
constexpr int kMajority = 18;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

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

std::vector<Eigen::MatrixXd> as_matrices(const SynthDataset& ds) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& v : ds.subjects) out.push_back(v.matrix());
  return out;
}

std::vector<Volume4D> random_subjects(int m, Dims3 d, int trs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Volume4D> out;
  for (int i = 0; i < m; ++i)
    out.push_back(volume_from_matrix(d, gaussian_matrix(static_cast<Eigen::Index>(d.count()), trs, rng)));
  return out;
}

double orth_error(const Eigen::MatrixXd& w) {
  return (w.transpose() * w - Eigen::MatrixXd::Identity(w.cols(), w.cols())).cwiseAbs().maxCoeff();
}

Eigen::VectorXd indicator(std::span<const std::uint8_t> flags) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(flags.size()));
  for (std::size_t v = 0; v < flags.size(); ++v) m[static_cast<Eigen::Index>(v)] = flags[v];
  return m;
}

double energy_outside(const Eigen::VectorXd& mapped, std::span<const std::uint8_t> allowed) {
  double e = 0;
  for (std::size_t v = 0; v < allowed.size(); ++v)
    if (!allowed[v]) e += mapped[static_cast<Eigen::Index>(v)] * mapped[static_cast<Eigen::Index>(v)];
  return e;
}

// ---------------------------------------------------------------------------

Outcome procrustes_optimality() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  int beaten = 0;
  double worst_margin = 1e300;
  for (int c = 0; c < 100; ++c) {
    const int v = 1 + static_cast<int>(rng() % 6);
    const int k = 1 + static_cast<int>(rng() % v);
    const Eigen::MatrixXd a = gaussian_matrix(v, k, rng);
    const double at = (procrustes(a).transpose() * a).trace();
    for (int r = 0; r < 1000; ++r) {
      const double other = (random_orthonormal(v, k, rng()).transpose() * a).trace();
      worst_margin = std::min(worst_margin, at - other);
      // Square and 1-column cases tie with some comparators up to rounding.
      if (other > at + 1e-12 * std::max(1.0, std::abs(at))) ++beaten;
    }
  }
  const double secs = seconds_since(t0);
  return {beaten == 0 && secs < 10,
          "comparators beating the optimum " + std::to_string(beaten) + "/100000 (slack 1e-12 relative), min margin " + num(worst_margin) +
              ", " + num(secs) + " s (limit 10)"};
}

Outcome srm_solver() {
  const auto t0 = std::chrono::steady_clock::now();
  int monotone = 0, orthonormal = 0, converged = 0;
  double worst_orth = 0, worst_ratio = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    SynthSpec spec = standard_synth_spec(static_cast<std::uint64_t>(seed));
    const auto x = as_matrices(gen_dataset(spec));
    SrmConfig cfg;
    cfg.k = 4;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.tol = 0;
    const SrmModel full = fit_srm(x, cfg);
    bool mono = full.objective_trace.size() == 11;
    for (std::size_t i = 1; i < full.objective_trace.size(); ++i)
      mono = mono && full.objective_trace[i] <= full.objective_trace[i - 1] + 1e-10;
    monotone += mono;

    // Each truncated run is a prefix of the full one, so its maps are the
    // iterates of the full run.
    bool orth = true;
    for (int it = 1; it <= 10; ++it) {
      SrmConfig partial = cfg;
      partial.max_iters = it;
      const SrmModel p = fit_srm(x, partial);
      orth = orth && p.objective_trace.back() == full.objective_trace[static_cast<std::size_t>(it)];
      for (const auto& w : p.w) {
        worst_orth = std::max(worst_orth, orth_error(w));
        orth = orth && orth_error(w) <= 1e-8;
      }
    }
    orthonormal += orth;

    spec.noise_sigma = 0;
    const SrmModel clean = fit_srm(as_matrices(gen_dataset(spec)), cfg);
    const double ratio = clean.objective_trace.back() / clean.objective_trace.front();
    worst_ratio = std::max(worst_ratio, ratio);
    converged += ratio < 1e-6 && clean.objective_trace.size() <= 11;
  }
  const double secs = seconds_since(t0);
  return {monotone == kSeeds && orthonormal == kSeeds && converged == kSeeds && secs < 60,
          "monotone " + std::to_string(monotone) + "/20, orthonormal every iteration " + std::to_string(orthonormal) +
              "/20 (max " + num(worst_orth) + "), noiseless " + std::to_string(converged) + "/20 (worst ratio " +
              num(worst_ratio) + "), " + num(secs) + " s (limit 60)"};
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  int checks = 0;
  for (double lambda : {0.0, 1.0}) {
    CaeConfig cfg;
    cfg.f = 3;
    cfg.k1 = 2;
    cfg.k3 = 2;
    cfg.dropout = 0;
    cfg.sparsity.lambda = lambda;
    const CaeModel base = cae_init(2, {4, 4, 4}, cfg, 21);
    const CaeData data(random_subjects(2, {4, 4, 4}, 3, 22));
    const std::vector<int> batch{0, 1, 2};
    const ParamBlocks like = base.to_blocks();
    Rng rng(23 + static_cast<int>(lambda));
    for (int point = 0; point < 5; ++point) {
      const Eigen::VectorXd p = pack(like) + 0.3 * Eigen::VectorXd(gaussian_matrix(pack(like).size(), 1, rng));
      auto loss = [&](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
        CaeModel local = base;
        local.from_blocks(unpack(q, like));
        if (grad) {
          const CaeBatchGrad g = cae_backward(local, data, batch, false, 0);
          *grad = pack(g.grads);
          return g.loss.total;
        }
        return cae_loss(local, data, batch).total;
      };
      worst = std::max(worst, grad_check(loss, p).max_rel_error);
      ++checks;
    }
  }

  Rng xr(31);
  std::vector<Eigen::MatrixXd> x;
  for (int i = 0; i < 3; ++i) x.push_back(gaussian_matrix(6, 5, xr));
  const std::vector<std::uint64_t> keys{41, 42, 43, 44, 45};
  for (double lambda : {0.0, 1.0}) {
    MvaeConfig cfg;
    cfg.k = 3;
    cfg.sparsity.lambda = lambda;
    const NonlinearMvae base = nonlinear_mvae_init(3, 6, 3, cfg, 32);
    const ParamBlocks like = base.to_blocks();
    Rng rng(33 + static_cast<int>(lambda));
    for (int point = 0; point < 5; ++point) {
      const Eigen::VectorXd p = pack(like) + 0.3 * Eigen::VectorXd(gaussian_matrix(pack(like).size(), 1, rng));
      auto loss = [&](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
        NonlinearMvae local = base;
        local.from_blocks(unpack(q, like));
        const MvaeGrad g = mvae_gradient(local, x, true, keys);
        if (grad) *grad = pack(g.grads);
        return g.loss;
      };
      worst = std::max(worst, grad_check(loss, p).max_rel_error);
      ++checks;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 120, std::to_string(checks) + " checks, max relative error " + num(worst) + ", " +
                                           num(secs) + " s (limit 120)"};
}

Outcome mvae_srm_identity() {
  Rng rng(51);
  double worst = 0;
  for (int c = 0; c < 50; ++c) {
    const int m = 2 + static_cast<int>(rng() % 4);
    const int v = 3 + static_cast<int>(rng() % 8);
    const int k = 1 + static_cast<int>(rng() % v);
    const int d = 3 + static_cast<int>(rng() % 10);
    LinearMvae model;
    std::vector<Eigen::MatrixXd> x;
    for (int i = 0; i < m; ++i) {
      // Half the instances use orthonormal maps, half arbitrary ones.
      model.w.push_back(c % 2 ? gaussian_matrix(v, k, rng) : random_orthonormal(v, k, rng()));
      x.push_back(gaussian_matrix(v, d, rng));
    }
    const Eigen::MatrixXd s = mvae_shared(model, x);
    const double lhs = mvae_loss(model, x), rhs = m * srm_objective(model.w, s, x);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
  }
  return {worst <= 1e-12, "50 instances, max relative difference " + num(worst) + " (limit 1e-12)"};
}

Outcome distributed_equivalence() {
  CaeConfig cfg;
  cfg.f = 3;
  cfg.k1 = 2;
  cfg.k3 = 2;
  const CaeData data(random_subjects(2, {4, 4, 4}, 20, 61));
  DistConfig dc;
  dc.epochs = 3;
  dc.batch = 8;
  dc.seed = 62;
  dc.rmsprop.lr = 1e-2;
  std::vector<Eigen::VectorXd> finals;
  for (int w : {1, 2, 4, 8}) {
    CaeModel model = cae_init(2, {4, 4, 4}, cfg, 63);
    dc.workers = w;
    cae_train(model, data, dc);
    finals.push_back(pack(model.to_blocks()));
  }
  double worst = 0;
  for (std::size_t i = 1; i < finals.size(); ++i)
    worst = std::max(worst, (finals[i] - finals[0]).cwiseAbs().maxCoeff() / finals[0].cwiseAbs().maxCoeff());

  Rng rng(64);
  double reduce_err = 0;
  for (int c = 0; c < 100; ++c) {
    const int n = 1 + static_cast<int>(rng() % 16);
    const int blocks = 1 + static_cast<int>(rng() % 4);
    std::vector<Eigen::Index> sizes;
    for (int b = 0; b < blocks; ++b) sizes.push_back(1 + static_cast<Eigen::Index>(rng() % 20));
    std::vector<GradientBundle> bundles;
    GradientBundle serial;
    for (auto s : sizes) serial.grads.push_back(Eigen::VectorXd::Zero(s));
    for (int i = 0; i < n; ++i) {
      GradientBundle g;
      for (auto s : sizes) g.grads.push_back(gaussian_matrix(s, 1, rng));
      g.count = 1 + static_cast<double>(rng() % 5);
      g.loss = gaussian_matrix(1, 1, rng)(0, 0);
      for (std::size_t b = 0; b < sizes.size(); ++b) serial.grads[b] += g.grads[b];
      serial.count += g.count;
      serial.loss += g.loss;
      bundles.push_back(std::move(g));
    }
    const GradientBundle t = tree_reduce(bundles);
    for (std::size_t b = 0; b < sizes.size(); ++b)
      reduce_err = std::max(reduce_err, (t.grads[b] - serial.grads[b]).cwiseAbs().maxCoeff());
    reduce_err = std::max({reduce_err, std::abs(t.count - serial.count), std::abs(t.loss - serial.loss)});
  }
  return {worst <= 1e-10 && reduce_err <= 1e-12, "workers 1/2/4/8 max relative parameter difference " + num(worst) +
                                                     " (limit 1e-10); tree_reduce max error " + num(reduce_err) +
                                                     " over 100 bundles (limit 1e-12)"};
}

Outcome matching_calibration() {
  const MatchingConfig cfg;
  const int trials = 200, d = 100;
  double sum = 0, sq = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng(7000 + static_cast<std::uint64_t>(t));
    const Eigen::MatrixXd a = gaussian_matrix(4, d, rng), b = gaussian_matrix(4, d, rng);
    const double acc = time_segment_match(a, b, cfg);
    sum += acc;
    sq += acc * acc;
  }
  const double mean = sum / trials;
  const double se = std::sqrt((sq / trials - mean * mean) / (trials - 1));
  const double chance = chance_accuracy(d, cfg);

  double self = 1;
  for (int seed = 1; seed <= 5; ++seed) {
    SynthSpec spec = standard_synth_spec(static_cast<std::uint64_t>(seed));
    const Eigen::MatrixXd s = gen_shared_response(spec);
    self = std::min(self, time_segment_match(s, s, cfg));
  }
  const bool calibrated = std::abs(mean - chance) <= 3 * se;
  return {calibrated && self == 1.0, "independent mean " + num(mean) + " vs chance " + num(chance) + " (3 SE = " +
                                         num(3 * se) + "); noiseless self-match " + num(self)};
}

// Criteria 7 and 9 share one set of runs.
struct Exp1Runs {
  std::vector<Exp1Result> ssrm, sl, cae;
  double seconds = 0;
};

const Exp1Runs& exp1_runs() {
  static const Exp1Runs runs = [] {
    Exp1Runs r;
    const auto t0 = std::chrono::steady_clock::now();
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const SynthSpec spec = standard_synth_spec(static_cast<std::uint64_t>(seed));
      const SynthDataset ds = gen_dataset(spec);
      const BrainMask mask = BrainMask::full(spec.dims);
      MethodConfig mc;
      mc.srm.k = 10;
      mc.srm.seed = static_cast<std::uint64_t>(seed);
      mc.edge = 5;
      mc.cae_train.seed = static_cast<std::uint64_t>(seed);
      const Exp1Config ec;
      mc.method = Method::ssrm;
      r.ssrm.push_back(run_exp1(ds.subjects, mask, mc, ec));
      mc.method = Method::sl;
      r.sl.push_back(run_exp1(ds.subjects, mask, mc, ec));
      mc.method = Method::cae;
      r.cae.push_back(run_exp1(ds.subjects, mask, mc, ec));
      std::fprintf(stderr, "  seed %2d: top-0.5%% ssrm %.3f sl %.3f cae %.3f | whole-brain ssrm %.3f cae %.3f\n", seed,
                   r.ssrm.back().top_accuracy, r.sl.back().top_accuracy, r.cae.back().top_accuracy,
                   r.ssrm.back().whole_brain, r.cae.back().whole_brain);
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

double mean_top(const std::vector<Exp1Result>& rs) {
  double s = 0;
  for (const auto& r : rs) s += r.top_accuracy;
  return s / static_cast<double>(rs.size());
}

Outcome end_to_end_recovery() {
  const Exp1Runs& r = exp1_runs();
  const double chance = r.ssrm.front().chance;
  const double ssrm = mean_top(r.ssrm), cae = mean_top(r.cae), sl = mean_top(r.sl);
  int sl_lower = 0;
  for (int s = 0; s < kSeeds; ++s)
    sl_lower += r.sl[s].top_accuracy < r.ssrm[s].top_accuracy && r.sl[s].top_accuracy < r.cae[s].top_accuracy;
  const bool pass = ssrm >= 10 * chance && cae >= 10 * chance && sl_lower >= kMajority && r.seconds < 900;
  return {pass, "top-0.5% mean over 20 seeds: ssrm " + num(ssrm) + ", cae " + num(cae) + ", sl " + num(sl) +
                    " (need >= " + num(10 * chance) + " = 10 x chance " + num(chance) + "); sl below both in " +
                    std::to_string(sl_lower) + "/20 (need 18); " + num(r.seconds) + " s (limit 900)"};
}

Outcome locality() {
  // Structural CAE check at the default filter size with random weights.
  const Dims3 d{12, 12, 12};
  Rng rng(81);
  int cae_ok = 0;
  double cae_worst = 0;
  for (int c = 0; c < 20; ++c) {
    CaeConfig cfg;
    cfg.k1 = 4;
    cfg.k3 = 3;
    CaeModel model = cae_init(2, d, cfg, static_cast<std::uint64_t>(c));
    ParamBlocks p = model.to_blocks();
    for (auto& b : p) b = gaussian_matrix(b.size(), 1, rng);
    model.from_blocks(p);
    const Coord center{static_cast<int>(rng() % 12), static_cast<int>(rng() % 12), static_cast<int>(rng() % 12)};
    const auto roi = cube_roi(d, center, static_cast<int>(rng() % 3));
    const Eigen::VectorXd out = cae_map_between_subjects(model, 0, 1, indicator(roi));
    const double e = energy_outside(out, dilate(d, roi, cfg.f - 1));
    cae_worst = std::max(cae_worst, e);
    cae_ok += e == 0.0 && out.norm() > 0;
  }

  int ssrm_ok = 0, wb_dispersed = 0;
  double ssrm_worst = 0, wb_max = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const SynthSpec spec = standard_synth_spec(static_cast<std::uint64_t>(seed));
    const SynthDataset ds = gen_dataset(spec);
    const BrainMask mask = BrainMask::full(spec.dims);
    const auto roi = cube_roi(spec.dims, ds.truth.anchors.front(), spec.topo_radius);
    MethodConfig mc;
    mc.srm.k = 10;
    mc.srm.seed = static_cast<std::uint64_t>(seed);
    mc.edge = 5;
    mc.method = Method::ssrm;
    const auto ssrm = fit_method(mc, ds.subjects, mask);
    const Eigen::VectorXd sm = ssrm->map_between(0, 1, indicator(roi));
    const double e = energy_outside(sm, dilate(spec.dims, roi, mc.edge - 1));
    ssrm_worst = std::max(ssrm_worst, e);
    ssrm_ok += e == 0.0 && sm.norm() > 0;

    mc.method = Method::wbsrm;
    const auto wb = fit_method(mc, ds.subjects, mask);
    const DispersionReport rep = dispersion_report(spec.dims, roi, wb->map_between(0, 1, indicator(roi)), 5 - 1);
    wb_max = std::max(wb_max, rep.energy_inside);
    wb_dispersed += rep.energy_inside < 0.95;
  }
  return {cae_ok == 20 && ssrm_ok == kSeeds && wb_dispersed >= kMajority,
          "cae zero outside f-1 in " + std::to_string(cae_ok) + "/20 (max " + num(cae_worst) + "); ssrm zero outside " +
              "edge-1 in " + std::to_string(ssrm_ok) + "/20 (max " + num(ssrm_worst) +
              "); wbsrm energy_inside(r=4) < 0.95 in " + std::to_string(wb_dispersed) + "/20 (max " + num(wb_max) +
              ")"};
}

Outcome aggregation_dominance() {
  const Exp1Runs& r = exp1_runs();
  int ssrm_wins = 0, cae_wins = 0;
  double ssrm_wb = 0, ssrm_best = 0;
  for (int s = 0; s < kSeeds; ++s) {
    ssrm_wins += r.ssrm[s].whole_brain >= r.ssrm[s].best_location;
    cae_wins += r.cae[s].whole_brain >= r.cae[s].best_location;
    ssrm_wb += r.ssrm[s].whole_brain / kSeeds;
    ssrm_best += r.ssrm[s].best_location / kSeeds;
  }
  return {ssrm_wins >= kMajority && cae_wins >= kMajority,
          "whole-brain >= best location: ssrm " + std::to_string(ssrm_wins) + "/20, cae " + std::to_string(cae_wins) +
              "/20 (need 18); ssrm means whole-brain " + num(ssrm_wb) + " vs best location " + num(ssrm_best)};
}

struct Shell {
  int code = -1;
  std::string out;
};

Shell shell(const fs::path& cwd, const std::string& args) {
  const fs::path o = cwd / "stdout.txt";
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" FMRIAGG_CLI_PATH "' " + args + " >'" + o.string() + "' 2>>'" +
      (cwd / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  std::ifstream in(o);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "fmriagg-acceptance-replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "small.json") << R"({
    "seed": 3,
    "data": {"n_scenes": 8, "synth": {"m": 4, "dims": [8, 8, 8], "d": 80, "k_true": 3, "noise_sigma": 0.5}},
    "method": {"k": 3, "edge": 3, "cae": {"f": 3, "k1": 4, "k3": 4}, "mvae": {"k": 3}},
    "train": {"epochs": 2, "workers": 4},
    "eval": {"roi": {"center": [4, 4, 4]}}
  })";
  const std::vector<std::pair<std::string, std::string>> runs{
      {"synth", "synth -c small.json -o synth"},
      {"srm", "srm -c small.json -s data.source=dir -s data.dir=synth -o srm"},
      {"slsrm", "slsrm -c small.json -o slsrm"},
      {"mvae", "mvae -c small.json -s method.name=mvae-nonlinear -o mvae"},
      {"cae-train", "cae-train -c small.json -o cae"},
      {"eval", "eval tsm -c small.json -s method.name=cae -o tsm"},
      {"recall", "eval recall -c small.json -o recall"},
      {"dispersion", "dispersion -c small.json -o dispersion"},
      {"sweep", "sweep -c small.json --param method.k --values 2,3 -o sweep"},
  };
  int identical = 0, artifacts = 0, csv = 0, svol = 0;
  std::string failures;
  for (const auto& [name, args] : runs) {
    const Shell first = shell(dir, args);
    if (first.code != 0) {
      failures += " " + name + "(run exit " + std::to_string(first.code) + ")";
      continue;
    }
    const std::string out = nlohmann::json::parse(first.out).at("dir");
    const auto manifest = nlohmann::json::parse(std::ifstream(dir / out / "manifest.json"));
    for (const auto& a : manifest.at("artifacts")) {
      const std::string p = a.at("path");
      csv += p.ends_with(".csv");
      svol += p.ends_with(".svol");
    }
    const Shell again = shell(dir, "replay " + out + "/manifest.json");
    const auto rep = again.out.empty() ? nlohmann::json{} : nlohmann::json::parse(again.out);
    if (again.code == 0 && rep.value("status", "") == "identical") {
      ++identical;
      artifacts += rep.at("matched").get<int>();
    } else {
      failures += " " + name;
    }
  }
  const bool pass = identical == static_cast<int>(runs.size()) && csv > 0 && svol > 0;
  if (pass) fs::remove_all(dir);
  return {pass, std::to_string(identical) + "/" + std::to_string(runs.size()) + " manifests replayed bit-exactly (" +
                    std::to_string(artifacts) + " artifacts, " + std::to_string(csv) + " csv, " +
                    std::to_string(svol) + " svol)" + (failures.empty() ? "" : "; failed:" + failures)};
}

}  // namespace

// Optional arguments select criteria by number; the default runs all of them.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"procrustes optimality", procrustes_optimality},
      {"SRM solver", srm_solver},
      {"gradient correctness", gradient_correctness},
      {"linear MVAE / SRM identity", mvae_srm_identity},
      {"distributed equivalence", distributed_equivalence},
      {"time-segment matching calibration", matching_calibration},
      {"synthetic end-to-end recovery", end_to_end_recovery},
      {"locality guarantees", locality},
      {"aggregation dominance", aggregation_dominance},
      {"reproducibility", reproducibility},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int n = std::atoi(argv[a]);
    if (n >= 1 && n <= static_cast<int>(criteria.size())) selected[static_cast<std::size_t>(n - 1)] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
