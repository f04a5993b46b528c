#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "fmriagg/cae.hpp"
#include "fmriagg/error.hpp"
#include "fmriagg/eval.hpp"
#include "fmriagg/methods.hpp"
#include "fmriagg/mvae.hpp"
#include "fmriagg/rng.hpp"
#include "fmriagg/searchlight.hpp"
#include "fmriagg/srm.hpp"
#include "fmriagg/svol.hpp"
#include "run_output.hpp"

namespace fs = std::filesystem;

namespace fmriagg::cli {

Json Invocation::to_json() const {
  Json j;
  j["command"] = command;
  if (!task.empty()) j["task"] = task;
  if (!sweep_param.empty()) {
    j["sweep_param"] = sweep_param;
    j["sweep_values"] = sweep_values;
  }
  return j;
}

Invocation Invocation::from_json(const Json& j) {
  Invocation inv;
  try {
    inv.command = j.at("command").get<std::string>();
    if (j.contains("task")) inv.task = j.at("task").get<std::string>();
    if (j.contains("sweep_param")) {
      inv.sweep_param = j.at("sweep_param").get<std::string>();
      inv.sweep_values = j.at("sweep_values");
    }
  } catch (const Json::exception& e) {
    throw ConfigError("/invocation", e.what());
  }
  return inv;
}

namespace {

std::string two_digits(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", i);
  return buf;
}

struct Dataset {
  std::vector<Volume4D> subjects;
  BrainMask mask;
  std::optional<SceneRecallSet> recall;
  std::optional<SynthDataset> synth;  // kept for the truth when generated
};

Dataset load_dataset(const RunConfig& rc) {
  Dataset ds;
  if (rc.data_source == "synth") {
    ds.synth = gen_dataset(rc.synth);
    ds.subjects = ds.synth->subjects;
    ds.mask = BrainMask::full(rc.synth.dims);
    if (rc.n_scenes >= 2) ds.recall = gen_scene_labels(rc.synth, rc.n_scenes);
    return ds;
  }
  const fs::path dir(rc.data_dir);
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  std::vector<fs::path> subs, recalls;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("sub-", 0) == 0 && e.path().extension() == ".svol") subs.push_back(e.path());
    if (name.rfind("recall-", 0) == 0 && e.path().extension() == ".svol") recalls.push_back(e.path());
  }
  std::sort(subs.begin(), subs.end());
  std::sort(recalls.begin(), recalls.end());
  if (subs.size() < 2) throw IoError("need at least two sub-*.svol recordings in " + dir.string());
  for (const auto& p : subs) ds.subjects.push_back(read_volume(p));
  const Dims3 dims = ds.subjects.front().dims();
  ds.mask = fs::exists(dir / "mask.svol") ? read_mask(dir / "mask.svol") : BrainMask::full(dims);
  if (!recalls.empty() && fs::exists(dir / "scenes.json")) {
    const Json scenes = load_json_file((dir / "scenes.json").string());
    SceneRecallSet r;
    r.scenes = scene_partition(scenes.at("d").get<int>(), scenes.at("n_scenes").get<int>());
    for (const auto& p : recalls) r.recall.push_back(read_volume(p).matrix());
    ds.recall = std::move(r);
  }
  return ds;
}

std::vector<Eigen::MatrixXd> masked(const Dataset& ds) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& v : ds.subjects) out.push_back(masked_matrix(v, ds.mask));
  return out;
}

std::string loss_csv(const TrainResult& r) {
  std::string s = "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) s += std::to_string(e) + "," + fmt(r.epoch_loss[e]) + "\n";
  return s;
}

Json coord_json(const Coord& c) { return Json::array({c.x, c.y, c.z}); }

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& rc, RunOutput& out) {
  if (rc.data_source != "synth") throw ConfigError("/data/source", "synth needs data.source = \"synth\"");
  const Dataset ds = load_dataset(rc);
  const SynthTruth& truth = ds.synth->truth;
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    out.volume("sub-" + two_digits(static_cast<int>(i)) + ".svol", ds.subjects[i]);
  }
  write_mask(ds.mask, out.path("mask.svol"));
  out.record("mask.svol");
  out.matrix("shared.svol", truth.shared);
  Json t;
  auto& anchors = t["anchors"] = Json::array();
  for (const auto& a : truth.anchors) anchors.push_back(coord_json(a));
  auto& centers = t["centers"] = Json::array();
  for (const auto& per : truth.centers) {
    Json row = Json::array();
    for (const auto& c : per) row.push_back(coord_json(c));
    centers.push_back(row);
  }
  out.text("truth.json", t.dump(2) + "\n");
  if (ds.recall) {
    for (std::size_t i = 0; i < ds.recall->recall.size(); ++i) {
      out.volume("recall-" + two_digits(static_cast<int>(i)) + ".svol",
                 volume_from_matrix(rc.synth.dims, ds.recall->recall[i]));
    }
    const Json scenes = {{"d", ds.recall->scenes.d}, {"n_scenes", ds.recall->scenes.n_scenes}};
    out.text("scenes.json", scenes.dump(2) + "\n");
  }
}

void cmd_srm(const RunConfig& rc, RunOutput& out) {
  const Dataset ds = load_dataset(rc);
  const SrmModel model = fit_srm(masked(ds), rc.method.srm);
  for (std::size_t i = 0; i < model.w.size(); ++i) out.matrix("w-" + two_digits(static_cast<int>(i)) + ".svol", model.w[i]);
  out.matrix("shared.svol", model.s);
  std::string csv = "iteration,objective\n";
  for (std::size_t it = 0; it < model.objective_trace.size(); ++it) {
    csv += std::to_string(it) + "," + fmt(model.objective_trace[it]) + "\n";
  }
  out.text("objective.csv", csv);
}

void cmd_slsrm(const RunConfig& rc, RunOutput& out) {
  const Dataset ds = load_dataset(rc);
  const SearchlightModelSet set = fit_s_srm(ds.subjects, ds.mask, rc.method.edge, rc.method.srm, rc.method.min_vs);
  const Dims3 dims = ds.mask.dims();
  std::vector<double> rel(dims.count(), AccuracyMap::kSentinel);
  std::string csv = "x,y,z,vs,objective_initial,objective_final\n";
  for (std::size_t c = 0; c < set.centers.size(); ++c) {
    const auto& sl = set.centers[c];
    const auto& tr = set.models[c].objective_trace;
    csv += std::to_string(sl.center.x) + "," + std::to_string(sl.center.y) + "," + std::to_string(sl.center.z) + "," +
           std::to_string(sl.vs()) + "," + fmt(tr.front()) + "," + fmt(tr.back()) + "\n";
    rel[dims.index(sl.center.x, sl.center.y, sl.center.z)] = tr.front() > 0 ? tr.back() / tr.front() : 0.0;
  }
  out.text("centers.csv", csv);
  std::string skipped = "x,y,z\n";
  for (const auto& c : set.skipped) {
    skipped += std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.z) + "\n";
  }
  out.text("skipped.csv", skipped);
  out.volume("objective_map.svol", Volume4D(dims, 1, rel));
}

void cmd_mvae(const RunConfig& rc, RunOutput& out) {
  const Method m = rc.method.method;
  if (m != Method::mvae_linear && m != Method::mvae_nonlinear) {
    throw ConfigError("/method/name", "mvae needs method.name mvae-linear or mvae-nonlinear");
  }
  const Dataset ds = load_dataset(rc);
  const auto x = masked(ds);
  const TrainResult* trace = nullptr;
  LinearMvaeFit lin;
  NonlinearMvaeFit non;
  if (m == Method::mvae_linear) {
    lin = fit_linear_mvae(x, rc.method.mvae);
    for (int i = 0; i < lin.model.subjects(); ++i) out.matrix("w-" + two_digits(i) + ".svol", lin.model.w[i]);
    trace = &lin.trace;
  } else {
    non = fit_nonlinear_mvae(x, rc.method.mvae);
    for (int i = 0; i < non.model.subjects(); ++i) {
      const std::string s = two_digits(i);
      out.matrix("enc-" + s + ".svol", non.model.enc[i]);
      out.matrix("enc_bias-" + s + ".svol", non.model.enc_bias[i]);
      out.matrix("dec-" + s + ".svol", non.model.dec[i]);
      out.matrix("dec_bias-" + s + ".svol", non.model.dec_bias[i]);
    }
    trace = &non.trace;
  }
  out.text("traces.json", traces_json(*trace) + "\n");
  out.text("loss.csv", loss_csv(*trace));
}

void cmd_cae_train(const RunConfig& rc, RunOutput& out) {
  const Dataset ds = load_dataset(rc);
  const Dims3 dims = ds.subjects.front().dims();
  CaeModel model = cae_init(static_cast<int>(ds.subjects.size()), dims, rc.method.cae, rc.method.cae_train.seed);
  const TrainResult r = cae_train(model, CaeData(ds.subjects), rc.method.cae_train);
  save_cae(model, out.path("model").string());
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(out.path("model"))) files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.record("model/" + f);
  out.text("traces.json", traces_json(r) + "\n");
  out.text("loss.csv", loss_csv(r));
}

std::string location_csv(std::span<const Coord> centers, std::span<const double> acc) {
  std::string s = "x,y,z,accuracy\n";
  for (std::size_t c = 0; c < centers.size(); ++c) {
    s += std::to_string(centers[c].x) + "," + std::to_string(centers[c].y) + "," + std::to_string(centers[c].z) + "," +
         fmt(acc[c]) + "\n";
  }
  return s;
}

void eval_tsm(const RunConfig& rc, const Dataset& ds, RunOutput& out) {
  const Exp1Result r = run_exp1(ds.subjects, ds.mask, rc.method, rc.exp1);
  out.volume("accuracy_map.svol", accuracy_volume(r.map));
  out.text("locations.csv", location_csv(r.centers, r.location_accuracy));
  out.text("summary.csv", "method,mean,stderr,top_accuracy,best_location,whole_brain,chance\n" + method_name(r.method) +
                              "," + fmt(r.mean) + "," + fmt(r.sem) + "," + fmt(r.top_accuracy) + "," +
                              fmt(r.best_location) + "," + fmt(r.whole_brain) + "," + fmt(r.chance) + "\n");
}

const SceneRecallSet& need_recall(const Dataset& ds) {
  if (!ds.recall) throw ConfigError("/data/n_scenes", "scene recall needs n_scenes >= 2 (or recall-*.svol data)");
  return *ds.recall;
}

void eval_recall(const RunConfig& rc, const Dataset& ds, RunOutput& out) {
  const Exp2Result r = run_exp2(ds.subjects, need_recall(ds), ds.mask, rc.method, rc.svm);
  out.text("locations.csv", location_csv(r.centers, r.location_accuracy));
  out.text("summary.csv", "method,whole_brain,stderr,best_location,chance\n" + method_name(r.method) + "," +
                              fmt(r.whole_brain) + "," + fmt(r.whole_brain_sem) + "," + fmt(r.best_location) + "," +
                              fmt(r.chance) + "\n");
}

void eval_wholebrain(const RunConfig& rc, const Dataset& ds, RunOutput& out) {
  std::string csv = "task,method,whole_brain,best_location,chance\n";
  const Exp1Result a = run_exp1(ds.subjects, ds.mask, rc.method, rc.exp1);
  csv += "tsm," + method_name(a.method) + "," + fmt(a.whole_brain) + "," + fmt(a.best_location) + "," +
         fmt(a.chance) + "\n";
  if (ds.recall) {
    const Exp2Result b = run_exp2(ds.subjects, *ds.recall, ds.mask, rc.method, rc.svm);
    csv += "recall," + method_name(b.method) + "," + fmt(b.whole_brain) + "," + fmt(b.best_location) + "," +
           fmt(b.chance) + "\n";
  }
  out.text("wholebrain.csv", csv);
}

Json dispersion_json(const DispersionReport& r) {
  return {{"method", r.method},        {"radius", r.radius}, {"energy_inside", r.energy_inside},
          {"r95", r.r95},              {"dice", r.dice},     {"total_energy", r.total_energy},
          {"energy_curve", r.energy_curve}};
}

std::vector<std::uint8_t> roi_mask(const RunConfig& rc, const Dataset& ds) {
  const Dims3 dims = ds.mask.dims();
  if (!dims.contains(rc.roi.center.x, rc.roi.center.y, rc.roi.center.z)) {
    throw ConfigError("/eval/roi/center", "ROI center lies outside the volume");
  }
  const int m = static_cast<int>(ds.subjects.size());
  if (rc.roi.from >= m) throw ConfigError("/eval/roi/from", "subject index out of range");
  if (rc.roi.to >= m) throw ConfigError("/eval/roi/to", "subject index out of range");
  auto roi = cube_roi(dims, rc.roi.center, rc.roi.half_width);
  for (std::size_t v = 0; v < roi.size(); ++v) {
    const Coord c = coord_of(dims, v);
    if (!ds.mask.at(c.x, c.y, c.z)) roi[v] = 0;
  }
  return roi;
}

void eval_dispersion(const RunConfig& rc, const Dataset& ds, RunOutput& out) {
  const auto roi = roi_mask(rc, ds);
  const auto fitted = fit_method(rc.method, ds.subjects, ds.mask);
  const Dims3 dims = ds.mask.dims();
  const DispersionReport r = dispersion_experiment(*fitted, dims, roi, rc.roi.from, rc.roi.to);
  Eigen::VectorXd m(static_cast<Eigen::Index>(roi.size()));
  for (std::size_t v = 0; v < roi.size(); ++v) m[static_cast<Eigen::Index>(v)] = roi[v];
  const Eigen::VectorXd mapped = fitted->map_between(rc.roi.from, rc.roi.to, m);
  out.volume("mapped.svol", volume_from_matrix(dims, mapped));
  out.text("dispersion.json", dispersion_json(r).dump(2) + "\n");
}

// The three locality regimes side by side: WB-SRM, S-SRM and the CAE.
void cmd_dispersion(const RunConfig& rc, RunOutput& out) {
  const Dataset ds = load_dataset(rc);
  const auto roi = roi_mask(rc, ds);
  const Dims3 dims = ds.mask.dims();
  Json reports = Json::array();
  std::string csv = "method,radius,energy_inside,r95,dice\n";
  for (Method method : {Method::wbsrm, Method::ssrm, Method::cae}) {
    MethodConfig mc = rc.method;
    mc.method = method;
    const auto fitted = fit_method(mc, ds.subjects, ds.mask);
    const DispersionReport r = dispersion_experiment(*fitted, dims, roi, rc.roi.from, rc.roi.to);
    reports.push_back(dispersion_json(r));
    csv += r.method + "," + std::to_string(r.radius) + "," + fmt(r.energy_inside) + "," + std::to_string(r.r95) + "," +
           fmt(r.dice) + "\n";
  }
  out.text("dispersion.json", reports.dump(2) + "\n");
  out.text("dispersion.csv", csv);
}

void cmd_eval(const Invocation& inv, const RunConfig& rc, RunOutput& out) {
  const Dataset ds = load_dataset(rc);
  if (inv.task == "tsm") return eval_tsm(rc, ds, out);
  if (inv.task == "recall") return eval_recall(rc, ds, out);
  if (inv.task == "wholebrain") return eval_wholebrain(rc, ds, out);
  if (inv.task == "dispersion") return eval_dispersion(rc, ds, out);
  throw ConfigError("/invocation/task", "unknown eval task \"" + inv.task + "\"");
}

void cmd_sweep(const Invocation& inv, const Json& user, const RunConfig& base, RunOutput& out) {
  if (inv.sweep_param.empty()) throw ConfigError("/invocation/sweep_param", "sweep needs a parameter");
  if (!inv.sweep_values.is_array() || inv.sweep_values.empty()) {
    throw ConfigError("/invocation/sweep_values", "empty sweep grid");
  }
  const Dataset ds = load_dataset(base);
  std::string csv = "param,value,method,top_accuracy,mean,stderr,whole_brain,best_location,chance\n";
  std::string runtime = "param,value,seconds\n";
  for (const auto& value : inv.sweep_values) {
    Json doc = user;
    set_config_path(doc, inv.sweep_param, value);
    const RunConfig rc = resolve_config(doc);
    if (rc.data_source != base.data_source || rc.resolved.at("data") != base.resolved.at("data") ||
        rc.seed != base.seed) {
      throw ConfigError("/invocation/sweep_param", "sweeps over data or seed settings are not supported");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Exp1Result r = run_exp1(ds.subjects, ds.mask, rc.method, rc.exp1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string v = value.dump();
    csv += inv.sweep_param + "," + v + "," + method_name(r.method) + "," + fmt(r.top_accuracy) + "," + fmt(r.mean) +
           "," + fmt(r.sem) + "," + fmt(r.whole_brain) + "," + fmt(r.best_location) + "," + fmt(r.chance) + "\n";
    runtime += inv.sweep_param + "," + v + "," + fmt(secs) + "\n";
  }
  out.text("sweep.csv", csv);
  out.volatile_text("sweep_runtime.csv", runtime);
}

fs::path default_out_dir(const Invocation& inv, const RunConfig& rc) {
  const char* env = std::getenv("FMRIAGG_OUT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("fmriagg-out");
  std::string label = inv.command + (inv.task.empty() ? "" : "-" + inv.task);
  const std::string key = rc.resolved.dump() + inv.to_json().dump();
  return root / (label + "-" + hex64(fnv1a(key.data(), key.size())).substr(0, 12));
}

void dispatch(const Invocation& inv, const Json& user_config, const RunConfig& rc, RunOutput& out) {
  const std::string& c = inv.command;
  if (c == "synth") {
    cmd_synth(rc, out);
  } else if (c == "srm") {
    cmd_srm(rc, out);
  } else if (c == "slsrm") {
    cmd_slsrm(rc, out);
  } else if (c == "mvae") {
    cmd_mvae(rc, out);
  } else if (c == "cae-train") {
    cmd_cae_train(rc, out);
  } else if (c == "eval") {
    cmd_eval(inv, rc, out);
  } else if (c == "sweep") {
    cmd_sweep(inv, user_config, rc, out);
  } else if (c == "dispersion") {
    cmd_dispersion(rc, out);
  } else {
    throw ConfigError("/invocation/command", "unknown command \"" + c + "\"");
  }
}

}  // namespace

fs::path run_invocation(const Invocation& inv, Json user_config, const std::optional<std::string>& out_override) {
  if (out_override) set_config_path(user_config, "output.dir", *out_override);
  const RunConfig rc = resolve_config(user_config);
  const fs::path dir = rc.out_dir.empty() ? default_out_dir(inv, rc) : fs::path(rc.out_dir);
  const bool existed = fs::exists(dir);
  RunOutput out(dir, rc.dtype);
  try {
    dispatch(inv, user_config, rc, out);
  } catch (...) {
    // Don't leave an empty directory behind for a run that never started.
    std::error_code ec;
    if (!existed && fs::is_empty(dir, ec)) fs::remove(dir, ec);
    throw;
  }
  out.finish(inv.to_json(), rc);
  return dir;
}

ReplayReport replay(const fs::path& manifest_path, const std::optional<std::string>& out_override) {
  const Json manifest = load_json_file(manifest_path.string());
  if (!manifest.contains("invocation") || !manifest.contains("config") || !manifest.contains("artifacts")) {
    throw ConfigError("", manifest_path.string() + " is not a run manifest");
  }
  const fs::path original = manifest_path.parent_path();
  const std::string out = out_override ? *out_override : (original.string() + "-replay");
  if (fs::weakly_canonical(out) == fs::weakly_canonical(original)) {
    throw ConfigError("/output/dir", "replay must write to a different directory than the original run");
  }
  ReplayReport report;
  report.dir = run_invocation(Invocation::from_json(manifest.at("invocation")), manifest.at("config"), out);
  for (const auto& a : manifest.at("artifacts")) {
    const std::string rel = a.at("path").get<std::string>();
    const fs::path p = report.dir / rel;
    if (fs::exists(p) && file_hash(p) == a.at("fnv1a").get<std::string>()) {
      ++report.matched;
    } else {
      report.mismatched.push_back(rel);
    }
  }
  return report;
}

}  // namespace fmriagg::cli
