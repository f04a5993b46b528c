#include "run_config.hpp"

#include <sstream>
#include <vector>

#include "fmriagg/error.hpp"

namespace fmriagg::cli {

Json default_config() {
  return Json::parse(R"({
    "seed": 0,
    "data": {
      "source": "synth",
      "dir": "",
      "n_scenes": 10,
      "synth": {
        "m": 5,
        "dims": [12, 12, 12],
        "d": 200,
        "k_true": 4,
        "topo_radius": 1,
        "jitter": 1,
        "regions": 1,
        "noise_sigma": 1.0,
        "smoothness": 0.2,
        "signal_gain": 1.0
      }
    },
    "method": {
      "name": "ssrm",
      "k": 10,
      "srm_iters": 10,
      "srm_tol": 1e-6,
      "edge": 5,
      "min_vs": 0,
      "cae": {"f": 5, "k1": 20, "k3": 20, "rho": 0.75, "lambda": 1.0, "clamp_eps": 1e-6, "dropout": 0.5},
      "mvae": {"k": 10, "rho": 0.75, "lambda": 1.0, "clamp_eps": 1e-6, "dropout": 0.5, "tanh_decoder": false}
    },
    "train": {
      "workers": 1,
      "batch": 10,
      "epochs": 5,
      "lr": 1e-3,
      "decay": 0.9,
      "epsilon": 1e-6,
      "shuffle": true
    },
    "eval": {
      "seg_len": 9,
      "exclusion": true,
      "top_fraction": 0.005,
      "map_threshold": 0.0,
      "svm": {"lambda": 1e-3, "epochs": 200},
      "roi": {"center": [6, 6, 6], "half_width": 1, "from": 0, "to": 1}
    },
    "output": {"dir": "", "dtype": "f64"}
  })");
}

namespace {

std::string type_name(const Json& j) {
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

// Integers may stand in for floats, never the reverse.
bool compatible(const Json& def, const Json& val) {
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_number()) return val.is_number();
  return def.type() == val.type();
}

void merge(Json& into, const Json& user, const std::string& path) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string here = path + "/" + it.key();
    if (!into.contains(it.key())) throw ConfigError(here, "unknown config key");
    Json& slot = into[it.key()];
    if (slot.is_object()) {
      if (!it.value().is_object()) throw ConfigError(here, "expected an object, got " + type_name(it.value()));
      merge(slot, it.value(), here);
      continue;
    }
    if (!compatible(slot, it.value())) {
      throw ConfigError(here, "expected " + type_name(slot) + ", got " + type_name(it.value()));
    }
    if (slot.is_array()) {
      if (it.value().size() != slot.size()) {
        throw ConfigError(here, "expected " + std::to_string(slot.size()) + " elements");
      }
      for (std::size_t i = 0; i < slot.size(); ++i) {
        if (!compatible(slot[i], it.value()[i])) {
          throw ConfigError(here + "/" + std::to_string(i), "expected " + type_name(slot[i]));
        }
      }
    }
    slot = it.value();
  }
}

template <class T>
T get(const Json& doc, const std::string& pointer) {
  return doc.at(Json::json_pointer(pointer)).get<T>();
}

int get_int(const Json& doc, const std::string& pointer, int lo) {
  const auto v = get<long long>(doc, pointer);
  if (v < lo) throw ConfigError(pointer, "must be >= " + std::to_string(lo));
  return static_cast<int>(v);
}

Coord get_coord(const Json& doc, const std::string& pointer) {
  const Json& a = doc.at(Json::json_pointer(pointer));
  return {a[0].get<int>(), a[1].get<int>(), a[2].get<int>()};
}

// Re-raises a module validation failure as a config error at `pointer`.
template <class F>
void validated(const std::string& pointer, F&& check) {
  try {
    check();
  } catch (const InvalidInput& e) {
    throw ConfigError(pointer, e.what());
  }
}

}  // namespace

RunConfig resolve_config(const Json& user) {
  if (!user.is_object()) throw ConfigError("", "config must be a JSON object");
  RunConfig rc;
  rc.resolved = default_config();
  merge(rc.resolved, user, "");
  const Json& d = rc.resolved;

  const auto seed = get<long long>(d, "/seed");
  if (seed < 0) throw ConfigError("/seed", "must be >= 0");
  rc.seed = static_cast<std::uint64_t>(seed);

  rc.data_source = get<std::string>(d, "/data/source");
  if (rc.data_source != "synth" && rc.data_source != "dir") {
    throw ConfigError("/data/source", "must be \"synth\" or \"dir\"");
  }
  rc.data_dir = get<std::string>(d, "/data/dir");
  if (rc.data_source == "dir" && rc.data_dir.empty()) throw ConfigError("/data/dir", "required when source is dir");
  rc.n_scenes = get_int(d, "/data/n_scenes", 0);

  SynthSpec& s = rc.synth;
  s.m = get_int(d, "/data/synth/m", 2);
  const Coord dims = get_coord(d, "/data/synth/dims");
  s.dims = {dims.x, dims.y, dims.z};
  s.d = get_int(d, "/data/synth/d", 1);
  s.k_true = get_int(d, "/data/synth/k_true", 1);
  s.topo_radius = get_int(d, "/data/synth/topo_radius", 0);
  s.jitter = get_int(d, "/data/synth/jitter", 0);
  s.regions = get_int(d, "/data/synth/regions", 1);
  s.noise_sigma = get<double>(d, "/data/synth/noise_sigma");
  s.smoothness = get<double>(d, "/data/synth/smoothness");
  s.signal_gain = get<double>(d, "/data/synth/signal_gain");
  s.seed = rc.seed;
  if (rc.data_source == "synth") validated("/data/synth", [&] { s.validate(); });

  MethodConfig& mc = rc.method;
  validated("/method/name", [&] { mc.method = parse_method(get<std::string>(d, "/method/name")); });
  mc.srm.k = get_int(d, "/method/k", 1);
  mc.srm.max_iters = get_int(d, "/method/srm_iters", 0);
  mc.srm.tol = get<double>(d, "/method/srm_tol");
  mc.srm.seed = rc.seed;
  mc.edge = get_int(d, "/method/edge", 1);
  mc.min_vs = static_cast<std::size_t>(get_int(d, "/method/min_vs", 0));
  mc.cae.f = get_int(d, "/method/cae/f", 1);
  mc.cae.k1 = get_int(d, "/method/cae/k1", 1);
  mc.cae.k3 = get_int(d, "/method/cae/k3", 1);
  mc.cae.sparsity.rho = get<double>(d, "/method/cae/rho");
  mc.cae.sparsity.lambda = get<double>(d, "/method/cae/lambda");
  mc.cae.sparsity.clamp_eps = get<double>(d, "/method/cae/clamp_eps");
  mc.cae.dropout = get<double>(d, "/method/cae/dropout");
  mc.mvae.k = get_int(d, "/method/mvae/k", 1);
  mc.mvae.sparsity.rho = get<double>(d, "/method/mvae/rho");
  mc.mvae.sparsity.lambda = get<double>(d, "/method/mvae/lambda");
  mc.mvae.sparsity.clamp_eps = get<double>(d, "/method/mvae/clamp_eps");
  mc.mvae.dropout = get<double>(d, "/method/mvae/dropout");
  mc.mvae.tanh_decoder = get<bool>(d, "/method/mvae/tanh_decoder");

  DistConfig train;
  train.workers = get_int(d, "/train/workers", 1);
  train.batch = get_int(d, "/train/batch", 1);
  train.epochs = get_int(d, "/train/epochs", 0);
  train.rmsprop.lr = get<double>(d, "/train/lr");
  train.rmsprop.decay = get<double>(d, "/train/decay");
  train.rmsprop.epsilon = get<double>(d, "/train/epsilon");
  train.shuffle = get<bool>(d, "/train/shuffle");
  train.seed = rc.seed;
  validated("/train", [&] { train.validate(); });
  mc.cae_train = train;
  mc.mvae.train = train;
  validated("/method", [&] { mc.validate(); });

  rc.exp1.matching.seg_len = get_int(d, "/eval/seg_len", 1);
  rc.exp1.matching.exclusion = get<bool>(d, "/eval/exclusion");
  rc.exp1.top_fraction = get<double>(d, "/eval/top_fraction");
  rc.exp1.map_threshold = get<double>(d, "/eval/map_threshold");
  validated("/eval", [&] { rc.exp1.validate(); });
  rc.svm.lambda = get<double>(d, "/eval/svm/lambda");
  rc.svm.epochs = get_int(d, "/eval/svm/epochs", 1);
  rc.svm.seed = rc.seed;
  validated("/eval/svm", [&] { rc.svm.validate(); });
  rc.roi.center = get_coord(d, "/eval/roi/center");
  rc.roi.half_width = get_int(d, "/eval/roi/half_width", 0);
  rc.roi.from = get_int(d, "/eval/roi/from", 0);
  rc.roi.to = get_int(d, "/eval/roi/to", 0);

  rc.out_dir = get<std::string>(d, "/output/dir");
  const auto dtype = get<std::string>(d, "/output/dtype");
  if (dtype == "f64") {
    rc.dtype = Dtype::f64;
  } else if (dtype == "f32") {
    rc.dtype = Dtype::f32;
  } else {
    throw ConfigError("/output/dtype", "must be \"f32\" or \"f64\"");
  }
  return rc;
}

Json load_json_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw ConfigError("", path + ": " + e.what());
  }
}

void set_config_path(Json& doc, const std::string& dotted, const Json& value) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError(dotted, "empty component in parameter path");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError(dotted, "empty parameter path");
  // Missing levels become objects so that merge() reports unknown keys with
  // their full path.
  Json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    Json& child = (*node)[parts[i]];
    if (!child.is_object()) child = Json::object();
    node = &child;
  }
  (*node)[parts.back()] = value;
}

}  // namespace fmriagg::cli
