#include "fmriagg/cae.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "fmriagg/error.hpp"
#include "fmriagg/rng.hpp"
#include "fmriagg/svol.hpp"

namespace fmriagg {

void CaeConfig::validate() const {
  if (f < 1 || f % 2 == 0) throw InvalidInput("cae filter edge f must be odd and >= 1");
  if (k1 < 1 || k3 < 1) throw InvalidInput("cae filter counts k1, k3 must be >= 1");
  if (k1 > f * f * f) {
    throw InvalidInput("k1 = " + std::to_string(k1) + " exceeds f^3 = " + std::to_string(f * f * f) +
                       " (orthogonal init needs k1 <= f^3)");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("dropout must be in [0,1)");
  sparsity.validate();
}

void CaeModel::validate() const {
  cfg.validate();
  if (m < 1) throw InvalidInput("cae needs at least one subject");
  const int taps = cfg.f * cfg.f * cfg.f;
  auto need = [](bool ok, const char* what) {
    if (!ok) throw InvalidInput(std::string("cae parameter shape mismatch: ") + what);
  };
  need(enc.size() == static_cast<std::size_t>(m) && enc_bias.size() == enc.size(), "encoder count");
  need(dec.size() == static_cast<std::size_t>(m) && dec_bias.size() == dec.size(), "decoder count");
  for (int i = 0; i < m; ++i) {
    need(enc[i].rows() == cfg.k1 && enc[i].cols() == taps, "encoder filters");
    need(enc_bias[i].size() == cfg.k1, "encoder bias");
    need(dec[i].rows() == 1 && dec[i].cols() == cfg.k3 * taps, "decoder filters");
    need(dec_bias[i].size() == 1, "decoder bias");
  }
  need(mix.rows() == cfg.k3 && mix.cols() == cfg.k1 && mix_bias.size() == cfg.k3, "mixing layer");
  need(geom && geom->dims() == dims && geom->edge() == cfg.f, "geometry");
  for (const auto& b : to_blocks()) {
    if (!b.allFinite()) throw NumericalError("cae parameters contain non-finite values");
  }
}

std::size_t CaeModel::num_params() const {
  std::size_t n = 0;
  for (const auto& b : to_blocks()) n += static_cast<std::size_t>(b.size());
  return n;
}

namespace {

Eigen::VectorXd flat(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

void unflat(const Eigen::VectorXd& v, Eigen::MatrixXd& m) {
  if (v.size() != m.size()) throw InvalidInput("parameter block has the wrong length");
  m = Eigen::Map<const Eigen::MatrixXd>(v.data(), m.rows(), m.cols());
}

}  // namespace

ParamBlocks CaeModel::to_blocks() const {
  ParamBlocks out;
  for (int i = 0; i < m; ++i) {
    out.push_back(flat(enc[i]));
    out.push_back(enc_bias[i]);
  }
  out.push_back(flat(mix));
  out.push_back(mix_bias);
  for (int i = 0; i < m; ++i) {
    out.push_back(flat(dec[i]));
    out.push_back(dec_bias[i]);
  }
  return out;
}

void CaeModel::from_blocks(const ParamBlocks& blocks) {
  if (blocks.size() != static_cast<std::size_t>(4 * m + 2)) throw InvalidInput("wrong number of cae parameter blocks");
  std::size_t b = 0;
  for (int i = 0; i < m; ++i) {
    unflat(blocks[b++], enc[i]);
    if (blocks[b].size() != enc_bias[i].size()) throw InvalidInput("encoder bias block has the wrong length");
    enc_bias[i] = blocks[b++];
  }
  unflat(blocks[b++], mix);
  if (blocks[b].size() != mix_bias.size()) throw InvalidInput("mixing bias block has the wrong length");
  mix_bias = blocks[b++];
  for (int i = 0; i < m; ++i) {
    unflat(blocks[b++], dec[i]);
    if (blocks[b].size() != 1) throw InvalidInput("decoder bias block has the wrong length");
    dec_bias[i] = blocks[b++];
  }
}

CaeModel cae_init(int m, Dims3 dims, const CaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (m < 1) throw InvalidInput("cae needs at least one subject");
  CaeModel model;
  model.m = m;
  model.dims = dims;
  model.cfg = cfg;
  model.geom = std::make_shared<const ConvGeometry>(dims, cfg.f);
  const int taps = cfg.f * cfg.f * cfg.f;
  for (int i = 0; i < m; ++i) {
    const auto si = static_cast<std::uint64_t>(i);
    model.enc.push_back(orthogonal_init(cfg.k1, taps, derive_seed({seed, 1, si})));
    model.enc_bias.push_back(Eigen::VectorXd::Zero(cfg.k1));
    Rng rng(derive_seed({seed, 3, si}));
    model.dec.push_back(gaussian_matrix(1, cfg.k3 * taps, rng, 1.0 / std::sqrt(double(cfg.k3 * taps))));
    model.dec_bias.push_back(Eigen::VectorXd::Zero(1));
  }
  Rng rng(derive_seed({seed, 2}));
  model.mix = gaussian_matrix(cfg.k3, cfg.k1, rng, 1.0 / std::sqrt(double(cfg.k1)));
  model.mix_bias = Eigen::VectorXd::Zero(cfg.k3);
  return model;
}

namespace {

std::uint64_t mask_key(std::uint64_t key, int layer, int subject) {
  return derive_seed({key, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(subject)});
}

std::uint64_t checksum_for(std::uint64_t key, double p) {
  return derive_seed({key, std::bit_cast<std::uint64_t>(p), 0xd0u});
}

bool uses_dropout(const CaeModel& model, bool train) { return train && model.cfg.dropout > 0.0; }

void check_inputs(const CaeModel& model, std::span<const Eigen::VectorXd> x) {
  if (x.size() != static_cast<std::size_t>(model.m)) {
    throw InvalidInput("cae expects " + std::to_string(model.m) + " subject volumes, got " + std::to_string(x.size()));
  }
  for (const auto& xi : x) {
    if (xi.size() != model.geom->voxels()) throw InvalidInput("cae input volume does not match the model dims");
  }
}

Eigen::MatrixXd as_column(const Eigen::VectorXd& v) { return v; }

Eigen::MatrixXd mix_forward(const CaeModel& model, const Eigen::MatrixXd& h) {
  Eigen::MatrixXd z = h * model.mix.transpose();
  z.rowwise() += model.mix_bias.transpose();
  return tanh_forward(z);
}

}  // namespace

CaeForward cae_forward(const CaeModel& model, std::span<const Eigen::VectorXd> x, bool train, std::uint64_t key) {
  check_inputs(model, x);
  const auto& g = *model.geom;
  const bool drop = uses_dropout(model, train);
  const double p = model.cfg.dropout;
  CaeForward fwd;
  fwd.train = train;
  fwd.mask_checksum = drop ? checksum_for(key, p) : 0;
  fwd.pooled = Eigen::MatrixXd::Zero(g.voxels(), model.cfg.k1);
  for (int i = 0; i < model.m; ++i) {
    fwd.a1.push_back(tanh_forward(conv3d_forward(g, as_column(x[i]), model.enc[i], model.enc_bias[i])));
    if (drop) {
      fwd.d1.push_back(dropout_mask(g.voxels(), model.cfg.k1, p, mask_key(key, 1, i)));
      fwd.pooled += fwd.a1.back().cwiseProduct(fwd.d1.back());
    } else {
      fwd.pooled += fwd.a1.back();
    }
  }
  fwd.pooled /= model.m;
  fwd.a3 = mix_forward(model, fwd.pooled);
  if (drop) {
    fwd.d3 = dropout_mask(g.voxels(), model.cfg.k3, p, mask_key(key, 3, 0));
    fwd.shared = fwd.a3.cwiseProduct(fwd.d3);
  } else {
    fwd.shared = fwd.a3;
  }
  for (int i = 0; i < model.m; ++i) {
    fwd.xhat.push_back(conv3d_forward(g, fwd.shared, model.dec[i], model.dec_bias[i]).col(0));
  }
  return fwd;
}

double cae_reconstruction(std::span<const Eigen::VectorXd> x, const CaeForward& fwd) {
  if (x.size() != fwd.xhat.size()) throw InvalidInput("cae_reconstruction: subject count mismatch");
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - fwd.xhat[i]).squaredNorm();
  return total / static_cast<double>(x.size());
}

std::pair<double, double> cae_sparsity_stats(const CaeForward& fwd) {
  return {0.5 * (fwd.a3.array() + 1.0).sum(), static_cast<double>(fwd.a3.size())};
}

ParamBlocks cae_sample_backward(const CaeModel& model, std::span<const Eigen::VectorXd> x, const CaeForward& fwd,
                                double kl_slope, std::uint64_t key) {
  check_inputs(model, x);
  const bool drop = !fwd.d1.empty();
  if (drop && fwd.mask_checksum != checksum_for(key, model.cfg.dropout)) {
    throw InvalidInput("dropout seed does not match the one used in the forward pass");
  }
  const auto& g = *model.geom;
  const int m = model.m;
  ParamBlocks enc_grads(2 * static_cast<std::size_t>(m));
  ParamBlocks dec_grads(2 * static_cast<std::size_t>(m));

  Eigen::MatrixXd d_shared = Eigen::MatrixXd::Zero(g.voxels(), model.cfg.k3);
  for (int i = 0; i < m; ++i) {
    const Eigen::MatrixXd gi = (2.0 / m) * (fwd.xhat[i] - x[i]);
    ConvGrads cg = conv3d_backward(g, gi, fwd.shared, model.dec[i], true);
    d_shared += cg.input;
    dec_grads[2 * i] = flat(cg.filters);
    dec_grads[2 * i + 1] = cg.bias;
  }
  Eigen::MatrixXd d_a3 = drop ? d_shared.cwiseProduct(fwd.d3) : d_shared;
  if (kl_slope != 0.0) d_a3.array() += kl_slope;
  const Eigen::MatrixXd d_z3 = tanh_backward(fwd.a3, d_a3);
  const Eigen::MatrixXd d_mix = d_z3.transpose() * fwd.pooled;
  const Eigen::VectorXd d_mix_bias = d_z3.colwise().sum().transpose();
  const Eigen::MatrixXd d_pooled = (d_z3 * model.mix) / m;

  for (int i = 0; i < m; ++i) {
    const Eigen::MatrixXd d_h1 = drop ? d_pooled.cwiseProduct(fwd.d1[i]) : d_pooled;
    const Eigen::MatrixXd d_z1 = tanh_backward(fwd.a1[i], d_h1);
    ConvGrads cg = conv3d_backward(g, d_z1, as_column(x[i]), model.enc[i], false);
    enc_grads[2 * i] = flat(cg.filters);
    enc_grads[2 * i + 1] = cg.bias;
  }

  ParamBlocks out;
  out.reserve(4 * static_cast<std::size_t>(m) + 2);
  for (auto& b : enc_grads) out.push_back(std::move(b));
  out.push_back(flat(d_mix));
  out.push_back(d_mix_bias);
  for (auto& b : dec_grads) out.push_back(std::move(b));
  return out;
}

CaeData::CaeData(std::vector<Volume4D> volumes) : vols_(std::move(volumes)) {
  if (vols_.empty()) throw InvalidInput("cae data needs at least one subject");
  for (const auto& v : vols_) {
    if (!(v.dims() == vols_.front().dims()) || v.trs() != vols_.front().trs()) {
      throw InvalidInput("all subjects must share dims and TR count");
    }
  }
}

std::vector<Eigen::VectorXd> CaeData::sample(int t) const {
  if (t < 0 || t >= samples()) throw InvalidInput("sample index out of range");
  std::vector<Eigen::VectorXd> out;
  out.reserve(vols_.size());
  for (const auto& v : vols_) out.emplace_back(v.matrix().col(t));
  return out;
}

std::uint64_t cae_sample_key(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample) {
  return derive_seed({seed, epoch, sample});
}

namespace {

void check_data(const CaeModel& model, const CaeData& data) {
  if (data.subjects() != model.m) throw InvalidInput("data subject count does not match the model");
  if (!(data.dims() == model.dims)) throw InvalidInput("data dims do not match the model");
}

void add_into(ParamBlocks& acc, const ParamBlocks& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t b = 0; b < acc.size(); ++b) acc[b] += g[b];
}

}  // namespace

CaeLoss cae_loss(const CaeModel& model, const CaeData& data, std::span<const int> batch, bool train,
                 std::uint64_t seed) {
  check_data(model, data);
  if (batch.empty()) throw InvalidInput("cae_loss: empty batch");
  CaeLoss loss;
  double sum_unit = 0, count = 0;
  for (int t : batch) {
    const auto x = data.sample(t);
    const CaeForward fwd = cae_forward(model, x, train, cae_sample_key(seed, 0, static_cast<std::uint64_t>(t)));
    loss.reconstruction += cae_reconstruction(x, fwd);
    const auto [s, c] = cae_sparsity_stats(fwd);
    sum_unit += s;
    count += c;
  }
  const KlTerm kl = kl_from_stats(sum_unit, count, model.cfg.sparsity);
  loss.kl = model.cfg.sparsity.lambda * kl.penalty;
  loss.rho_hat = kl.rho_hat;
  loss.total = loss.reconstruction + loss.kl;
  return loss;
}

CaeBatchGrad cae_backward(const CaeModel& model, const CaeData& data, std::span<const int> batch, bool train,
                          std::uint64_t seed) {
  check_data(model, data);
  if (batch.empty()) throw InvalidInput("cae_backward: empty batch");
  std::vector<std::vector<Eigen::VectorXd>> xs;
  std::vector<CaeForward> fwds;
  double sum_unit = 0, count = 0;
  CaeBatchGrad out;
  for (int t : batch) {
    xs.push_back(data.sample(t));
    fwds.push_back(cae_forward(model, xs.back(), train, cae_sample_key(seed, 0, static_cast<std::uint64_t>(t))));
    out.loss.reconstruction += cae_reconstruction(xs.back(), fwds.back());
    const auto [s, c] = cae_sparsity_stats(fwds.back());
    sum_unit += s;
    count += c;
  }
  const KlTerm kl = kl_from_stats(sum_unit, count, model.cfg.sparsity);
  const double lambda = model.cfg.sparsity.lambda;
  out.loss.kl = lambda * kl.penalty;
  out.loss.rho_hat = kl.rho_hat;
  out.loss.total = out.loss.reconstruction + out.loss.kl;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto key = cae_sample_key(seed, 0, static_cast<std::uint64_t>(batch[b]));
    add_into(out.grads, cae_sample_backward(model, xs[b], fwds[b], lambda * kl.slope, key));
  }
  return out;
}

TrainResult cae_train(CaeModel& model, const CaeData& data, const DistConfig& cfg) {
  check_data(model, data);
  model.validate();
  cfg.validate();

  struct Cached {
    std::vector<Eigen::VectorXd> x;
    CaeForward fwd;
  };
  auto cache = std::make_shared<std::unordered_map<int, Cached>>();
  const CaeModel shape = model;
  const std::uint64_t seed = cfg.seed;
  const SparsityConfig sp = model.cfg.sparsity;

  SgdProblem problem;
  problem.samples = data.samples();
  problem.stats_size = 2;
  problem.stats = [&data, cache, shape, seed](const ParamBlocks& params, std::span<const int> shard,
                                              std::uint64_t epoch) {
    CaeModel local = shape;
    local.from_blocks(params);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
    for (int t : shard) {
      Cached c{data.sample(t), {}};
      c.fwd = cae_forward(local, c.x, true, cae_sample_key(seed, epoch, static_cast<std::uint64_t>(t)));
      const auto [u, n] = cae_sparsity_stats(c.fwd);
      s[0] += u;
      s[1] += n;
      (*cache)[t] = std::move(c);
    }
    return s;
  };
  problem.gradient = [cache, shape, seed, sp](const ParamBlocks& params, std::span<const int> shard,
                                              std::uint64_t epoch, const Eigen::VectorXd& stats) {
    CaeModel local = shape;
    local.from_blocks(params);
    const KlTerm kl = kl_from_stats(stats[0], stats[1], sp);
    GradientBundle bundle;
    for (int t : shard) {
      const auto it = cache->find(t);
      if (it == cache->end()) throw InvalidInput("sample missing from the forward cache");
      const auto key = cae_sample_key(seed, epoch, static_cast<std::uint64_t>(t));
      add_into(bundle.grads, cae_sample_backward(local, it->second.x, it->second.fwd, sp.lambda * kl.slope, key));
      bundle.loss += cae_reconstruction(it->second.x, it->second.fwd);
      bundle.count += 1;
    }
    return bundle;
  };
  problem.batch_loss = [sp](const Eigen::VectorXd& stats) {
    return sp.lambda * kl_from_stats(stats[0], stats[1], sp).penalty;
  };
  problem.end_step = [cache] { cache->clear(); };

  TrainResult result = sync_sgd_run(model.to_blocks(), problem, cfg);
  model.from_blocks(result.params);
  return result;
}

std::vector<Eigen::MatrixXd> cae_encode_heldout(const CaeModel& model, int subject, const Volume4D& vol) {
  if (subject < 0 || subject >= model.m) throw InvalidInput("subject index out of range");
  if (!(vol.dims() == model.dims)) throw InvalidInput("held-out volume dims do not match the model");
  const auto& g = *model.geom;
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(vol.trs()));
  const auto mat = vol.matrix();
  for (int t = 0; t < vol.trs(); ++t) {
    const Eigen::MatrixXd x = mat.col(t);
    const Eigen::MatrixXd a1 = tanh_forward(conv3d_forward(g, x, model.enc[subject], model.enc_bias[subject]));
    out.push_back(mix_forward(model, a1));
  }
  return out;
}

Eigen::VectorXd cae_map_between_subjects(const CaeModel& model, int i, int j, const Eigen::VectorXd& m_volume) {
  if (i < 0 || j < 0 || i >= model.m || j >= model.m) throw InvalidInput("subject index out of range");
  const auto& g = *model.geom;
  if (m_volume.size() != g.voxels()) throw InvalidInput("map volume does not match the model dims");
  auto path = [&](const Eigen::MatrixXd& x) -> Eigen::VectorXd {
    const Eigen::MatrixXd a1 = tanh_forward(conv3d_forward(g, x, model.enc[i], model.enc_bias[i]));
    return conv3d_forward(g, mix_forward(model, a1), model.dec[j], model.dec_bias[j]).col(0);
  };
  const Eigen::MatrixXd x = m_volume;
  return path(x) - path(Eigen::MatrixXd::Zero(g.voxels(), 1));
}

void save_cae(const CaeModel& model, const std::string& dir) {
  model.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create model directory " + dir + ": " + ec.message());
  nlohmann::ordered_json j;
  j["format"] = "fmriagg-cae";
  j["m"] = model.m;
  j["dims"] = {model.dims.x, model.dims.y, model.dims.z};
  j["f"] = model.cfg.f;
  j["k1"] = model.cfg.k1;
  j["k3"] = model.cfg.k3;
  j["rho"] = model.cfg.sparsity.rho;
  j["lambda"] = model.cfg.sparsity.lambda;
  j["clamp_eps"] = model.cfg.sparsity.clamp_eps;
  j["dropout"] = model.cfg.dropout;
  const auto blocks = model.to_blocks();
  auto& files = j["blocks"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string name = "block_" + std::to_string(b) + ".svol";
    write_matrix(blocks[b], std::filesystem::path(dir) / name);
    files.push_back(name);
  }
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(std::filesystem::path(dir) / "cae.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

CaeModel load_cae(const std::string& dir) {
  const auto bytes = read_file_bytes(std::filesystem::path(dir) / "cae.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cae.json: ") + e.what(), 0);
  }
  try {
    if (j.at("format") != "fmriagg-cae") throw FormatError("cae.json: not a cae model", 0);
    CaeConfig cfg;
    cfg.f = j.at("f");
    cfg.k1 = j.at("k1");
    cfg.k3 = j.at("k3");
    cfg.sparsity.rho = j.at("rho");
    cfg.sparsity.lambda = j.at("lambda");
    cfg.sparsity.clamp_eps = j.at("clamp_eps");
    cfg.dropout = j.at("dropout");
    const Dims3 dims{j.at("dims").at(0), j.at("dims").at(1), j.at("dims").at(2)};
    CaeModel model = cae_init(j.at("m"), dims, cfg, 0);
    ParamBlocks blocks;
    for (const auto& name : j.at("blocks")) {
      blocks.push_back(read_matrix(std::filesystem::path(dir) / name.get<std::string>()).col(0));
    }
    model.from_blocks(blocks);
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cae.json: ") + e.what(), 0);
  }
}

}  // namespace fmriagg
