#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sgn/data.hpp"
#include "sgn/train.hpp"

namespace sgn {

using ordered_json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kCheckpointSchemaVersion = 1;

namespace detail {

inline void reject_unknown_keys(const ordered_json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get_or(const ordered_json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

template <class T>
std::optional<T> get_optional(const ordered_json& j, const char* key, std::optional<T> fallback = std::nullopt) {
  if (!j.contains(key)) return fallback;
  if (j.at(key).is_null()) return std::nullopt;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

template <class T>
ordered_json optional_json(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run configuration

struct DataSpec {
  std::string generator = "gaussian_mixture";  // gaussian_mixture | two_moons | csv
  std::size_t n = 2000;
  std::vector<Vector> centers{{2.0, 0.0}, {-2.0, 0.0}};
  std::vector<double> scales{0.5, 0.5};
  double noise = 0.1;
  std::string path;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelSpec model;
  bool auto_stability_bound = false;  // compute L_H from the initialized Hamiltonian
  TrainConfig train;
  DataSpec data;
  std::size_t samples = 500;
  std::size_t eval_mc_samples = 16;
};

inline ordered_json flow_to_json(const FlowConfig& f) {
  return {{"total_time", f.total_time},
          {"initial_dt", f.initial_dt},
          {"mode", f.mode == StepMode::Fixed ? "fixed" : "adaptive"},
          {"tolerance", f.tolerance},
          {"stability_bound", detail::optional_json(f.stability_bound)},
          {"max_steps", f.max_steps},
          {"error_check_every", f.error_check_every}};
}

inline FlowConfig flow_from_json(const ordered_json& j, bool* auto_bound = nullptr) {
  detail::reject_unknown_keys(
      j, {"total_time", "initial_dt", "mode", "tolerance", "stability_bound", "max_steps", "error_check_every"}, "flow");
  FlowConfig f;
  f.total_time = detail::get_or(j, "total_time", f.total_time);
  f.initial_dt = detail::get_or(j, "initial_dt", f.initial_dt);
  f = FlowConfig::fixed(f.total_time, f.initial_dt);
  const auto mode = detail::get_or<std::string>(j, "mode", "fixed");
  if (mode == "adaptive") f.mode = StepMode::Adaptive;
  else if (mode != "fixed") throw ConfigError("flow.mode must be 'fixed' or 'adaptive'");
  f.tolerance = detail::get_or(j, "tolerance", f.tolerance);
  if (auto_bound) *auto_bound = false;
  if (j.contains("stability_bound") && j.at("stability_bound").is_string()) {
    if (j.at("stability_bound").get<std::string>() != "auto" || !auto_bound)
      throw ConfigError("flow.stability_bound must be a number, null, or \"auto\"");
    *auto_bound = true;
  } else {
    f.stability_bound = detail::get_optional<double>(j, "stability_bound");
  }
  f.max_steps = detail::get_or(j, "max_steps", f.max_steps);
  f.error_check_every = detail::get_or(j, "error_check_every", f.error_check_every);
  f.validate();
  return f;
}

inline ordered_json to_json(const RunConfig& c) {
  ordered_json model = {{"data_dim", c.model.data_dim},
                        {"latent_half_dim", c.model.latent_half_dim},
                        {"encoder_hidden", c.model.encoder_hidden},
                        {"decoder_hidden", c.model.decoder_hidden},
                        {"hamiltonian_width", c.model.hamiltonian_width},
                        {"hamiltonian_depth", c.model.hamiltonian_depth},
                        {"activation", to_string(c.model.activation)},
                        {"spectral_cap", detail::optional_json(c.model.spectral_cap)},
                        {"decoder", c.model.decoder == DecoderKind::Gaussian ? "gaussian" : "exact_affine"}};
  ordered_json flow = flow_to_json(c.model.flow);
  if (c.auto_stability_bound) flow["stability_bound"] = "auto";
  ordered_json train = {{"learning_rate", c.train.learning_rate},
                        {"lipschitz_elbo", detail::optional_json(c.train.lipschitz_elbo)},
                        {"epochs", c.train.epochs},
                        {"batch_size", c.train.batch_size},
                        {"backprop_mode", to_string(c.train.backprop_mode)},
                        {"optimizer", to_string(c.train.optimizer)},
                        {"grad_clip", detail::optional_json(c.train.grad_clip)},
                        {"spectral_iters", c.train.spectral_iters}};
  ordered_json data = {{"generator", c.data.generator}};
  if (c.data.generator == "gaussian_mixture") {
    data["n"] = c.data.n;
    data["centers"] = c.data.centers;
    data["scales"] = c.data.scales;
  } else if (c.data.generator == "two_moons") {
    data["n"] = c.data.n;
    data["noise"] = c.data.noise;
  } else {
    data["path"] = c.data.path;
  }
  return {{"schema_version", kConfigSchemaVersion}, {"seed", c.seed},        {"model", model},
          {"flow", flow},                           {"train", train},        {"data", data},
          {"samples", c.samples},                   {"eval_mc_samples", c.eval_mc_samples}};
}

/// Parses and validates a run configuration; every guard is checked here.
inline RunConfig run_config_from_json(const ordered_json& j) {
  detail::reject_unknown_keys(j, {"schema_version", "seed", "model", "flow", "train", "data", "samples", "eval_mc_samples"},
                              "config");
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  const int version = j.at("schema_version").get<int>();
  if (version != kConfigSchemaVersion)
    throw ConfigError("config: schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  RunConfig c;
  c.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  c.samples = detail::get_or<std::size_t>(j, "samples", c.samples);
  c.eval_mc_samples = detail::get_or<std::size_t>(j, "eval_mc_samples", c.eval_mc_samples);

  const ordered_json m = j.value("model", ordered_json::object());
  detail::reject_unknown_keys(m, {"data_dim", "latent_half_dim", "encoder_hidden", "decoder_hidden", "hamiltonian_width",
                                  "hamiltonian_depth", "activation", "spectral_cap", "decoder"},
                              "model");
  auto& s = c.model;
  s.data_dim = detail::get_or(m, "data_dim", s.data_dim);
  s.latent_half_dim = detail::get_or(m, "latent_half_dim", s.latent_half_dim);
  s.encoder_hidden = detail::get_or(m, "encoder_hidden", s.encoder_hidden);
  s.decoder_hidden = detail::get_or(m, "decoder_hidden", s.decoder_hidden);
  s.hamiltonian_width = detail::get_or(m, "hamiltonian_width", s.hamiltonian_width);
  s.hamiltonian_depth = detail::get_or(m, "hamiltonian_depth", s.hamiltonian_depth);
  s.activation = activation_from_string(detail::get_or<std::string>(m, "activation", "tanh"));
  if (s.activation == Activation::Relu) throw ConfigError("model.activation: relu is not supported");
  s.spectral_cap = detail::get_optional<double>(m, "spectral_cap");
  const auto dec = detail::get_or<std::string>(m, "decoder", "gaussian");
  if (dec == "gaussian") s.decoder = DecoderKind::Gaussian;
  else if (dec == "exact_affine") s.decoder = DecoderKind::ExactAffine;
  else throw ConfigError("model.decoder must be 'gaussian' or 'exact_affine'");
  if (s.data_dim == 0 || s.latent_half_dim == 0 || s.hamiltonian_width == 0 || s.hamiltonian_depth < 2)
    throw ConfigError("model: dimensions must be positive and hamiltonian_depth >= 2");
  if (s.spectral_cap && !(*s.spectral_cap > 0.0)) throw ConfigError("model.spectral_cap must be > 0");

  s.flow = flow_from_json(j.value("flow", ordered_json::object()), &c.auto_stability_bound);
  if (s.decoder == DecoderKind::ExactAffine) {
    if (s.data_dim != 2 * s.latent_half_dim) throw ConfigError("exact_affine decoder requires data_dim = 2 * latent_half_dim");
    if (s.flow.mode != StepMode::Fixed) throw ConfigError("exact_affine decoder requires flow.mode = fixed");
  }

  const ordered_json t = j.value("train", ordered_json::object());
  detail::reject_unknown_keys(t, {"learning_rate", "lipschitz_elbo", "epochs", "batch_size", "backprop_mode", "optimizer",
                                  "grad_clip", "spectral_iters"},
                              "train");
  auto& tc = c.train;
  tc.learning_rate = detail::get_or(t, "learning_rate", tc.learning_rate);
  tc.lipschitz_elbo = detail::get_optional<double>(t, "lipschitz_elbo");
  tc.epochs = detail::get_or(t, "epochs", tc.epochs);
  tc.batch_size = detail::get_or(t, "batch_size", tc.batch_size);
  tc.backprop_mode = backprop_mode_from_string(detail::get_or<std::string>(t, "backprop_mode", "reversible"));
  tc.optimizer = optimizer_from_string(detail::get_or<std::string>(t, "optimizer", "adam"));
  tc.grad_clip = detail::get_optional<double>(t, "grad_clip", 10.0);
  tc.spectral_iters = detail::get_or(t, "spectral_iters", tc.spectral_iters);
  tc.seed = c.seed;
  tc.validate();

  const ordered_json d = j.value("data", ordered_json::object());
  auto& ds = c.data;
  ds.generator = detail::get_or<std::string>(d, "generator", ds.generator);
  if (ds.generator == "gaussian_mixture") {
    detail::reject_unknown_keys(d, {"generator", "n", "centers", "scales"}, "data");
    ds.n = detail::get_or(d, "n", ds.n);
    ds.centers = detail::get_or(d, "centers", ds.centers);
    ds.scales = detail::get_or(d, "scales", ds.scales);
    if (ds.centers.empty() || ds.centers.size() != ds.scales.size())
      throw ConfigError("data: centers and scales must be nonempty and of equal length");
    for (const auto& ctr : ds.centers)
      if (ctr.size() != s.data_dim) throw ConfigError("data: center dimension differs from model.data_dim");
  } else if (ds.generator == "two_moons") {
    detail::reject_unknown_keys(d, {"generator", "n", "noise"}, "data");
    ds.n = detail::get_or(d, "n", ds.n);
    ds.noise = detail::get_or(d, "noise", ds.noise);
    if (s.data_dim != 2) throw ConfigError("data: two_moons requires model.data_dim = 2");
  } else if (ds.generator == "csv") {
    detail::reject_unknown_keys(d, {"generator", "path"}, "data");
    ds.path = detail::get_or<std::string>(d, "path", "");
    if (ds.path.empty()) throw ConfigError("data: csv generator needs a path");
  } else {
    throw ConfigError("data.generator must be gaussian_mixture, two_moons, or csv");
  }
  return c;
}

inline ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

/// Generated or loaded dataset for a run; generators use a sub-stream of the run seed.
inline Dataset make_dataset(const RunConfig& c) {
  Rng rng = Rng(c.seed).split(0xDA7A);
  Dataset ds;
  if (c.data.generator == "gaussian_mixture")
    ds = gen_gaussian_mixture(c.data.centers.size(), c.data.centers, c.data.scales, c.data.n, rng);
  else if (c.data.generator == "two_moons")
    ds = gen_two_moons(c.data.n, c.data.noise, rng);
  else
    ds = read_csv(c.data.path);
  if (!ds.empty() && ds.dim != c.model.data_dim)
    throw DataError("dataset dimension " + std::to_string(ds.dim) + " differs from model.data_dim " +
                    std::to_string(c.model.data_dim));
  return ds;
}

/// Initial model for a run; resolves an "auto" stability bound from the fresh Hamiltonian.
inline SgnModel make_initial_model(const RunConfig& c) {
  Rng rng = Rng(c.seed).split(0x40DE1);
  ModelSpec spec = c.model;
  if (c.auto_stability_bound) {
    spec.flow.stability_bound = std::nullopt;
    SgnModel m = init_model(spec, rng);
    m.flow_cfg.stability_bound = lipschitz_bound(m.hamiltonian);
    m.validate();
    return m;
  }
  return init_model(spec, rng);
}

// ---------------------------------------------------------------------------
// Model, checkpoint, and log serialization

inline ordered_json to_json(const MlpParams& net) {
  ordered_json w = ordered_json::array(), b = ordered_json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto d = net.weights[l].data();
    w.push_back(Vector(d.begin(), d.end()));
    b.push_back(net.biases[l]);
  }
  return {{"layer_dims", net.layer_dims},
          {"activation", to_string(net.activation)},
          {"spectral_cap", detail::optional_json(net.spectral_cap)},
          {"weights", w},
          {"biases", b}};
}

inline MlpParams mlp_from_json(const ordered_json& j) {
  detail::reject_unknown_keys(j, {"layer_dims", "activation", "spectral_cap", "weights", "biases"}, "network");
  MlpParams net(j.at("layer_dims").get<std::vector<std::size_t>>(),
                activation_from_string(j.at("activation").get<std::string>()),
                detail::get_optional<double>(j, "spectral_cap"));
  const auto& w = j.at("weights");
  const auto& b = j.at("biases");
  if (w.size() != net.weights.size() || b.size() != net.biases.size())
    throw ConfigError("network: layer count mismatch");
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto wv = w[l].get<Vector>();
    const auto bv = b[l].get<Vector>();
    auto dst = net.weights[l].data();
    if (wv.size() != dst.size() || bv.size() != net.biases[l].size())
      throw ConfigError("network: tensor shape mismatch in layer " + std::to_string(l));
    std::copy(wv.begin(), wv.end(), dst.begin());
    net.biases[l] = bv;
  }
  net.validate();
  return net;
}

inline ordered_json to_json(const SgnModel& m) {
  ordered_json dec;
  if (const auto* g = std::get_if<GaussianDecoder>(&m.decoder)) {
    dec = {{"type", "gaussian"}, {"net", to_json(g->net)}};
  } else {
    const auto& a = std::get<ExactAffine>(m.decoder);
    dec = {{"type", "exact_affine"}, {"scale", a.scale}, {"shift", a.shift}};
  }
  return {{"data_dim", m.data_dim},
          {"latent_half_dim", m.latent_half_dim},
          {"encoder", to_json(m.encoder)},
          {"hamiltonian", {{"kinetic", to_json(m.hamiltonian.kinetic)}, {"potential", to_json(m.hamiltonian.potential)}}},
          {"decoder", dec},
          {"flow", flow_to_json(m.flow_cfg)}};
}

inline SgnModel model_from_json(const ordered_json& j) {
  detail::reject_unknown_keys(j, {"data_dim", "latent_half_dim", "encoder", "hamiltonian", "decoder", "flow"}, "model");
  SgnModel m;
  m.data_dim = j.at("data_dim").get<std::size_t>();
  m.latent_half_dim = j.at("latent_half_dim").get<std::size_t>();
  m.encoder = mlp_from_json(j.at("encoder"));
  const auto& h = j.at("hamiltonian");
  detail::reject_unknown_keys(h, {"kinetic", "potential"}, "hamiltonian");
  m.hamiltonian = SeparableHamiltonianNet(mlp_from_json(h.at("kinetic")), mlp_from_json(h.at("potential")));
  const auto& d = j.at("decoder");
  const auto type = d.at("type").get<std::string>();
  if (type == "gaussian") {
    detail::reject_unknown_keys(d, {"type", "net"}, "decoder");
    m.decoder = GaussianDecoder{mlp_from_json(d.at("net"))};
  } else if (type == "exact_affine") {
    detail::reject_unknown_keys(d, {"type", "scale", "shift"}, "decoder");
    m.decoder = ExactAffine{d.at("scale").get<Vector>(), d.at("shift").get<Vector>()};
  } else {
    throw ConfigError("decoder.type must be 'gaussian' or 'exact_affine'");
  }
  m.flow_cfg = flow_from_json(j.at("flow"));
  m.validate();
  return m;
}

struct Checkpoint {
  RunConfig config;
  TrainState state;
};

inline ordered_json to_json(const Checkpoint& c) {
  const auto& r = c.state.rng;
  return {{"schema_version", kCheckpointSchemaVersion},
          {"config", to_json(c.config)},
          {"epoch", c.state.epochs_done},
          {"rng", {{"key", r.key}, {"counter", r.counter}, {"has_spare", r.has_spare}, {"spare", r.spare}}},
          {"optimizer", {{"t", c.state.optimizer.t}, {"m", c.state.optimizer.m}, {"v", c.state.optimizer.v}}},
          {"model", to_json(c.state.model)}};
}

inline Checkpoint checkpoint_from_json(const ordered_json& j) {
  detail::reject_unknown_keys(j, {"schema_version", "config", "epoch", "rng", "optimizer", "model"}, "checkpoint");
  const int version = j.at("schema_version").get<int>();
  if (version != kCheckpointSchemaVersion)
    throw ConfigError("checkpoint schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointSchemaVersion) + ")");
  Checkpoint c;
  c.config = run_config_from_json(j.at("config"));
  c.state.epochs_done = j.at("epoch").get<std::size_t>();
  const auto& r = j.at("rng");
  c.state.rng = Rng::State{r.at("key").get<std::uint64_t>(), r.at("counter").get<std::uint64_t>(),
                           r.at("has_spare").get<bool>(), r.at("spare").get<double>()};
  const auto& o = j.at("optimizer");
  c.state.optimizer.t = o.at("t").get<std::size_t>();
  c.state.optimizer.m = o.at("m").get<Vector>();
  c.state.optimizer.v = o.at("v").get<Vector>();
  c.state.model = model_from_json(j.at("model"));
  return c;
}

inline std::string dump_checkpoint(const Checkpoint& c) { return to_json(c).dump(1) + "\n"; }

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << dump_checkpoint(c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return checkpoint_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed checkpoint: " + e.what());
  }
}

inline ordered_json to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"elbo_mean", e.elbo_mean},
          {"elbo_stderr", e.elbo_stderr},
          {"reconstruction_mean", e.reconstruction_mean},
          {"kl_mean", e.kl_mean},
          {"mean_accepted_steps", e.mean_accepted_steps},
          {"rejected_steps", e.rejected_steps},
          {"clamp_events", e.clamp_events},
          {"skipped_samples", e.skipped_samples},
          {"failed_batches", e.failed_batches},
          {"peak_states", e.peak_states},
          {"wall_time_s", e.wall_time_s}};
}

}  // namespace sgn
