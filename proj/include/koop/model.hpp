#pragma once

#include "json.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "koop/error.hpp"
#include "koop/netblocks.hpp"
#include "koop/params.hpp"
#include "koop/rng.hpp"
#include "koop/tape.hpp"
#include "koop/tensor.hpp"

namespace koop {

enum class ModelKind { traditional, convex, extended };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::traditional: return "traditional";
    case ModelKind::convex: return "convex";
    case ModelKind::extended: return "extended";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "traditional") return ModelKind::traditional;
  if (s == "convex") return ModelKind::convex;
  if (s == "extended") return ModelKind::extended;
  throw ConfigError("unknown model kind '" + s + "' (expected traditional|convex|extended)");
}

/// Architecture of one lifted-dynamics model. Defaults are the desk-scale
/// double-well setup; full scale is hidden 512, lifted 256, ICNN hidden 256.
struct ModelConfig {
  ModelKind kind = ModelKind::extended;
  std::size_t obs_dim = 2;
  std::size_t control_dim = 1;
  std::size_t history = 2;
  std::size_t lifted_dim = 64;
  std::size_t lift_hidden = 128;
  std::size_t lift_layers = 10;
  std::size_t icnn_hidden = 128;
  std::size_t icnn_layers = 2;
  std::size_t ae_hidden = 128;
  std::size_t ae_layers_enc = 2;
  std::size_t ae_layers_dec = 2;
  double control_bound = 1.0;
  bool linear_bias = false;
  std::uint64_t seed = 1;

  std::size_t lift_input_dim() const { return (history + 1) * (obs_dim + control_dim); }

  ResNetConfig lift() const {
    return {lift_input_dim(), lift_hidden, lifted_dim, lift_layers, Activation::relu};
  }
  IcnnConfig icnn() const { return {lifted_dim, control_dim, icnn_hidden, icnn_layers}; }
  AutoencoderConfig autoencoder() const {
    return {control_dim, lifted_dim, ae_hidden, ae_layers_enc, ae_layers_dec, control_bound};
  }
  LinearDynConfig linear() const { return {lifted_dim, control_dim, linear_bias}; }

  void validate() const {
    if (obs_dim == 0 || control_dim == 0 || lifted_dim == 0)
      throw ConfigError("model: obs_dim, control_dim and lifted_dim must be positive");
    if (lifted_dim < obs_dim)
      throw ConfigError("model: lifted_dim must be at least obs_dim (head holds the observation)");
    if (lift_hidden == 0 || lift_layers == 0 || icnn_hidden == 0 || icnn_layers == 0 ||
        ae_hidden == 0 || ae_layers_enc == 0 || ae_layers_dec == 0)
      throw ConfigError("model: widths and depths must be positive");
    if (!(control_bound > 0)) throw ConfigError("model: control_bound must be positive");
  }
};

/// Per-channel observation standardization, identity when disabled.
struct Normalization {
  bool enabled = false;
  std::vector<double> mean;
  std::vector<double> stddev;

  double forward(std::size_t ch, double v) const {
    return enabled ? (v - mean[ch]) / stddev[ch] : v;
  }
  double inverse(std::size_t ch, double v) const {
    return enabled ? v * stddev[ch] + mean[ch] : v;
  }
};

/// Observation/control history ordered oldest to newest (indices -T..0).
struct HistoryWindow {
  Tensor<float> observations;  // [(T+1) x D_obs]
  Tensor<float> controls;      // [(T+1) x D_ctrl]
};

template <class T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
  Normalization norm;
  nlohmann::json training = nlohmann::json::object();

  ModelKind kind() const { return config.kind; }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.config = config;
    m.params = params.template cast<U>();
    m.norm = norm;
    m.training = training;
    return m;
  }
};

/// Fresh model with every parameter initialized from config.seed.
template <class T>
Model<T> make_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<T> m;
  m.config = cfg;
  Xoshiro256 rng(cfg.seed);
  add_resnet_params(m.params, "lift", cfg.lift(), rng);
  if (cfg.kind == ModelKind::traditional) {
    add_linear_dyn_params(m.params, "lin", cfg.linear(), rng);
  } else {
    add_icnn_params(m.params, "icnn", cfg.icnn(), rng);
  }
  if (cfg.kind == ModelKind::extended) {
    add_resnet_params(m.params, "enc", cfg.autoencoder().encoder(), rng);
    add_resnet_params(m.params, "dec", cfg.autoencoder().decoder(), rng);
  }
  return m;
}

/// Number of lift evaluations on this thread; rollout must add exactly one.
inline std::uint64_t& lift_call_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

/// Flattened lift input for a batch of windows: obs(-T)..obs(0) then
/// ctrl(-T)..ctrl(0), observations normalized.
template <class T>
Tensor<T> lift_input(const Model<T>& model, const std::vector<HistoryWindow>& windows) {
  const auto& c = model.config;
  const std::size_t rows = c.history + 1;
  Tensor<T> out({windows.size(), c.lift_input_dim()});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    if (w.observations.rows() != rows || w.observations.cols() != c.obs_dim ||
        w.controls.rows() != rows || w.controls.cols() != c.control_dim)
      throw ConfigError("lift: window " + w.observations.dims_string() + "/" +
                        w.controls.dims_string() + " does not match history " +
                        std::to_string(c.history) + ", obs " + std::to_string(c.obs_dim) +
                        ", ctrl " + std::to_string(c.control_dim));
    std::size_t k = 0;
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t j = 0; j < c.obs_dim; ++j)
        out.at(b, k++) = static_cast<T>(model.norm.forward(j, w.observations.at(t, j)));
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t j = 0; j < c.control_dim; ++j)
        out.at(b, k++) = static_cast<T>(w.controls.at(t, j));
  }
  return out;
}

/// x0 = phi(flattened window), batched over rows of `input`.
template <class T>
Var lift(Tape<T>& tape, Model<T>& model, Var input) {
  ++lift_call_counter();
  return resnet_forward(tape, model.params, "lift", model.config.lift(), input);
}

struct StepOutput {
  Var next;
  std::optional<Var> transformed;  // encoded control, Extended only
};

/// One step in lifted space. Traditional: linear; Convex: ICNN(x, c);
/// Extended: ICNN(x, encode(c, x)).
template <class T>
StepOutput step_lifted(Tape<T>& tape, Model<T>& model, Var lifted, Var control) {
  const auto& c = model.config;
  switch (c.kind) {
    case ModelKind::traditional:
      return {linear_dyn_forward(tape, model.params, "lin", c.linear(), lifted, control), {}};
    case ModelKind::convex:
      return {icnn_forward(tape, model.params, "icnn", c.icnn(), lifted, control), {}};
    case ModelKind::extended: {
      Var cbar = control_encode(tape, model.params, c.autoencoder(), control, lifted);
      return {icnn_forward(tape, model.params, "icnn", c.icnn(), lifted, cbar), cbar};
    }
  }
  throw UsageError("step_lifted: unknown model kind");
}

/// Head of the lifted state: the first obs_dim components.
template <class T>
Var head(Tape<T>& tape, const Model<T>& model, Var lifted) {
  return tape.slice_cols(lifted, 0, model.config.obs_dim);
}

/// Predicted observations next to the ground truth they are scored against.
struct RolloutResult {
  ModelKind kind = ModelKind::extended;
  Tensor<float> predicted;    // [H x D_obs]
  Tensor<float> truth;        // [H x D_obs], empty when unknown
  Tensor<float> controls;     // [H x D_ctrl]
  Tensor<float> transformed;  // [H x D_ctrl] encoded controls (Extended only)
};

/// Lifts each window once, then evolves purely in lifted space.
/// controls[b] is [H x D_ctrl]; control row t drives the step t -> t+1.
template <class T>
std::vector<RolloutResult> rollout_batch(Model<T>& model, const std::vector<HistoryWindow>& windows,
                                         const std::vector<Tensor<float>>& controls) {
  const auto& c = model.config;
  if (windows.empty()) return {};
  if (controls.size() != windows.size()) throw ConfigError("rollout: one control sequence per window");
  const std::size_t horizon = controls[0].rows();
  if (horizon < 1) throw ConfigError("rollout: horizon must be >= 1");
  for (const auto& seq : controls)
    if (seq.rows() != horizon || seq.cols() != c.control_dim)
      throw ConfigError("rollout: control sequence " + seq.dims_string() + " mismatch");
  const std::size_t batch = windows.size();

  std::vector<RolloutResult> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    out[b].kind = c.kind;
    out[b].predicted = Tensor<float>({horizon, c.obs_dim});
    out[b].controls = controls[b];
    if (c.kind == ModelKind::extended) out[b].transformed = Tensor<float>({horizon, c.control_dim});
  }

  Tensor<T> state;
  {
    Tape<T> tape;
    state = tape.value(lift(tape, model, tape.constant(lift_input(model, windows))));
  }
  for (std::size_t t = 0; t < horizon; ++t) {
    // fresh tape per step keeps memory flat for long horizons
    Tape<T> tape;
    Tensor<T> ct({batch, c.control_dim});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < c.control_dim; ++j) ct.at(b, j) = static_cast<T>(controls[b].at(t, j));
    StepOutput s = step_lifted(tape, model, tape.constant(std::move(state)), tape.constant(std::move(ct)));
    state = tape.value(s.next);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < c.obs_dim; ++j)
        out[b].predicted.at(t, j) =
            static_cast<float>(model.norm.inverse(j, static_cast<double>(state.at(b, j))));
      if (s.transformed)
        for (std::size_t j = 0; j < c.control_dim; ++j)
          out[b].transformed.at(t, j) = static_cast<float>(tape.value(*s.transformed).at(b, j));
    }
  }
  return out;
}

template <class T>
RolloutResult rollout(Model<T>& model, const HistoryWindow& window, const Tensor<float>& controls) {
  return rollout_batch(model, std::vector<HistoryWindow>{window}, std::vector<Tensor<float>>{controls})
      .front();
}

// ------------------------------------------------------------ json glue

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"obs_dim", c.obs_dim},
                     {"control_dim", c.control_dim},
                     {"history", c.history},
                     {"lifted_dim", c.lifted_dim},
                     {"lift_hidden", c.lift_hidden},
                     {"lift_layers", c.lift_layers},
                     {"icnn_hidden", c.icnn_hidden},
                     {"icnn_layers", c.icnn_layers},
                     {"ae_hidden", c.ae_hidden},
                     {"ae_layers_enc", c.ae_layers_enc},
                     {"ae_layers_dec", c.ae_layers_dec},
                     {"control_bound", c.control_bound},
                     {"linear_bias", c.linear_bias},
                     {"seed", c.seed}};
}

/// Partial update: only keys present in j are applied; unknown keys throw.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "kind") c.kind = parse_model_kind(v.get<std::string>());
      else if (k == "obs_dim") c.obs_dim = v.get<std::size_t>();
      else if (k == "control_dim") c.control_dim = v.get<std::size_t>();
      else if (k == "history") c.history = v.get<std::size_t>();
      else if (k == "lifted_dim") c.lifted_dim = v.get<std::size_t>();
      else if (k == "lift_hidden") c.lift_hidden = v.get<std::size_t>();
      else if (k == "lift_layers") c.lift_layers = v.get<std::size_t>();
      else if (k == "icnn_hidden") c.icnn_hidden = v.get<std::size_t>();
      else if (k == "icnn_layers") c.icnn_layers = v.get<std::size_t>();
      else if (k == "ae_hidden") c.ae_hidden = v.get<std::size_t>();
      else if (k == "ae_layers_enc") c.ae_layers_enc = v.get<std::size_t>();
      else if (k == "ae_layers_dec") c.ae_layers_dec = v.get<std::size_t>();
      else if (k == "control_bound") c.control_bound = v.get<double>();
      else if (k == "linear_bias") c.linear_bias = v.get<bool>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown model config key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config key '" + k + "': " + e.what());
    }
  }
}

inline nlohmann::json to_json(const Normalization& n) {
  return nlohmann::json{{"enabled", n.enabled}, {"mean", n.mean}, {"std", n.stddev}};
}

inline Normalization normalization_from_json(const nlohmann::json& j) {
  Normalization n;
  n.enabled = j.at("enabled").get<bool>();
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
  return n;
}

}  // namespace koop
