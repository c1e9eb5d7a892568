#pragma once

#include <cstddef>
#include <string>

#include "koop/error.hpp"
#include "koop/params.hpp"
#include "koop/rng.hpp"
#include "koop/tape.hpp"

namespace koop {

/// Densely connected residual MLP. Layer l computes relu(affine(h)) and adds
/// h back whenever input and output widths agree; the last layer is affine
/// (plus the skip when widths agree).
struct ResNetConfig {
  std::size_t in_dim = 1;
  std::size_t hidden_width = 1;
  std::size_t out_dim = 1;
  std::size_t n_layers = 1;
  Activation activation = Activation::relu;

  std::size_t layer_in(std::size_t l) const { return l == 0 ? in_dim : hidden_width; }
  std::size_t layer_out(std::size_t l) const { return l + 1 == n_layers ? out_dim : hidden_width; }

  void validate(const std::string& what) const {
    if (in_dim == 0 || hidden_width == 0 || out_dim == 0 || n_layers == 0)
      throw ConfigError(what + ": resnet dims and depth must be positive");
  }
};

/// Input-convex network over u = [state, control]. Hidden-to-hidden weights
/// (z*) are nonnegative; u feeds every layer through unconstrained weights.
struct IcnnConfig {
  std::size_t state_dim = 1;
  std::size_t control_dim = 1;
  std::size_t hidden_dim = 1;
  std::size_t n_layers = 2;

  std::size_t input_dim() const { return state_dim + control_dim; }

  void validate() const {
    if (state_dim == 0 || control_dim == 0 || hidden_dim == 0 || n_layers == 0)
      throw ConfigError("icnn: dims and depth must be positive");
  }
};

/// State-conditioned control transform h (encoder) and its approximate
/// inverse (decoder). The latent has the control's width.
struct AutoencoderConfig {
  std::size_t control_dim = 1;
  std::size_t lifted_dim = 1;
  std::size_t hidden_width = 1;
  std::size_t n_layers_enc = 2;
  std::size_t n_layers_dec = 2;
  double bound = 1.0;

  ResNetConfig encoder() const {
    return {control_dim + lifted_dim, hidden_width, control_dim, n_layers_enc, Activation::relu};
  }
  ResNetConfig decoder() const {
    return {control_dim + lifted_dim, hidden_width, control_dim, n_layers_dec, Activation::relu};
  }
};

/// Linear lifted dynamics in row form: next = state * A + control * B (+ bias).
struct LinearDynConfig {
  std::size_t lifted_dim = 1;
  std::size_t control_dim = 1;
  bool bias = false;
};

// ---------------------------------------------------------------- params

template <class T>
void add_resnet_params(ParamStore<T>& store, const std::string& prefix, const ResNetConfig& cfg,
                       Xoshiro256& rng) {
  cfg.validate(prefix);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto fi = cfg.layer_in(l), fo = cfg.layer_out(l);
    const std::string base = prefix + ".l" + std::to_string(l);
    store.add(base + ".w", init_weight<T>(fi, fo, rng));
    store.add(base + ".b", init_bias<T>(fi, fo, rng));
  }
}

template <class T>
void add_icnn_params(ParamStore<T>& store, const std::string& prefix, const IcnnConfig& cfg,
                     Xoshiro256& rng) {
  cfg.validate();
  const auto ud = cfg.input_dim(), hd = cfg.hidden_dim, sd = cfg.state_dim;
  store.add(prefix + ".u0.w", init_weight<T>(ud, hd, rng));
  store.add(prefix + ".u0.b", init_bias<T>(ud, hd, rng));
  for (std::size_t k = 1; k < cfg.n_layers; ++k) {
    const std::string s = std::to_string(k);
    store.add(prefix + ".z" + s + ".w", init_weight<T>(hd, hd, rng, true), true);
    store.add(prefix + ".u" + s + ".w", init_weight<T>(ud, hd, rng));
    store.add(prefix + ".u" + s + ".b", init_bias<T>(ud, hd, rng));
  }
  store.add(prefix + ".zout.w", init_weight<T>(hd, sd, rng, true), true);
  store.add(prefix + ".uout.w", init_weight<T>(ud, sd, rng));
  store.add(prefix + ".uout.b", init_bias<T>(ud, sd, rng));
}

template <class T>
void add_linear_dyn_params(ParamStore<T>& store, const std::string& prefix,
                           const LinearDynConfig& cfg, Xoshiro256& rng) {
  const auto fan_in = cfg.lifted_dim + cfg.control_dim;
  Tensor<T> a({cfg.lifted_dim, cfg.lifted_dim});
  Tensor<T> b({cfg.control_dim, cfg.lifted_dim});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : a.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& v : b.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  store.add(prefix + ".A", std::move(a));
  store.add(prefix + ".B", std::move(b));
  if (cfg.bias) store.add(prefix + ".bias", init_bias<T>(fan_in, cfg.lifted_dim, rng));
}

// --------------------------------------------------------------- forward

template <class T>
Var resnet_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                   const ResNetConfig& cfg, Var input) {
  if (tape.value(input).cols() != cfg.in_dim)
    throw ConfigError(prefix + ": input width " + std::to_string(tape.value(input).cols()) +
                      " != configured " + std::to_string(cfg.in_dim));
  Var h = input;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    Var y = tape.affine(h, tape.param(store.at(base + ".w")), tape.param(store.at(base + ".b")));
    if (l + 1 < cfg.n_layers) y = tape.activate(y, cfg.activation);
    if (cfg.layer_in(l) == cfg.layer_out(l)) y = tape.add(y, h);
    h = y;
  }
  return h;
}

template <class T>
void check_icnn_constraints(const ParamStore<T>& store, const std::string& prefix) {
  for (const auto& p : store.all()) {
    if (!p.nonnegative || p.name.rfind(prefix + ".", 0) != 0) continue;
    for (T v : p.value.values())
      if (v < T(0))
        throw InvariantError("icnn: constrained weight '" + p.name + "' has a negative entry");
  }
}

/// z1 = softplus(affine(u)); z_k = softplus(z_{k-1} Wz+ + affine(u));
/// out = z_L Wz+ + affine(u).
template <class T>
Var icnn_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                 const IcnnConfig& cfg, Var state, Var control) {
  if (tape.value(state).cols() != cfg.state_dim || tape.value(control).cols() != cfg.control_dim)
    throw ConfigError(prefix + ": input widths " + tape.value(state).dims_string() + " / " +
                      tape.value(control).dims_string() + " do not match config");
  check_icnn_constraints(store, prefix);
  auto p = [&](const std::string& n) { return tape.param(store.at(prefix + "." + n)); };
  Var u = tape.concat_cols(state, control);
  Var z = tape.softplus(tape.affine(u, p("u0.w"), p("u0.b")));
  for (std::size_t k = 1; k < cfg.n_layers; ++k) {
    const std::string s = std::to_string(k);
    Var pre = tape.add(tape.matmul(z, p("z" + s + ".w")), tape.affine(u, p("u" + s + ".w"), p("u" + s + ".b")));
    z = tape.softplus(pre);
  }
  return tape.add(tape.matmul(z, p("zout.w")), tape.affine(u, p("uout.w"), p("uout.b")));
}

template <class T>
Var control_encode(Tape<T>& tape, ParamStore<T>& store, const AutoencoderConfig& cfg, Var control,
                   Var lifted) {
  if (tape.value(control).cols() != cfg.control_dim || tape.value(lifted).cols() != cfg.lifted_dim)
    throw ConfigError("encoder: input widths do not match config");
  return resnet_forward(tape, store, "enc", cfg.encoder(), tape.concat_cols(control, lifted));
}

template <class T>
Var control_decode(Tape<T>& tape, ParamStore<T>& store, const AutoencoderConfig& cfg,
                   Var transformed, Var lifted) {
  if (tape.value(transformed).cols() != cfg.control_dim ||
      tape.value(lifted).cols() != cfg.lifted_dim)
    throw ConfigError("decoder: input widths do not match config");
  return resnet_forward(tape, store, "dec", cfg.decoder(), tape.concat_cols(transformed, lifted));
}

template <class T>
Var linear_dyn_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                       const LinearDynConfig& cfg, Var state, Var control) {
  if (tape.value(state).cols() != cfg.lifted_dim || tape.value(control).cols() != cfg.control_dim)
    throw ConfigError(prefix + ": input widths do not match config");
  Var out = tape.add(tape.matmul(state, tape.param(store.at(prefix + ".A"))),
                     tape.matmul(control, tape.param(store.at(prefix + ".B"))));
  if (cfg.bias) out = tape.add_row(out, tape.param(store.at(prefix + ".bias")));
  return out;
}

}  // namespace koop
