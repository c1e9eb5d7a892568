#pragma once

// Gradient-fidelity harness shared by the unit and acceptance suites: the
// engine's analytic gradients (double tape) against central differences of
// the oracle forwards, with inputs treated as parameters too.

#include <string>
#include <vector>

#include "oracle.hpp"

namespace gradcheck {

inline constexpr std::size_t kLift = 4;
inline constexpr std::size_t kHidden = 8;
inline constexpr std::size_t kCtrl = 1;
inline constexpr std::size_t kBatch = 3;

struct Result {
  std::string block;
  oracle::ProbeStats stats;
};

using Forward = std::function<koop::Var(koop::Tape<double>&, koop::ParamStore<double>&)>;
using Reference = std::function<oracle::Mat(const koop::ParamStore<double>&, oracle::Signs*)>;

inline Result run(const std::string& name, koop::ParamStore<double> params, std::size_t out_cols,
                  const Forward& fwd, const Reference& ref, int probes, std::uint64_t seed) {
  koop::Xoshiro256 rng(seed * 7919 + 17);
  const koop::Tensor<double> w = oracle::random_tensor({kBatch, out_cols}, rng);
  const oracle::Mat wm = oracle::from_tensor(w);

  params.zero_grad();
  koop::Tape<double> tape;
  koop::Var y = fwd(tape, params);
  tape.backward(oracle::tape_weighted_sum(tape, y, w));
  std::vector<koop::Tensor<double>> grads;
  for (const auto& p : params.all()) grads.push_back(p.grad);

  auto loss = [&](const koop::ParamStore<double>& s, oracle::Signs* signs) {
    return oracle::weighted_sum(ref(s, signs), wm);
  };
  return {name, oracle::directional_probes(params, grads, loss, probes, 1e-3, seed)};
}

inline void add_inputs(koop::ParamStore<double>& s, std::size_t x_cols, std::size_t c_cols, koop::Xoshiro256& rng) {
  s.add("in.x", oracle::random_tensor({kBatch, x_cols}, rng, -2.0, 2.0));
  if (c_cols) s.add("in.c", oracle::random_tensor({kBatch, c_cols}, rng, -2.0, 2.0));
}

inline oracle::Mat input(const koop::ParamStore<double>& s, const std::string& n) {
  return oracle::from_tensor(s.at(n).value);
}

inline Result resnet(int probes, std::uint64_t seed) {
  koop::Xoshiro256 rng(seed);
  const koop::ResNetConfig cfg{9, kHidden, kLift, 10, koop::Activation::relu};
  koop::ParamStore<double> s;
  koop::add_resnet_params(s, "net", cfg, rng);
  add_inputs(s, cfg.in_dim, 0, rng);
  return run(
      "resnet", s, kLift,
      [&](koop::Tape<double>& t, koop::ParamStore<double>& p) {
        return koop::resnet_forward(t, p, "net", cfg, t.param(p.at("in.x")));
      },
      [&](const koop::ParamStore<double>& p, oracle::Signs* sg) {
        return oracle::resnet(p, "net", cfg, input(p, "in.x"), sg);
      },
      probes, seed);
}

inline Result icnn(int probes, std::uint64_t seed) {
  koop::Xoshiro256 rng(seed);
  const koop::IcnnConfig cfg{kLift, kCtrl, kHidden, 2};
  koop::ParamStore<double> s;
  koop::add_icnn_params(s, "icnn", cfg, rng);
  add_inputs(s, kLift, kCtrl, rng);
  return run(
      "icnn", s, kLift,
      [&](koop::Tape<double>& t, koop::ParamStore<double>& p) {
        return koop::icnn_forward(t, p, "icnn", cfg, t.param(p.at("in.x")), t.param(p.at("in.c")));
      },
      [&](const koop::ParamStore<double>& p, oracle::Signs*) {
        return oracle::icnn(p, "icnn", cfg, input(p, "in.x"), input(p, "in.c"));
      },
      probes, seed);
}

inline Result encoder(int probes, std::uint64_t seed) {
  koop::Xoshiro256 rng(seed);
  const koop::AutoencoderConfig cfg{kCtrl, kLift, kHidden, 2, 2, 1.0};
  koop::ParamStore<double> s;
  koop::add_resnet_params(s, "enc", cfg.encoder(), rng);
  add_inputs(s, kLift, kCtrl, rng);
  return run(
      "encoder", s, kCtrl,
      [&](koop::Tape<double>& t, koop::ParamStore<double>& p) {
        return koop::control_encode(t, p, cfg, t.param(p.at("in.c")), t.param(p.at("in.x")));
      },
      [&](const koop::ParamStore<double>& p, oracle::Signs* sg) {
        return oracle::resnet(p, "enc", cfg.encoder(), oracle::concat(input(p, "in.c"), input(p, "in.x")), sg);
      },
      probes, seed);
}

inline Result decoder(int probes, std::uint64_t seed) {
  koop::Xoshiro256 rng(seed);
  const koop::AutoencoderConfig cfg{kCtrl, kLift, kHidden, 2, 2, 1.0};
  koop::ParamStore<double> s;
  koop::add_resnet_params(s, "dec", cfg.decoder(), rng);
  add_inputs(s, kLift, kCtrl, rng);
  return run(
      "decoder", s, kCtrl,
      [&](koop::Tape<double>& t, koop::ParamStore<double>& p) {
        return koop::control_decode(t, p, cfg, t.param(p.at("in.c")), t.param(p.at("in.x")));
      },
      [&](const koop::ParamStore<double>& p, oracle::Signs* sg) {
        return oracle::resnet(p, "dec", cfg.decoder(), oracle::concat(input(p, "in.c"), input(p, "in.x")), sg);
      },
      probes, seed);
}

inline Result linear(int probes, std::uint64_t seed, bool bias = false) {
  koop::Xoshiro256 rng(seed);
  const koop::LinearDynConfig cfg{kLift, kCtrl, bias};
  koop::ParamStore<double> s;
  koop::add_linear_dyn_params(s, "lin", cfg, rng);
  add_inputs(s, kLift, kCtrl, rng);
  return run(
      bias ? "linear+bias" : "linear", s, kLift,
      [&](koop::Tape<double>& t, koop::ParamStore<double>& p) {
        return koop::linear_dyn_forward(t, p, "lin", cfg, t.param(p.at("in.x")), t.param(p.at("in.c")));
      },
      [&](const koop::ParamStore<double>& p, oracle::Signs*) {
        return oracle::linear(p, "lin", cfg, input(p, "in.x"), input(p, "in.c"));
      },
      probes, seed);
}

/// Tiny model config used for whole-model checks.
inline koop::ModelConfig tiny_model(koop::ModelKind kind, std::uint64_t seed = 3) {
  koop::ModelConfig c;
  c.kind = kind;
  c.obs_dim = 2;
  c.control_dim = kCtrl;
  c.history = 2;
  c.lifted_dim = kLift;
  c.lift_hidden = kHidden;
  c.lift_layers = 3;
  c.icnn_hidden = kHidden;
  c.ae_hidden = kHidden;
  c.seed = seed;
  return c;
}

/// Reference n-step dynamics loss for a model in double precision.
inline double reference_dynamics_loss(const koop::Model<double>& m, const koop::RolloutBatch& b,
                                      oracle::Signs* signs) {
  const auto& c = m.config;
  oracle::Mat x = oracle::resnet(m.params, "lift", c.lift(), oracle::from_tensor(b.lift_input.cast<double>()), signs);
  double total = 0.0;
  for (std::size_t t = 0; t < b.horizon(); ++t) {
    const oracle::Mat u = oracle::from_tensor(b.controls[t].cast<double>());
    switch (c.kind) {
      case koop::ModelKind::traditional: x = oracle::linear(m.params, "lin", c.linear(), x, u); break;
      case koop::ModelKind::convex: x = oracle::icnn(m.params, "icnn", c.icnn(), x, u); break;
      case koop::ModelKind::extended: {
        const oracle::Mat cb =
            oracle::resnet(m.params, "enc", c.autoencoder().encoder(), oracle::concat(u, x), signs);
        x = oracle::icnn(m.params, "icnn", c.icnn(), x, cb);
        break;
      }
    }
    double err = 0.0;
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t j = 0; j < c.obs_dim; ++j) {
        const double d = x[r][j] - b.targets[t].at(r, j);
        err += d * d;
      }
    total += err / static_cast<double>(x.size());
  }
  return total / static_cast<double>(b.horizon());
}

}  // namespace gradcheck
