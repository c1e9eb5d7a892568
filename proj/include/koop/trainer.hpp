#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "koop/adam.hpp"
#include "koop/checkpoint.hpp"
#include "koop/dataset.hpp"
#include "koop/error.hpp"
#include "koop/model.hpp"
#include "koop/rng.hpp"
#include "koop/tape.hpp"

namespace koop {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t total_steps = 20000;
  std::size_t n_start = 10;
  std::size_t n_end = 25;
  double ramp_fraction = 0.5;
  double lambda_cyc = 1.0;
  double lambda_bound = 1.0;
  double control_bound = 1.0;
  double control_lo = -5.0;
  double control_hi = 5.0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Cosine decay of the learning rate down to lr * lr_final_scale (1 = constant).
  double lr_final_scale = 1.0;
  bool clip_grad = false;
  double clip_norm = 10.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 500;
  std::size_t val_windows = 512;
  /// Evals without a min_delta relative improvement before stopping; 0 disables.
  /// Only counted once the curriculum has reached n_end.
  std::size_t patience = 10;
  double min_delta = 0.01;
  /// Restore the parameters with the lowest val_rms seen after the ramp when training ends.
  bool keep_best = false;
  bool normalize = false;
  std::string loss_csv;
  std::string checkpoint_path;

  void validate() const {
    if (n_start < 1 || n_start > n_end) throw ConfigError("train: need 1 <= n_start <= n_end");
    if (lambda_cyc < 0 || lambda_bound < 0) throw ConfigError("train: loss weights must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(control_lo < control_hi)) throw ConfigError("train: control range is empty");
    if (!(control_bound > 0)) throw ConfigError("train: control_bound must be positive");
    if (ramp_fraction < 0 || ramp_fraction > 1) throw ConfigError("train: ramp_fraction in [0, 1]");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},   {"total_steps", c.total_steps},
                     {"n_start", c.n_start},         {"n_end", c.n_end},
                     {"ramp_fraction", c.ramp_fraction}, {"lambda_cyc", c.lambda_cyc},
                     {"lambda_bound", c.lambda_bound}, {"control_bound", c.control_bound},
                     {"control_lo", c.control_lo},   {"control_hi", c.control_hi},
                     {"lr", c.lr},                   {"beta1", c.beta1},
                     {"beta2", c.beta2},             {"eps", c.eps},
                     {"lr_final_scale", c.lr_final_scale}, {"clip_grad", c.clip_grad},
                     {"clip_norm", c.clip_norm},     {"seed", c.seed},
                     {"eval_every", c.eval_every},   {"val_windows", c.val_windows},
                     {"patience", c.patience},       {"min_delta", c.min_delta},
                     {"keep_best", c.keep_best},
                     {"normalize", c.normalize},     {"loss_csv", c.loss_csv},
                     {"checkpoint_path", c.checkpoint_path}};
}

/// Applies the keys present in j; unknown keys throw ConfigError.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  nlohmann::json known;
  to_json(known, c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (!known.contains(k)) throw ConfigError("unknown train config key '" + k + "'");
    const auto& v = it.value();
    try {
      if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "total_steps") c.total_steps = v.get<std::size_t>();
      else if (k == "n_start") c.n_start = v.get<std::size_t>();
      else if (k == "n_end") c.n_end = v.get<std::size_t>();
      else if (k == "ramp_fraction") c.ramp_fraction = v.get<double>();
      else if (k == "lambda_cyc") c.lambda_cyc = v.get<double>();
      else if (k == "lambda_bound") c.lambda_bound = v.get<double>();
      else if (k == "control_bound") c.control_bound = v.get<double>();
      else if (k == "control_lo") c.control_lo = v.get<double>();
      else if (k == "control_hi") c.control_hi = v.get<double>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "eps") c.eps = v.get<double>();
      else if (k == "lr_final_scale") c.lr_final_scale = v.get<double>();
      else if (k == "clip_grad") c.clip_grad = v.get<bool>();
      else if (k == "clip_norm") c.clip_norm = v.get<double>();
      else if (k == "keep_best") c.keep_best = v.get<bool>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "eval_every") c.eval_every = v.get<std::size_t>();
      else if (k == "val_windows") c.val_windows = v.get<std::size_t>();
      else if (k == "patience") c.patience = v.get<std::size_t>();
      else if (k == "min_delta") c.min_delta = v.get<double>();
      else if (k == "normalize") c.normalize = v.get<bool>();
      else if (k == "loss_csv") c.loss_csv = v.get<std::string>();
      else if (k == "checkpoint_path") c.checkpoint_path = v.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config key '" + k + "': " + e.what());
    }
  }
  c.validate();
}

/// Loss terms of one optimizer step, 64-bit.
struct LossReport {
  std::size_t step = 0;
  std::size_t n = 0;
  double dynamics = 0.0;
  double cyc = 0.0;
  double bound = 0.0;
  double total = 0.0;
  double val_rms = std::numeric_limits<double>::quiet_NaN();
};

/// Rollout length penalized at `step`: linear ramp from n_start to n_end
/// over the first ramp_fraction of training, rounded half-up.
inline std::size_t curriculum_n(std::size_t step, const TrainConfig& cfg) {
  const double ramp = cfg.ramp_fraction * static_cast<double>(cfg.total_steps);
  const double frac = ramp > 0 ? std::min(1.0, static_cast<double>(step) / ramp) : 1.0;
  const double n = static_cast<double>(cfg.n_start) +
                   static_cast<double>(cfg.n_end - cfg.n_start) * frac;
  return static_cast<std::size_t>(std::floor(n + 0.5));
}

/// A batch of training samples: lift inputs plus n future (control, target)
/// pairs per sample. controls[t] drives step t -> t+1, targets[t] is the
/// observation at t+1 (normalized like the lift input).
struct RolloutBatch {
  Tensor<float> lift_input;            // [B x lift_input_dim]
  std::vector<Tensor<float>> controls;  // n x [B x D_ctrl]
  std::vector<Tensor<float>> targets;   // n x [B x D_obs]

  std::size_t horizon() const { return controls.size(); }
};

/// Builds the batch for windows ending at each index in `starts`.
template <class T>
RolloutBatch make_batch(const Model<T>& model, const TrajectoryDataset& ds,
                        const std::vector<std::size_t>& starts, std::size_t n) {
  const auto& c = model.config;
  std::vector<HistoryWindow> windows;
  windows.reserve(starts.size());
  for (auto s : starts) {
    if (s + n >= ds.size()) throw ConfigError("batch: window at " + std::to_string(s) + " runs past the data");
    windows.push_back(ds.window(s, c.history));
  }
  RolloutBatch b;
  b.lift_input = lift_input(model, windows).template cast<float>();
  const std::size_t rows = starts.size();
  for (std::size_t t = 0; t < n; ++t) {
    Tensor<float> ct({rows, c.control_dim});
    Tensor<float> tt({rows, c.obs_dim});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c.control_dim; ++j) ct.at(r, j) = ds.controls.at(starts[r] + t, j);
      for (std::size_t j = 0; j < c.obs_dim; ++j)
        tt.at(r, j) = static_cast<float>(model.norm.forward(j, ds.obs.at(starts[r] + t + 1, j)));
    }
    b.controls.push_back(std::move(ct));
    b.targets.push_back(std::move(tt));
  }
  return b;
}

/// Result of the n-step dynamics objective on one tape.
struct DynamicsTerms {
  Var loss;                          // mean over batch and t of |head(x_t) - obs_t|^2
  double value = 0.0;                // same, accumulated in 64-bit
  std::vector<Tensor<float>> states;  // detached x_0 .. x_{n-1}, the states the dynamics saw
  std::vector<Var> transformed;      // encoded controls per step (Extended)
};

template <class T>
DynamicsTerms dynamics_loss(Tape<T>& tape, Model<T>& model, const RolloutBatch& batch) {
  const std::size_t n = batch.horizon();
  if (n == 0) throw ConfigError("dynamics_loss: batch has no future steps");
  DynamicsTerms out;
  Var x = lift(tape, model, tape.constant(batch.lift_input.template cast<T>()));
  Var acc{};
  for (std::size_t t = 0; t < n; ++t) {
    out.states.push_back(tape.value(x).template cast<float>());
    StepOutput s = step_lifted(tape, model, x, tape.constant(batch.controls[t].template cast<T>()));
    if (s.transformed) out.transformed.push_back(*s.transformed);
    x = s.next;
    Var err = tape.mean_sq_rows(tape.sub(head(tape, model, x), tape.constant(batch.targets[t].template cast<T>())));
    out.value += tape.scalar(err);
    acc = t == 0 ? err : tape.add(acc, err);
  }
  out.value /= static_cast<double>(n);
  out.loss = tape.scale(acc, 1.0 / static_cast<double>(n));
  return out;
}

/// Cyclic consistency in both directions on detached lifted states:
/// mean |c - dec(enc(c))|^2 + mean |cbar - enc(dec(cbar))|^2.
struct CyclicTerms {
  Var loss;
  double value = 0.0;
  Var encoded;  // enc(c, x) for the sampled controls
};

template <class T>
CyclicTerms cyclic_losses(Tape<T>& tape, Model<T>& model, const Tensor<T>& controls,
                          const Tensor<T>& transformed, const Tensor<T>& lifted_pool) {
  if (model.kind() != ModelKind::extended)
    throw UsageError("cyclic_losses: only Extended models have a control transform");
  const auto ae = model.config.autoencoder();
  Var x = tape.constant(lifted_pool);
  Var c = tape.constant(controls);
  Var cb = tape.constant(transformed);
  CyclicTerms out;
  out.encoded = control_encode(tape, model.params, ae, c, x);
  Var fwd = tape.mean_sq_rows(tape.sub(c, control_decode(tape, model.params, ae, out.encoded, x)));
  Var bwd = tape.mean_sq_rows(tape.sub(cb, control_encode(tape, model.params, ae,
                                                          control_decode(tape, model.params, ae, cb, x), x)));
  out.value = tape.scalar(fwd) + tape.scalar(bwd);
  out.loss = tape.add(fwd, bwd);
  return out;
}

/// mean over elements of max(0, |cbar| - bound)^2.
template <class T>
Var bound_penalty(Tape<T>& tape, Var transformed, double bound) {
  return tape.bound_sq(transformed, bound);
}

/// One-step RMS position error (channel 0, physical units) over the given
/// windows.
template <class T>
double one_step_rms(Model<T>& model, const TrajectoryDataset& ds, const std::vector<std::size_t>& starts) {
  if (starts.empty()) return std::numeric_limits<double>::quiet_NaN();
  RolloutBatch b = make_batch(model, ds, starts, 1);
  Tape<T> tape;
  Var x = lift(tape, model, tape.constant(b.lift_input.template cast<T>()));
  Var next = step_lifted(tape, model, x, tape.constant(b.controls[0].template cast<T>())).next;
  const auto& v = tape.value(next);
  double acc = 0.0;
  for (std::size_t r = 0; r < starts.size(); ++r) {
    const double pred = model.norm.inverse(0, static_cast<double>(v.at(r, 0)));
    const double truth = ds.obs.at(starts[r] + 1, 0);
    acc += (pred - truth) * (pred - truth);
  }
  return std::sqrt(acc / static_cast<double>(starts.size()));
}

/// Per-channel mean/std of the observations in [0, end).
inline Normalization fit_normalization(const TrajectoryDataset& ds, std::size_t end) {
  Normalization n;
  n.enabled = true;
  n.mean.assign(ds.obs_dim(), 0.0);
  n.stddev.assign(ds.obs_dim(), 0.0);
  for (std::size_t t = 0; t < end; ++t)
    for (std::size_t j = 0; j < ds.obs_dim(); ++j) n.mean[j] += ds.obs.at(t, j);
  for (auto& m : n.mean) m /= static_cast<double>(end);
  for (std::size_t t = 0; t < end; ++t)
    for (std::size_t j = 0; j < ds.obs_dim(); ++j) {
      const double d = ds.obs.at(t, j) - n.mean[j];
      n.stddev[j] += d * d;
    }
  for (auto& s : n.stddev) s = std::max(std::sqrt(s / static_cast<double>(end)), 1e-6);
  return n;
}

struct TrainResult {
  std::vector<LossReport> reports;
  std::size_t steps_run = 0;
  bool early_stopped = false;
  double seconds = 0.0;
  double final_val_rms = std::numeric_limits<double>::quiet_NaN();
};

/// Fixed validation windows: seeded sample of window ends inside the held-out
/// tail, each with room for `future` steps.
inline std::vector<std::size_t> validation_starts(const TrajectoryDataset& ds, std::size_t history,
                                                  std::size_t future, std::size_t count,
                                                  std::uint64_t seed) {
  const std::size_t lo = ds.validation_start() + history;
  if (ds.size() < future + 1 || lo + future >= ds.size()) return {};
  const std::size_t hi = ds.size() - 1 - future;  // inclusive
  Xoshiro256 rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(lo + rng.below(hi - lo + 1));
  return out;
}

inline void write_loss_csv_header(std::ostream& os) { os << "step,n,dynamics,cyc,bound,total,val_rms\n"; }

inline void write_loss_csv_row(std::ostream& os, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,", r.step, r.n, r.dynamics, r.cyc,
                r.bound, r.total);
  os << buf;
  if (!std::isnan(r.val_rms)) {
    std::snprintf(buf, sizeof buf, "%.9g", r.val_rms);
    os << buf;
  }
  os << '\n';
}

using TrainCallback = std::function<void(const LossReport&)>;

/// Full training loop: sample windows, n-step dynamics loss (+ cyclic and
/// bound terms for Extended), backward, Adam, nonnegativity projection.
inline TrainResult train(Model<float>& model, const TrajectoryDataset& ds, const TrainConfig& cfg,
                         const TrainCallback& on_eval = {}) {
  cfg.validate();
  const auto& mc = model.config;
  if (ds.obs_dim() != mc.obs_dim || ds.control_dim() != mc.control_dim)
    throw ConfigError("train: dataset dims (" + std::to_string(ds.obs_dim()) + ", " +
                      std::to_string(ds.control_dim()) + ") do not match model (" +
                      std::to_string(mc.obs_dim) + ", " + std::to_string(mc.control_dim) + ")");
  const std::size_t train_end = ds.validation_start();
  if (train_end < mc.history + cfg.n_end + 2)
    throw ConfigError("train: dataset too short for history " + std::to_string(mc.history) +
                      " plus " + std::to_string(cfg.n_end) + " future steps");

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.total_steps == 0) return result;

  if (cfg.normalize) model.norm = fit_normalization(ds, train_end);
  if (mc.kind == ModelKind::extended && std::abs(mc.control_bound - cfg.control_bound) > 0)
    model.config.control_bound = cfg.control_bound;

  AdamState<float> adam(model.params, AdamOptions{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
  Xoshiro256 rng(cfg.seed);
  const auto val = validation_starts(ds, mc.history, 1, cfg.val_windows, cfg.seed ^ 0x5eed5eedULL);

  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    csv.open(cfg.loss_csv, std::ios::trunc);
    if (!csv) throw FormatError("cannot open loss CSV '" + cfg.loss_csv + "'");
    write_loss_csv_header(csv);
  }

  ParamStore<float> last_good = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  double best_post_ramp = std::numeric_limits<double>::infinity();
  std::optional<ParamStore<float>> best_params;
  nlohmann::json best_training;
  std::size_t stale = 0;
  const auto ramp_done = static_cast<std::size_t>(std::ceil(cfg.ramp_fraction * static_cast<double>(cfg.total_steps)));

  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const std::size_t n = curriculum_n(step, cfg);
    std::vector<std::size_t> starts(cfg.batch_size);
    const std::size_t lo = mc.history, hi = train_end - 1 - n;  // inclusive
    for (auto& s : starts) s = lo + rng.below(hi - lo + 1);
    RolloutBatch batch = make_batch(model, ds, starts, n);

    Tape<float> tape;
    model.params.zero_grad();
    DynamicsTerms dyn = dynamics_loss(tape, model, batch);
    LossReport rep;
    rep.step = step;
    rep.n = n;
    rep.dynamics = dyn.value;
    Var total = dyn.loss;
    if (mc.kind == ModelKind::extended) {
      const std::size_t pool_rows = dyn.states.size() * cfg.batch_size;
      Tensor<float> pool({cfg.batch_size, mc.lifted_dim});
      Tensor<float> cs({cfg.batch_size, mc.control_dim});
      Tensor<float> cbs({cfg.batch_size, mc.control_dim});
      for (std::size_t r = 0; r < cfg.batch_size; ++r) {
        const std::size_t k = rng.below(pool_rows);
        const auto& src = dyn.states[k / cfg.batch_size];
        std::copy_n(src.data() + (k % cfg.batch_size) * mc.lifted_dim, mc.lifted_dim, pool.data() + r * mc.lifted_dim);
        for (std::size_t j = 0; j < mc.control_dim; ++j) {
          cs.at(r, j) = static_cast<float>(rng.uniform(cfg.control_lo, cfg.control_hi));
          cbs.at(r, j) = static_cast<float>(rng.uniform(-cfg.control_bound, cfg.control_bound));
        }
      }
      CyclicTerms cyc = cyclic_losses(tape, model, cs, cbs, pool);
      Var bound = bound_penalty(tape, cyc.encoded, cfg.control_bound);
      rep.cyc = cyc.value;
      rep.bound = tape.scalar(bound);
      total = tape.add(total, tape.add(tape.scale(cyc.loss, cfg.lambda_cyc), tape.scale(bound, cfg.lambda_bound)));
    }
    rep.total = rep.dynamics + cfg.lambda_cyc * rep.cyc + cfg.lambda_bound * rep.bound;
    if (!std::isfinite(rep.total)) {
      model.params = last_good;
      throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (n=" +
                         std::to_string(n) + ", dynamics=" + std::to_string(rep.dynamics) + ")");
    }
    tape.backward(total);
    if (cfg.clip_grad) clip_grad_norm(model.params, cfg.clip_norm);
    const double progress = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
    const double lr_scale = cfg.lr_final_scale + (1.0 - cfg.lr_final_scale) * 0.5 * (1.0 + std::cos(M_PI * progress));
    try {
      adam_step(model.params, adam, lr_scale);
    } catch (const NumericError&) {
      model.params = last_good;
      throw;
    }
    project_constrained(model.params);

    const bool eval_now = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps;
    if (eval_now) {
      rep.val_rms = one_step_rms(model, ds, val);
      last_good = model.params;
      result.final_val_rms = rep.val_rms;
      model.training = nlohmann::json{{"steps", step + 1},
                                      {"seed", cfg.seed},
                                      {"final_dynamics", rep.dynamics},
                                      {"final_cyc", rep.cyc},
                                      {"final_bound", rep.bound},
                                      {"final_total", rep.total},
                                      {"final_val_rms", rep.val_rms}};
      if (!cfg.checkpoint_path.empty()) save_checkpoint(model, cfg.checkpoint_path);
      if (on_eval) on_eval(rep);
      if (cfg.keep_best && step + 1 >= ramp_done && rep.val_rms < best_post_ramp) {
        best_post_ramp = rep.val_rms;
        best_params = model.params;
        best_training = model.training;
      }
      if (step + 1 >= ramp_done && cfg.patience > 0) {
        if (rep.val_rms < best_val * (1.0 - cfg.min_delta)) {
          best_val = rep.val_rms;
          stale = 0;
        } else if (++stale >= cfg.patience) {
          result.early_stopped = true;
        }
      } else {
        best_val = std::min(best_val, rep.val_rms);
      }
    }
    if (csv) write_loss_csv_row(csv, rep);
    result.reports.push_back(rep);
    result.steps_run = step + 1;
    if (result.early_stopped) break;
  }
  if (best_params) {
    model.params = std::move(*best_params);
    model.training = best_training;
    model.training["best_of_steps"] = result.steps_run;
    result.final_val_rms = best_post_ramp;
    if (!cfg.checkpoint_path.empty()) save_checkpoint(model, cfg.checkpoint_path);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace koop
