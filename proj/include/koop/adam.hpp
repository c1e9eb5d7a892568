#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "koop/error.hpp"
#include "koop/params.hpp"
#include "koop/tensor.hpp"

namespace koop {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for every parameter of one ParamStore, in store order.
template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  AdamOptions opt;

  AdamState() = default;
  AdamState(const ParamStore<T>& params, AdamOptions options) : opt(options) {
    for (const auto& p : params.all()) {
      m.emplace_back(p.value.dims());
      v.emplace_back(p.value.dims());
    }
  }
};

/// max(0, w) elementwise.
template <class T>
Tensor<T> project_nonnegative(Tensor<T> w) {
  for (auto& x : w.values()) x = x > T(0) ? x : T(0);
  return w;
}

/// Clamp every parameter flagged `nonnegative` back onto the feasible set.
template <class T>
void project_constrained(ParamStore<T>& params) {
  for (auto& p : params.all())
    if (p.nonnegative) p.value = project_nonnegative(std::move(p.value));
}

template <class T>
double grad_norm(const ParamStore<T>& params) {
  double acc = 0.0;
  for (const auto& p : params.all())
    for (T g : p.grad.values()) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
template <class T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params.all()) p.grad.mat() *= s;
  }
  return norm;
}

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Throws NumericError (parameters untouched) if any gradient is non-finite.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr_scale = 1.0) {
  auto& ps = params.all();
  if (state.m.size() != ps.size()) throw ConfigError("adam: state does not match parameter set");
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (!ps[k].grad.same_shape(ps[k].value) || !state.m[k].same_shape(ps[k].value))
      throw ConfigError("adam: shape mismatch for parameter '" + ps[k].name + "'");
    if (!ps[k].grad.all_finite())
      throw NumericError("adam: non-finite gradient in parameter '" + ps[k].name +
                         "' at optimizer step " + std::to_string(state.step + 1));
  }
  state.step += 1;
  const auto& o = state.opt;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double lr = o.lr * lr_scale;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    T* w = ps[k].value.data();
    const T* g = ps[k].grad.data();
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    for (std::size_t i = 0; i < ps[k].value.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
}

}  // namespace koop
