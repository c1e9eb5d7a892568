#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "koop/error.hpp"
#include "koop/rng.hpp"
#include "koop/tensor.hpp"

namespace koop {

/// A trainable tensor with its accumulated gradient. `nonnegative` marks
/// weights that must stay >= 0 (ICNN hidden-to-hidden paths).
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool nonnegative = false;

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Tensor<T>(value.dims());
    else grad.fill(T(0));
  }
};

/// Ordered collection of named parameters. Insertion order is the
/// serialization order, so checkpoints are stable.
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool nonnegative = false) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    Parameter<T> p;
    p.name = std::move(name);
    p.grad = Tensor<T>(value.dims());
    p.value = std::move(value);
    p.nonnegative = nonnegative;
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
    return params_[it->second];
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.nonnegative);
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Dense weight [fan_in x fan_out] ~ Uniform(+-1/sqrt(fan_in)). Constrained
/// weights are |sample| * 0.1 so they start feasible.
template <class T>
Tensor<T> init_weight(std::size_t fan_in, std::size_t fan_out, Xoshiro256& rng,
                      bool nonnegative = false) {
  Tensor<T> w({fan_in, fan_out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.values()) {
    const double s = rng.uniform(-bound, bound);
    v = static_cast<T>(nonnegative ? std::abs(s) * 0.1 : s);
  }
  return w;
}

template <class T>
Tensor<T> init_bias(std::size_t fan_in, std::size_t fan_out, Xoshiro256& rng) {
  Tensor<T> b({fan_out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : b.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return b;
}

}  // namespace koop
