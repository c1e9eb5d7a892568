#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "koop/error.hpp"

namespace koop {

inline std::string format_dims(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor. Rank 1 tensors act as a single row when used as
/// a matrix; everything the networks touch is rank <= 2.
template <class T>
class Tensor {
 public:
  using value_type = T;
  /// Aligned storage: kernel results do not depend on heap placement.
  using Storage = std::vector<T, Eigen::aligned_allocator<T>>;
  using MatMap = Eigen::Map<RowMat<T>>;
  using ConstMatMap = Eigen::Map<const RowMat<T>>;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, T fill = T(0))
      : dims_(std::move(dims)), data_(count(dims_), fill) {
    check_dims();
  }

  Tensor(std::vector<std::size_t> dims, const std::vector<T>& data)
      : Tensor(std::move(dims), Storage(data.begin(), data.end())) {}

  Tensor(std::vector<std::size_t> dims, Storage data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != count(dims_))
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match dims " + dims_string());
  }

  /// Builds a [rows x cols] tensor from nested initializer lists.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ConfigError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension when viewed as a matrix (1 for rank-1 tensors).
  std::size_t rows() const { return dims_.size() >= 2 ? dims_[0] : 1; }
  std::size_t cols() const {
    if (dims_.empty()) return 0;
    return dims_.size() >= 2 ? data_.size() / dims_[0] : dims_[0];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  MatMap mat() {
    return MatMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  ConstMatMap mat() const {
    return ConstMatMap(data_.data(), static_cast<Eigen::Index>(rows()),
                       static_cast<Eigen::Index>(cols()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  template <class U>
  Tensor<U> cast() const {
    typename Tensor<U>::Storage out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  std::string dims_string() const { return format_dims(dims_); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& dims) {
    if (dims.empty()) return 0;
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
  }

  void check_dims() const {
    for (auto d : dims_)
      if (d == 0) throw ConfigError("tensor dims must be positive, got " + dims_string());
  }

  std::vector<std::size_t> dims_;
  Storage data_;
};

}  // namespace koop
