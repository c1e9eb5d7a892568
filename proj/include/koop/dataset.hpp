#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "koop/binio.hpp"
#include "koop/error.hpp"
#include "koop/model.hpp"
#include "koop/tensor.hpp"

namespace koop {

/// Time series of (observation, control) records. controls row t is the
/// input applied over [t, t+1), so obs row t+1 is its consequence.
struct TrajectoryDataset {
  Tensor<float> obs;       // [N x D_obs]
  Tensor<float> controls;  // [N x D_ctrl]
  double dt = 0.1;

  std::size_t size() const { return obs.rows(); }
  std::size_t obs_dim() const { return obs.cols(); }
  std::size_t control_dim() const { return controls.cols(); }

  /// First index of the held-out tail (final 5%).
  std::size_t validation_start() const { return size() - size() / 20; }

  /// History window ending at index `now` (needs now >= history).
  HistoryWindow window(std::size_t now, std::size_t history) const {
    if (now < history || now >= size())
      throw ConfigError("window ending at " + std::to_string(now) + " with history " +
                        std::to_string(history) + " is outside the dataset");
    HistoryWindow w{Tensor<float>({history + 1, obs_dim()}), Tensor<float>({history + 1, control_dim()})};
    for (std::size_t t = 0; t <= history; ++t) {
      for (std::size_t j = 0; j < obs_dim(); ++j) w.observations.at(t, j) = obs.at(now - history + t, j);
      for (std::size_t j = 0; j < control_dim(); ++j) w.controls.at(t, j) = controls.at(now - history + t, j);
    }
    return w;
  }

  /// Rows [begin, begin + count) of the observations.
  Tensor<float> obs_slice(std::size_t begin, std::size_t count) const { return rows_of(obs, begin, count); }
  Tensor<float> control_slice(std::size_t begin, std::size_t count) const {
    return rows_of(controls, begin, count);
  }

 private:
  static Tensor<float> rows_of(const Tensor<float>& src, std::size_t begin, std::size_t count) {
    if (begin + count > src.rows()) throw ConfigError("dataset slice out of range");
    Tensor<float> out({count, src.cols()});
    std::copy(src.data() + begin * src.cols(), src.data() + (begin + count) * src.cols(), out.data());
    return out;
  }
};

/// Dataset layout (little-endian): "KOOPDS1\0" | u32 D_obs | u32 D_ctrl |
/// u64 N | f64 dt | N x { f32 obs[D_obs] | f32 ctrl[D_ctrl] }
inline constexpr std::string_view kDatasetMagic{"KOOPDS1\0", 8};
inline constexpr std::size_t kDatasetHeaderBytes = 8 + 4 + 4 + 8 + 8;

inline std::string dataset_bytes(const TrajectoryDataset& ds) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(ds.obs_dim()));
  w.u32(static_cast<std::uint32_t>(ds.control_dim()));
  w.u64(ds.size());
  w.f64(ds.dt);
  for (std::size_t t = 0; t < ds.size(); ++t) {
    for (std::size_t j = 0; j < ds.obs_dim(); ++j) w.f32(ds.obs.at(t, j));
    for (std::size_t j = 0; j < ds.control_dim(); ++j) w.f32(ds.controls.at(t, j));
  }
  return w.take();
}

inline TrajectoryDataset dataset_from_bytes(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kDatasetMagic.size() || r.bytes(kDatasetMagic.size(), "magic") != kDatasetMagic)
    throw FormatError("not a dataset: bad magic (expected KOOPDS1)");
  const std::size_t d_obs = r.u32("D_obs");
  const std::size_t d_ctrl = r.u32("D_ctrl");
  const std::uint64_t n = r.u64("record count");
  const double dt = r.f64("dt");
  if (d_obs == 0 || d_ctrl == 0 || n == 0) throw FormatError("dataset header has a zero dimension");
  const std::uint64_t expected = kDatasetHeaderBytes + n * (d_obs + d_ctrl) * 4;
  if (bytes.size() != expected)
    throw FormatError("dataset length mismatch: header implies " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(bytes.size()));
  TrajectoryDataset ds;
  ds.dt = dt;
  ds.obs = Tensor<float>({n, d_obs});
  ds.controls = Tensor<float>({n, d_ctrl});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d_obs; ++j) ds.obs.at(t, j) = r.f32("observation");
    for (std::size_t j = 0; j < d_ctrl; ++j) ds.controls.at(t, j) = r.f32("control");
  }
  return ds;
}

inline void write_dataset(const std::string& path, const TrajectoryDataset& ds) {
  write_file(path, dataset_bytes(ds));
}

inline TrajectoryDataset read_dataset(const std::string& path) {
  return dataset_from_bytes(read_file(path));
}

}  // namespace koop
