#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"
#include "koop/binio.hpp"
#include "koop/error.hpp"
#include "koop/model.hpp"

namespace koop {

/// Checkpoint layout (little-endian):
///   "KOOPCK1\0" | u32 json_len | json | u32 n_tensors |
///   n_tensors x { u16 name_len | name | u32 rank | u32 dims[rank] | f32 data }
inline constexpr std::string_view kCheckpointMagic{"KOOPCK1\0", 8};

inline nlohmann::json checkpoint_header(const Model<float>& m) {
  nlohmann::json j;
  j["format"] = "KOOPCK1";
  j["kind"] = to_string(m.config.kind);
  j["config"] = m.config;
  j["normalization"] = to_json(m.norm);
  j["seed"] = m.config.seed;
  j["training"] = m.training;
  return j;
}

inline std::string checkpoint_bytes(const Model<float>& m) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  const std::string header = checkpoint_header(m).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(m.params.size()));
  for (const auto& p : m.params.all()) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value.values()) w.f32(v);
  }
  return w.take();
}

/// Parses a checkpoint and validates every tensor against the shapes its
/// config implies. Errors name the offending tensor.
inline Model<float> checkpoint_from_bytes(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic)
    throw FormatError("not a checkpoint: bad magic (expected KOOPCK1)");
  const auto json_len = r.u32("header length");
  const auto header_text = r.bytes(json_len, "JSON header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ModelConfig cfg;
  try {
    from_json(header.at("config"), cfg);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  Model<float> m = make_model<float>(cfg);
  try {
    m.norm = normalization_from_json(header.at("normalization"));
    m.training = header.value("training", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (m.norm.enabled && (m.norm.mean.size() != cfg.obs_dim || m.norm.stddev.size() != cfg.obs_dim))
    throw FormatError("checkpoint normalization does not match obs_dim");

  const auto count = r.u32("tensor count");
  if (count != m.params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(m.params.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u16("tensor name length");
    const std::string name(r.bytes(name_len, "tensor name"));
    if (!m.params.contains(name))
      throw FormatError("checkpoint tensor '" + name + "' is not part of a " + to_string(cfg.kind) +
                        " model");
    auto& p = m.params.at(name);
    if (&p != &m.params.all()[i])
      throw FormatError("checkpoint tensor '" + name + "' is out of order");
    const auto rank = r.u32("rank of '" + name + "'");
    std::vector<std::size_t> dims;
    for (std::uint32_t k = 0; k < rank; ++k) dims.push_back(r.u32("dims of '" + name + "'"));
    if (dims != p.value.dims())
      throw FormatError("checkpoint tensor '" + name + "' has dims " +
                        format_dims(dims) + ", config implies " +
                        p.value.dims_string());
    r.need(p.value.size() * 4, "data of '" + name + "'");
    for (auto& v : p.value.values()) v = r.f32("data of '" + name + "'");
  }
  if (r.remaining() != 0)
    throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  return m;
}

inline void save_checkpoint(const Model<float>& m, const std::string& path) {
  write_file(path, checkpoint_bytes(m));
}

inline Model<float> load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(read_file(path));
}

}  // namespace koop
