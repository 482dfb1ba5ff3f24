#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "t4t/array_io.hpp"
#include "t4t/model.hpp"

// Checkpoint layout (little-endian):
//   "T4TCKPT1"                       8 bytes
//   config_len u32, config JSON      compact, keys sorted
//   param_count u32
//   per parameter: name_len u32, name, rank u32, extents u64 x rank,
//                  offset u64 (in floats, into the data block)
//   data_count u64, then data_count float32 values

namespace t4t {

inline constexpr char kCheckpointMagic[8] = {'T', '4', 'T', 'C', 'K', 'P', 'T', '1'};

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

template <Scalar T>
void write_checkpoint(std::ostream& os, const Trans4Trans<T>& model) {
  os.write(kCheckpointMagic, 8);
  const std::string cfg = to_json(model.config()).dump();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.params().size()));
  std::uint64_t offset = 0;
  for (const auto& e : model.params()) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) detail::put<std::uint64_t>(os, d);
    detail::put<std::uint64_t>(os, offset);
    offset += e.value.size();
  }
  detail::put<std::uint64_t>(os, offset);
  for (const auto& e : model.params()) {
    std::vector<float> buf(e.value.data().begin(), e.value.data().end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
}

struct CheckpointData {
  ModelConfig config;
  std::vector<ManifestEntry> manifest;
  std::vector<float> values;
};

inline CheckpointData read_checkpoint_data(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ParseError("checkpoint: bad magic at byte 0");
  }
  CheckpointData d;
  const auto cfg_len = detail::get<std::uint32_t>(is, "config length");
  std::string cfg(cfg_len, '\0');
  if (!is.read(cfg.data(), cfg_len)) throw ParseError("checkpoint: truncated config block");
  try {
    d.config = config_from_json(nlohmann::json::parse(cfg));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: config is not valid JSON: ") + e.what());
  }
  const auto count = detail::get<std::uint32_t>(is, "parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    ManifestEntry m;
    const auto len = detail::get<std::uint32_t>(is, "name length");
    if (len > 4096) throw ParseError("checkpoint: implausible name length");
    m.name.resize(len);
    if (!is.read(m.name.data(), len)) throw ParseError("checkpoint: truncated manifest");
    const auto rank = detail::get<std::uint32_t>(is, "rank");
    if (rank > 8) throw ParseError("checkpoint: implausible rank for " + m.name);
    m.shape.resize(rank);
    for (auto& e : m.shape) e = detail::get<std::uint64_t>(is, "extent");
    m.offset = detail::get<std::uint64_t>(is, "offset");
    d.manifest.push_back(std::move(m));
  }
  const auto n = detail::get<std::uint64_t>(is, "data count");
  d.values.resize(n);
  const auto at = static_cast<long long>(is.tellg());
  is.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(n * 4));
  if (static_cast<std::uint64_t>(is.gcount()) != n * 4) {
    throw ParseError("checkpoint: data block at byte " + std::to_string(at) + " expected " +
                     std::to_string(n * 4) + " bytes, got " + std::to_string(is.gcount()));
  }
  return d;
}

// Copies checkpoint values into `model`; the stored config and manifest
// must match the model exactly.
template <Scalar T>
void load_into(const Trans4Trans<T>& model, const CheckpointData& d) {
  if (!(d.config == model.config())) {
    throw ConfigError("checkpoint: config does not match model (" + to_json(d.config).dump() + ")");
  }
  if (d.manifest.size() != model.params().size()) {
    throw ConfigError("checkpoint: manifest has " + std::to_string(d.manifest.size()) +
                      " parameters, model has " + std::to_string(model.params().size()));
  }
  std::size_t i = 0;
  for (const auto& e : model.params()) {
    const auto& m = d.manifest[i++];
    if (m.name != e.name || m.shape != e.value.shape()) {
      throw ConfigError("checkpoint: manifest entry " + m.name + " " + to_string(m.shape) +
                        " does not match " + e.name + " " + to_string(e.value.shape()));
    }
    if (m.offset + e.value.size() > d.values.size()) {
      throw ParseError("checkpoint: parameter " + m.name + " runs past the data block");
    }
    Array<T> handle = e.value;
    auto dst = handle.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(d.values[m.offset + j]);
  }
}

template <Scalar T>
void save_checkpoint(const std::string& path, const Trans4Trans<T>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  write_checkpoint(os, model);
}

template <Scalar T>
Trans4Trans<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open checkpoint " + path);
  auto d = read_checkpoint_data(is);
  Trans4Trans<T> model(d.config);
  load_into(model, d);
  return model;
}

}  // namespace t4t
