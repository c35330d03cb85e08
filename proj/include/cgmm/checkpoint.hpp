#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cgmm/adam.hpp"
#include "cgmm/common.hpp"
#include "cgmm/tensor.hpp"

// Checkpoint format: an 8-byte little-endian header length, a JSON header
// (format version, opaque config echo, seed, optimizer scalars, tensor
// directory with byte offsets), then one blob of little-endian 64-bit reals.
// Parameters are laid out in name order; Adam moments follow under
// "adam.m/<name>" and "adam.v/<name>". Files are written to a temp path and
// renamed into place.

namespace cgmm {

constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need byte swaps");

struct CheckpointFile {
  nlohmann::json header;
  std::vector<char> payload;
};

namespace detail {

struct TensorEntry {
  std::string name;
  std::vector<int> shape;
  std::uint64_t offset = 0;  // bytes into the payload
  std::uint64_t count = 0;   // number of doubles
};

inline void append_tensor(nlohmann::json& dir, std::vector<char>& payload, const std::string& name,
                          const std::vector<int>& shape, const std::vector<double>& values) {
  const std::uint64_t offset = payload.size();
  const std::size_t bytes = values.size() * sizeof(double);
  payload.resize(payload.size() + bytes);
  std::memcpy(payload.data() + offset, values.data(), bytes);
  dir.push_back({{"name", name},
                 {"shape", shape},
                 {"offset", offset},
                 {"count", static_cast<std::uint64_t>(values.size())}});
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                            const ParamStore& params, const AdamState* adam,
                            std::uint64_t seed) {
  nlohmann::json dir = nlohmann::json::array();
  std::vector<char> payload;
  for (const auto& [name, t] : params.map()) {
    detail::append_tensor(dir, payload, name, t.shape(), t.data());
  }
  if (adam) {
    for (const auto& [name, m] : adam->first_moment) {
      detail::append_tensor(dir, payload, "adam.m/" + name, {static_cast<int>(m.size())}, m);
    }
    for (const auto& [name, v] : adam->second_moment) {
      detail::append_tensor(dir, payload, "adam.v/" + name, {static_cast<int>(v.size())}, v);
    }
  }

  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"kind", "cgmm-checkpoint"},
      {"config", config},
      {"seed", seed},
      {"tensors", dir},
  };
  if (adam) {
    header["adam"] = {{"lr", adam->lr},         {"beta1", adam->beta1},
                      {"beta2", adam->beta2},   {"eps", adam->eps},
                      {"step_count", adam->step_count}};
  }
  const std::string header_str = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw io_error("cannot open " + tmp + " for writing");
    const std::uint64_t len = header_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw io_error("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw io_error("cannot move checkpoint into place: " + ec.message());
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path.string());
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    throw data_error("checkpoint " + path.string() + " is too short for a header");
  }
  std::string header_str(len, '\0');
  if (!in.read(header_str.data(), static_cast<std::streamsize>(len))) {
    throw data_error("checkpoint " + path.string() + " header is truncated");
  }
  CheckpointFile file;
  try {
    file.header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw data_error("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (!file.header.contains("format_version") ||
      file.header.at("format_version").get<int>() != kCheckpointVersion) {
    throw data_error("unsupported checkpoint version in " + path.string());
  }
  file.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return file;
}

/// Restores parameters (and optionally optimizer state) from a checkpoint.
/// Every entry's shape is validated against the live parameter set before a
/// single value is copied; a blob that ends before an entry's extent fails
/// naming that tensor.
inline void restore_checkpoint(const CheckpointFile& file, ParamStore& params, AdamState* adam) {
  std::vector<detail::TensorEntry> entries;
  for (const auto& e : file.header.at("tensors")) {
    detail::TensorEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<std::vector<int>>();
    entry.offset = e.at("offset").get<std::uint64_t>();
    entry.count = e.at("count").get<std::uint64_t>();
    entries.push_back(std::move(entry));
  }

  // validation pass: complete before anything mutates
  std::size_t param_entries = 0;
  for (const auto& e : entries) {
    const bool is_moment = e.name.rfind("adam.", 0) == 0;
    if (is_moment) continue;
    ++param_entries;
    if (!params.contains(e.name)) {
      throw data_error("checkpoint tensor " + e.name + " has no matching parameter");
    }
    const Tensor& t = params.map().at(e.name);
    if (t.shape() != e.shape || t.numel() != e.count) {
      throw data_error("checkpoint tensor " + e.name + " has shape " + shape_str(e.shape) +
                       ", expected " + shape_str(t.shape()));
    }
  }
  if (param_entries != params.map().size()) {
    throw data_error("checkpoint holds " + std::to_string(param_entries) +
                     " parameters, model expects " + std::to_string(params.map().size()));
  }
  for (const auto& e : entries) {
    if (e.offset + e.count * sizeof(double) > file.payload.size()) {
      throw data_error("checkpoint blob is truncated: tensor " + e.name + " is unreadable");
    }
  }

  for (const auto& e : entries) {
    const double* src = reinterpret_cast<const double*>(file.payload.data() + e.offset);
    if (e.name.rfind("adam.m/", 0) == 0) {
      if (adam) adam->first_moment[e.name.substr(7)] = std::vector<double>(src, src + e.count);
    } else if (e.name.rfind("adam.v/", 0) == 0) {
      if (adam) adam->second_moment[e.name.substr(7)] = std::vector<double>(src, src + e.count);
    } else {
      std::copy_n(src, e.count, params.get(e.name).data().begin());
    }
  }
  if (adam && file.header.contains("adam")) {
    const auto& a = file.header.at("adam");
    adam->lr = a.at("lr").get<double>();
    adam->beta1 = a.at("beta1").get<double>();
    adam->beta2 = a.at("beta2").get<double>();
    adam->eps = a.at("eps").get<double>();
    adam->step_count = a.at("step_count").get<long long>();
  }
}

}  // namespace cgmm
