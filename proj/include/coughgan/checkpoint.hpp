#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "coughgan/adam.hpp"
#include "coughgan/network.hpp"
#include "coughgan/tensor.hpp"

namespace coughgan {

/// Named arrays plus a JSON metadata block.
///
/// On disk ("ACGN" container, little-endian):
///   magic "ACGN" | u32 version | u64 metadata length | metadata UTF-8 JSON
///   | u64 entry count | entries
/// where each entry is
///   u32 name length | name | u32 rank | rank x u64 dims | prod(dims) x f64
struct ModelCheckpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor& at(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  void add(std::string name, Tensor value) { entries.emplace_back(std::move(name), std::move(value)); }

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
/// Throws FormatError on a truncated or inconsistent byte stream.
ModelCheckpoint parse_checkpoint(const std::string& bytes);

/// Throws IoError if the file cannot be written or read.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every parameter and buffer of `net` under its network name.
void store_network(ModelCheckpoint& ckpt, nn::Network& net);
/// Copies stored values back; throws FormatError on missing names or
/// mismatched shapes.
void restore_network(const ModelCheckpoint& ckpt, nn::Network& net);

/// Optimizer moments under "<prefix>.m.<param>", "<prefix>.v.<param>" and
/// the step count under "<prefix>.step".
void store_adam(ModelCheckpoint& ckpt, const std::string& prefix, const nn::AdamState& state,
                std::span<const nn::ParamRef> params);
void restore_adam(const ModelCheckpoint& ckpt, const std::string& prefix, nn::AdamState& state,
                  std::span<const nn::ParamRef> params);

}  // namespace coughgan
