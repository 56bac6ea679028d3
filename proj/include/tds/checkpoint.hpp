// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tds/tensor.hpp"

namespace tds {

/// Named tensor records plus a JSON header describing what produced them.
///
/// On-disk layout (all integers little-endian):
///
///   bytes  "TDSCKPT\0"
///   u32    format version (currently 1)
///   u64    header length, then that many bytes of UTF-8 JSON
///   u64    record count
///   per record:
///     u32  name length, then the name bytes (UTF-8 parameter path)
///     u32  rank, then rank x u64 dimensions
///     f64  values in row-major order (IEEE-754 binary64)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> records;

  void put(std::string name, const Tensor& t);
  bool contains(const std::string& name) const;
  /// Throws std::out_of_range naming the missing record.
  const Tensor& get(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on I/O failure, bad magic, or a truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tds
