// SPDX-License-Identifier: Apache-2.0
#include "tds/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tds {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'D', 'S', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

std::string read_bytes(std::istream& is, std::uint64_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return s;
}

}  // namespace

void Checkpoint::put(std::string name, const Tensor& t) {
  for (auto& [n, v] : records) {
    if (n == name) {
      v = t.detach();
      return;
    }
  }
  records.emplace_back(std::move(name), t.detach());
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& r : records)
    if (r.first == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& r : records)
    if (r.first == name) return r.second;
  throw std::out_of_range("checkpoint has no record '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, Checkpoint::kVersion);
  const std::string header = ckpt.header.dump();
  write_pod<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_pod<std::uint64_t>(os, ckpt.records.size());
  for (const auto& [name, t] : ckpt.records) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(read_bytes(is, read_pod<std::uint64_t>(is)));
  const auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_bytes(is, read_pod<std::uint32_t>(is));
    const auto rank = read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = read_pod<std::uint64_t>(is);
    std::vector<double> values(numel_of(shape));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated record '" + name + "'");
    ckpt.records.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace tds
