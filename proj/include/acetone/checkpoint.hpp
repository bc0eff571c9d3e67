#pragma once

// Versioned binary container shared by tokenizer, PCA and policy files.
//
// Layout (little-endian):
//   "ACTN" magic, u32 version, str kind,
//   u32 meta count, (str key, str value)*,
//   u32 tensor count, (str name, u32 rank, u32 dims[rank], f32 data[])*,
//   u64 FNV-1a hash of every preceding byte.
// str is u32 length followed by raw bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace acetone {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(std::string_view name) const;
  const std::string& meta_value(const std::string& key) const;
  int meta_int(const std::string& key) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Checks magic, version, kind (when expected_kind is non-empty) and hash.
Checkpoint deserialize_checkpoint(std::string_view bytes, std::string_view expected_kind = {});

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_kind = {});

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace acetone
