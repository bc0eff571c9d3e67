#include "acetone/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>

#include "acetone/error.hpp"
#include "acetone/io.hpp"

namespace acetone {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'A', 'C', 'T', 'N'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(Errc::truncated, "checkpoint ends early");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > bytes_.size() - pos_) throw Error(Errc::truncated, "checkpoint string ends early");
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor& Checkpoint::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error(Errc::format, "checkpoint has no tensor '" + std::string(name) + "'");
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw Error(Errc::format, "checkpoint has no metadata '" + key + "'");
  return it->second;
}

int Checkpoint::meta_int(const std::string& key) const {
  const std::string& v = meta_value(key);
  int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(Errc::format, "checkpoint metadata '" + key + "' is not an integer");
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(ckpt.kind);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::size_t n = 1;
    for (int d : t.shape) n *= static_cast<std::size_t>(d);
    if (n != t.data.size()) throw Error(Errc::dimension_mismatch, "tensor '" + t.name + "' size");
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.raw(t.data.data(), t.data.size() * sizeof(float));
  }
  w.u64(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(std::string_view bytes, std::string_view expected_kind) {
  if (bytes.size() < 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(Errc::format, "not a checkpoint (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (stored != fnv1a64(body)) throw Error(Errc::hash_mismatch, "checkpoint checksum mismatch");

  Reader r(body.substr(4));
  Checkpoint ckpt;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(Errc::unsupported, "checkpoint version " + std::to_string(version));
  }
  ckpt.kind = r.str();
  if (!expected_kind.empty() && ckpt.kind != expected_kind) {
    throw Error(Errc::format, "checkpoint holds '" + ckpt.kind + "', expected '" +
                                  std::string(expected_kind) + "'");
  }
  for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(Errc::format, "tensor '" + t.name + "' rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<int>(r.u32()));
      count *= static_cast<std::size_t>(t.shape.back());
    }
    if (count > r.remaining() / sizeof(float)) throw Error(Errc::truncated, "tensor '" + t.name + "' data");
    t.data.resize(count);
    r.raw(t.data.data(), count * sizeof(float));
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw Error(Errc::format, "trailing bytes after checkpoint tensors");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_kind) {
  return deserialize_checkpoint(read_file_bytes(path), expected_kind);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace acetone
