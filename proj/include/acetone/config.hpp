#pragma once

// Plain-text key=value configuration files.
//
// Blank lines and lines starting with '#' are ignored. Keys are unique.
// A ConfigReader consumes keys into typed fields and, on finish(), reports
// every unknown key and every invalid value in one Errc::config error.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace acetone {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  // Keys in sorted order, one key=value per line.
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

class ConfigReader {
 public:
  explicit ConfigReader(const KeyValueConfig& config) : config_(config) {}

  void read(const std::string& key, int& out, int lo, int hi);
  void read(const std::string& key, std::uint64_t& out);
  void read(const std::string& key, double& out, double lo, double hi);
  void read(const std::string& key, bool& out);
  void read(const std::string& key, std::string& out);

  // Throws Errc::config listing every problem found so far.
  void finish() const;

 private:
  const std::string* take(const std::string& key);
  void problem(const std::string& key, const std::string& what);

  const KeyValueConfig& config_;
  std::vector<std::string> consumed_;
  std::vector<std::string> problems_;
};

}  // namespace acetone
