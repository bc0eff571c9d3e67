#include "acetone/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "acetone/error.hpp"

namespace acetone {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig config;
  std::string raw;
  std::size_t line_number = 0;
  while (std::getline(in, raw)) {
    ++line_number;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::config, "expected key=value, got '" + std::string(line) + "'", line_number);
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw Error(Errc::config, "empty key", line_number);
    if (config.contains(key)) throw Error(Errc::config, "duplicate key '" + key + "'", line_number);
    config.set(key, value);
  }
  return config;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse(in);
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open config " + path.string());
  return parse(in);
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

const std::string* ConfigReader::take(const std::string& key) {
  const auto it = config_.values().find(key);
  if (it == config_.values().end()) return nullptr;
  consumed_.push_back(key);
  return &it->second;
}

void ConfigReader::problem(const std::string& key, const std::string& what) {
  problems_.push_back(key + ": " + what);
}

void ConfigReader::read(const std::string& key, int& out, int lo, int hi) {
  const std::string* v = take(key);
  if (!v) return;
  int parsed = 0;
  if (!parse_number(*v, parsed)) return problem(key, "not an integer '" + *v + "'");
  if (parsed < lo || parsed > hi) {
    return problem(key, *v + " outside [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
  }
  out = parsed;
}

void ConfigReader::read(const std::string& key, std::uint64_t& out) {
  const std::string* v = take(key);
  if (!v) return;
  std::uint64_t parsed = 0;
  if (!parse_number(*v, parsed)) return problem(key, "not an unsigned integer '" + *v + "'");
  out = parsed;
}

void ConfigReader::read(const std::string& key, double& out, double lo, double hi) {
  const std::string* v = take(key);
  if (!v) return;
  double parsed = 0.0;
  if (!parse_number(*v, parsed)) return problem(key, "not a number '" + *v + "'");
  if (!(parsed >= lo && parsed <= hi)) {
    std::ostringstream msg;
    msg << *v << " outside [" << lo << "," << hi << "]";
    return problem(key, msg.str());
  }
  out = parsed;
}

void ConfigReader::read(const std::string& key, bool& out) {
  const std::string* v = take(key);
  if (!v) return;
  if (*v == "true" || *v == "1") {
    out = true;
  } else if (*v == "false" || *v == "0") {
    out = false;
  } else {
    problem(key, "not a boolean '" + *v + "'");
  }
}

void ConfigReader::read(const std::string& key, std::string& out) {
  if (const std::string* v = take(key)) out = *v;
}

void ConfigReader::finish() const {
  std::vector<std::string> all = problems_;
  for (const auto& [key, value] : config_.values()) {
    if (std::find(consumed_.begin(), consumed_.end(), key) == consumed_.end()) {
      all.push_back(key + ": unknown key");
    }
  }
  if (all.empty()) return;
  std::string msg = "invalid configuration";
  for (const auto& p : all) msg += "; " + p;
  throw Error(Errc::config, msg);
}

}  // namespace acetone
