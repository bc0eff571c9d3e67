#include "acetone/error.hpp"

namespace acetone {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_resolution: return "invalid-resolution";
    case Errc::invalid_parameter: return "invalid-parameter";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::truncated: return "truncated";
    case Errc::parse: return "parse";
    case Errc::unsupported: return "unsupported";
    case Errc::out_of_range: return "out-of-range";
    case Errc::hash_mismatch: return "hash-mismatch";
    case Errc::zero_variance: return "zero-variance";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::config: return "config";
    case Errc::non_finite: return "non-finite";
    case Errc::reward_unavailable: return "reward-unavailable";
  }
  return "unknown";
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::format:
    case Errc::truncated:
    case Errc::parse:
    case Errc::unsupported:
    case Errc::hash_mismatch:
      return 3;
    case Errc::zero_variance:
    case Errc::non_finite:
    case Errc::reward_unavailable:
      return 4;
    default:
      return 2;
  }
}

namespace {

std::string decorate(Errc code, const std::string& message, std::size_t line) {
  std::string out = errc_name(code);
  if (line > 0) out += " (line " + std::to_string(line) + ")";
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(Errc code, const std::string& message, std::size_t line)
    : std::runtime_error(decorate(code, message, line)), code_(code), message_(message), line_(line) {}

}  // namespace acetone
