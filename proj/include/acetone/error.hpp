#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace acetone {

enum class Errc {
  invalid_resolution,
  invalid_parameter,
  dimension_mismatch,
  io,
  format,
  truncated,
  parse,
  unsupported,
  out_of_range,
  hash_mismatch,
  zero_variance,
  insufficient_data,
  config,
  non_finite,
  reward_unavailable,
};

const char* errc_name(Errc code);

// Process exit code for a failure class: 2 input, 3 format, 4 numeric.
int exit_code_for(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::size_t line = 0);

  Errc code() const noexcept { return code_; }
  // 1-based source line for parse failures, 0 when not applicable.
  std::size_t line() const noexcept { return line_; }
  // The message without the code and line decoration.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
  std::size_t line_;
};

}  // namespace acetone
