#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emfi {

enum class ErrorCode {
  validation,
  range,
  state,
  limit,
  safety,
  parse,
  device,
  timeout,
  not_found,
  busy,
  undefined_rate,
  io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Parse failure pointing at the first offending byte of the input.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& message)
      : Error(ErrorCode::parse, message + " at byte " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace emfi
