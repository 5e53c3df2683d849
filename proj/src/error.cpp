#include "emfi/error.hpp"

namespace emfi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::range: return "range";
    case ErrorCode::state: return "state";
    case ErrorCode::limit: return "limit";
    case ErrorCode::safety: return "safety";
    case ErrorCode::parse: return "parse";
    case ErrorCode::device: return "device";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::busy: return "busy";
    case ErrorCode::undefined_rate: return "undefined_rate";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

}  // namespace emfi
