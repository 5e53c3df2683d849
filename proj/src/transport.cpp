#include "emfi/transport.hpp"

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

std::string_view to_string(Device d) {
  switch (d) {
    case Device::Motion: return "motion";
    case Device::Pulse: return "pulse";
    case Device::TriggerPower: return "trigger";
  }
  return "unknown";
}

void CommandTrace::record(Device device, std::string_view line) {
  std::lock_guard lock(mutex_);
  entries_.push_back({device, std::string(line)});
}

std::vector<TraceEntry> CommandTrace::snapshot() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t CommandTrace::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void CommandTrace::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

std::vector<std::string> transact(LineTransport& transport, std::string_view command,
                                  Duration timeout,
                                  const std::function<bool(std::string_view)>& is_final,
                                  Device device, CommandTrace* trace) {
  std::vector<std::string> lines;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (trace) trace->record(device, command);
    transport.write_line(command);
    lines.clear();
    while (auto line = transport.read_line(timeout)) {
      const bool done = is_final(*line);
      lines.push_back(std::move(*line));
      if (done) return lines;
    }
  }
  throw Error(ErrorCode::timeout,
              fmt::format("{}: no response to '{}' after retry", to_string(device), command));
}

}  // namespace emfi
