#pragma once

#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emfi/clock.hpp"

namespace emfi {

/// Newline-delimited text channel to a device. Implementations: the POSIX
/// serial port and the in-process device simulators.
class LineTransport {
 public:
  virtual ~LineTransport() = default;
  /// Sends one line; the terminating '\n' is appended by the transport.
  virtual void write_line(std::string_view line) = 0;
  /// Next received line without its terminator, or nullopt on timeout.
  virtual std::optional<std::string> read_line(Duration timeout) = 0;
};

enum class Device { Motion, Pulse, TriggerPower };

std::string_view to_string(Device d);

struct TraceEntry {
  Device device;
  std::string line;
};

/// Ordered record of every command line written to any device of a rig.
class CommandTrace {
 public:
  void record(Device device, std::string_view line);
  std::vector<TraceEntry> snapshot() const;
  std::size_t size() const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<TraceEntry> entries_;
};

/// Writes `command` and collects response lines up to and including the first
/// one accepted by `is_final`. A read timeout resends the command once before
/// raising a timeout error.
std::vector<std::string> transact(LineTransport& transport, std::string_view command,
                                  Duration timeout,
                                  const std::function<bool(std::string_view)>& is_final,
                                  Device device, CommandTrace* trace);

}  // namespace emfi
