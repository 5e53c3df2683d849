#pragma once

#include <string>

#include "emfi/transport.hpp"

namespace emfi {

struct SerialSettings {
  std::string path;
  int baud = 115200;
};

/// Raw 8N1 POSIX serial port speaking newline-terminated lines.
class SerialPort final : public LineTransport {
 public:
  explicit SerialPort(const SerialSettings& settings);
  /// Adopts an already open descriptor, e.g. one end of a pseudo-terminal.
  explicit SerialPort(int fd);
  ~SerialPort() override;

  SerialPort(const SerialPort&) = delete;
  SerialPort& operator=(const SerialPort&) = delete;
  SerialPort(SerialPort&& other) noexcept;
  SerialPort& operator=(SerialPort&& other) noexcept;

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line(Duration timeout) override;

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace emfi
