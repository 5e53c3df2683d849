#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <variant>

#include "emfi/clock.hpp"
#include "emfi/interlock.hpp"
#include "emfi/transport.hpp"
#include "emfi/types.hpp"

namespace emfi {

struct MotionLimits {
  double travel_mm = 100.0;
  double step_mm = 0.0025;
  double max_speed_mm_s = 10.0;

  void validate() const;
  /// Whole steps per millimeter (400 for the default 2.5 um step).
  std::int64_t steps_per_mm() const;
  std::int64_t to_steps(double mm) const;
  double from_steps(std::int64_t steps) const;
  /// Nearest step multiple; canonical so that equal step counts compare equal.
  double quantize(double mm) const { return from_steps(to_steps(mm)); }
  StagePosition quantize(const StagePosition& p) const;
  bool within(const StagePosition& p) const;
};

namespace gcode {
struct Home {
  bool operator==(const Home&) const = default;
};
/// Feed rates are integer mm/min as on the wire.
struct MoveAbsolute {
  StagePosition target;
  int feed_mm_min = 600;
  bool operator==(const MoveAbsolute&) const = default;
};
struct MoveRelative {
  StagePosition delta;
  int feed_mm_min = 600;
  bool operator==(const MoveRelative&) const = default;
};
struct ReportPosition {
  bool operator==(const ReportPosition&) const = default;
};
struct SetFanSpeed {
  int index = 0;
  int duty = 0;
  bool operator==(const SetFanSpeed&) const = default;
};
}  // namespace gcode

using GCodeCommand = std::variant<gcode::Home, gcode::MoveAbsolute, gcode::MoveRelative,
                                  gcode::ReportPosition, gcode::SetFanSpeed>;

void validate(const GCodeCommand& cmd);

/// Canonical wire text, newline terminated. Coordinates carry exactly three
/// decimals. A relative move is the block "G91 / G1 ... / G90".
std::string encode(const GCodeCommand& cmd);

/// Inverse of encode(). Accepts G0 as a synonym for G1.
GCodeCommand decode(std::string_view text);

/// Parses the "X:<f> Y:<f> Z:<f>" prefix of an M114 report.
StagePosition decode_position_report(std::string_view line);

struct MachineState {
  StagePosition position;
  bool homed = false;
  bool moving = false;
};

struct MoveAck {
  StagePosition position;
  Duration elapsed{0};
};

/// Exclusive handle on a Marlin-style stage controller. Every motion call
/// blocks until the firmware reports the target position.
class MotionController {
 public:
  MotionController(LineTransport& transport, MotionLimits limits, Clock& clock,
                   Interlock* interlock = nullptr);

  MotionController(const MotionController&) = delete;
  MotionController& operator=(const MotionController&) = delete;

  void set_trace(CommandTrace* trace) { trace_ = trace; }
  void set_response_timeout(Duration t) { response_timeout_ = t; }

  void home();
  MoveAck move_to(const StagePosition& target, MmPerSecond feed);
  /// Relative jog, resolved to an absolute target before the limit check.
  MoveAck move_by(const StagePosition& delta, MmPerSecond feed);
  StagePosition get_position();
  void set_fan(int index, int duty);

  const MachineState& state() const { return state_; }
  const MotionLimits& limits() const { return limits_; }

 private:
  std::vector<std::string> command(std::string_view line);
  StagePosition query_position();

  LineTransport& transport_;
  MotionLimits limits_;
  Clock& clock_;
  Interlock* interlock_;
  CommandTrace* trace_ = nullptr;
  Duration response_timeout_ = std::chrono::seconds(2);
  MachineState state_;
};

/// In-process firmware implementing the G0/G1/G28/G90/G91/M106/M114 subset
/// with stock Marlin semantics: software endstops clamp to the travel range,
/// feed is modal, and each move advances the shared clock by its duration.
class SimulatedMarlin final : public LineTransport {
 public:
  SimulatedMarlin(MotionLimits limits, Clock& clock);

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line(Duration timeout) override;

  StagePosition position() const;
  bool homed() const { return homed_; }
  int fan(int index) const { return fans_.at(static_cast<std::size_t>(index)); }
  Duration last_move_duration() const { return last_move_; }
  /// Swallow the responses of the next `n` commands (lost-link simulation).
  void drop_responses(int n) { drop_ = n; }

 private:
  void handle(std::string_view line);
  void move_steps(const std::array<std::int64_t, 3>& target, double feed_mm_s);

  MotionLimits limits_;
  Clock& clock_;
  std::array<std::int64_t, 3> steps_{0, 0, 0};
  bool homed_ = false;
  bool relative_ = false;
  double feed_mm_s_;
  std::array<int, 4> fans_{0, 0, 0, 0};
  Duration last_move_{0};
  int drop_ = 0;
  std::deque<std::string> out_;
};

}  // namespace emfi
