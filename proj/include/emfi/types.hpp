#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "emfi/clock.hpp"
#include "emfi/units.hpp"

namespace emfi {

/// Stage coordinates in millimeters.
struct StagePosition {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const StagePosition&) const = default;

  bool is_finite() const;
  StagePosition operator+(const StagePosition& o) const { return {x + o.x, y + o.y, z + o.z}; }
  StagePosition operator-(const StagePosition& o) const { return {x - o.x, y - o.y, z - o.z}; }
};

/// Point on the die surface in millimeters, measured from the die corner.
struct DiePoint {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const DiePoint&) const = default;
};

struct GridSpec {
  StagePosition origin;  // die-corner anchor
  double width = 0.0;
  double height = 0.0;
  double pitch = 1.0;
  double z = 0.0;

  bool operator==(const GridSpec&) const = default;
};

void validate(const GridSpec& spec);

struct SupplyVoltages {
  Volts v_soc{0.9};
  Volts v_core{1.1};

  bool operator==(const SupplyVoltages&) const = default;
};

void validate(const SupplyVoltages& v);

/// Trigger delay relative to the SPI boot event. Effective delays are drawn
/// uniformly from [delay - window, delay + window].
struct TriggerPlan {
  WaitCycles delay{0};
  WaitCycles window{0};

  bool operator==(const TriggerPlan&) const = default;
  auto operator<=>(const TriggerPlan&) const = default;
};

void validate(const TriggerPlan& plan);

struct SuccessStats {
  std::uint64_t successes = 0;
  std::uint64_t attempts = 0;

  bool operator==(const SuccessStats&) const = default;
};

enum class AttemptOutcome : std::uint8_t {
  NoEffect,
  PayloadFault,
  Crash,
  BypassSuccess,
  BootFailure,
  Timeout,
};

inline constexpr std::size_t kOutcomeCount = 6;
using OutcomeHistogram = std::array<std::uint64_t, kOutcomeCount>;

std::string_view to_string(AttemptOutcome o);
AttemptOutcome outcome_from_string(std::string_view s);

/// PayloadFault and BypassSuccess are the outcomes a campaign is looking for.
constexpr bool is_success(AttemptOutcome o) {
  return o == AttemptOutcome::PayloadFault || o == AttemptOutcome::BypassSuccess;
}

enum class Winding : std::uint8_t { CW, CCW };

std::string_view to_string(Winding w);
Winding winding_from_string(std::string_view s);

struct ProbeTip {
  double diameter_mm = 4.0;
  Winding winding = Winding::CW;

  bool operator==(const ProbeTip&) const = default;
  /// Stable identity used to key per-tip calibrations, e.g. "4mm-CW".
  std::string id() const;
};

struct PulseConfig {
  Volts voltage{500};
  Nanoseconds width{73};
  ProbeTip probe;

  bool operator==(const PulseConfig&) const = default;
};

inline constexpr double kMaxPulseVoltage = 500.0;
inline constexpr double kMinPulseWidthNs = 15.0;
inline constexpr double kMaxPulseWidthNs = 960.0;

/// Throws range errors for voltage/width outside the generator limits.
void validate(const PulseConfig& cfg);

namespace payload {
struct CounterLoop {
  std::uint32_t iterations = 1000;
  bool operator==(const CounterLoop&) const = default;
};
struct SramPattern {
  std::uint32_t word = 0xA5A5A5A5u;
  std::uint32_t n = 64;
  bool operator==(const SramPattern&) const = default;
};
struct ArkVerify {
  bool operator==(const ArkVerify&) const = default;
};
}  // namespace payload

using PayloadKind = std::variant<payload::CounterLoop, payload::SramPattern, payload::ArkVerify>;

std::string_view payload_name(const PayloadKind& p);
void validate(const PayloadKind& p);

/// One attack cycle, written once and never modified.
struct AttemptRecord {
  std::uint64_t seq = 0;
  TimePoint timestamp{};
  StagePosition position;
  DiePoint die;
  PulseConfig pulse;
  SupplyVoltages supply;
  TriggerPlan trigger;
  std::optional<WaitCycles> effective_delay;
  PayloadKind payload;
  AttemptOutcome outcome = AttemptOutcome::NoEffect;
  std::string output;
  std::string device_error;  // empty unless a device error aborted the cycle

  bool operator==(const AttemptRecord&) const = default;
};

}  // namespace emfi
