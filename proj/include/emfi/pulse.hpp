#pragma once

#include <deque>
#include <string>
#include <vector>

#include "emfi/clock.hpp"
#include "emfi/interlock.hpp"
#include "emfi/transport.hpp"
#include "emfi/types.hpp"

namespace emfi {

enum class PulseState { Disarmed, Armed, Charging, Ready, Faulted };

std::string_view to_string(PulseState s);
PulseState pulse_state_from_string(std::string_view s);

struct PulseGenState {
  PulseState state = PulseState::Disarmed;
  std::string fault_reason;  // set only in Faulted

  bool operator==(const PulseGenState&) const = default;
};

struct WaveSample {
  double t_ns = 0.0;
  double voltage = 0.0;  // V across the coil
  double current = 0.0;  // A through the coil
};

struct PulseWaveform {
  std::vector<WaveSample> trace;
  double peak_voltage = 0.0;
  double peak_current = 0.0;
  double rise_time_ns = 0.0;   // 10% -> 90% of peak on the leading edge
  double fall_time_ns = 0.0;   // 90% -> 10% on the trailing edge of the main lobe
  double pulse_width_ns = 0.0; // full width at half maximum of the main lobe

  /// Energy delivered to the coil, integral of v*i dt, in joules.
  double energy_j() const;
};

/// Lumped series-RLC model of one injection probe tip plus the generator's
/// output stage. The loop is underdamped, so the pulse ends in a decaying ring.
struct CoilModel {
  double inductance_h;
  double resistance_ohm;
  double capacitance_f;
  double edge_ns;  // drive switching edge

  double damping_ratio() const;
  double natural_frequency() const;  // rad/s
};

CoilModel coil_model(const ProbeTip& tip);

/// Integrates the coil loop driven by a trapezoidal pulse of the configured
/// voltage and width until the ring has decayed. Samples every `sample_ns`.
PulseWaveform simulate_waveform(const PulseConfig& cfg, double sample_ns = 0.5);

/// Bench handle on a ChipShouter-style generator over its text protocol:
/// SET VOLT=, SET WIDTH=, ARM, DISARM, CHARGE, FIRE, STATUS?.
class PulseController {
 public:
  PulseController(LineTransport& transport, Clock& clock, Interlock* interlock = nullptr);

  PulseController(const PulseController&) = delete;
  PulseController& operator=(const PulseController&) = delete;

  void set_trace(CommandTrace* trace) { trace_ = trace; }
  void set_response_timeout(Duration t) { response_timeout_ = t; }

  /// Writes voltage and width, then verifies the device readback.
  PulseConfig set_config(const PulseConfig& cfg);
  void arm();
  void disarm();
  void charge();
  /// Polls until Ready; throws a timeout error once `budget` has elapsed.
  void wait_ready(Duration budget = std::chrono::seconds(1));
  /// Software-triggered pulse for bench checks. Campaigns fire through the
  /// hardware trigger input instead.
  PulseWaveform fire();
  PulseGenState status();

  const PulseConfig& config() const { return config_; }

 private:
  std::string command(std::string_view line);

  LineTransport& transport_;
  Clock& clock_;
  Interlock* interlock_;
  CommandTrace* trace_ = nullptr;
  Duration response_timeout_ = std::chrono::seconds(1);
  PulseConfig config_;
};

/// In-process pulse generator firmware. Charging completes after a latency on
/// the shared clock; the hardware trigger input fires only when Ready.
class SimulatedPulseGenerator final : public LineTransport {
 public:
  explicit SimulatedPulseGenerator(Clock& clock, Duration charge_latency = std::chrono::milliseconds(50));

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line(Duration timeout) override;

  /// Rising edge on the external trigger input. Returns whether a pulse fired.
  bool hardware_trigger();
  void inject_fault(std::string reason);

  PulseGenState state();
  int voltage() const { return voltage_; }
  int width_ns() const { return width_ns_; }
  std::uint64_t pulses_fired() const { return fired_; }

 private:
  void update();
  std::string handle(std::string_view line);
  std::string state_error() const;

  Clock& clock_;
  Duration charge_latency_;
  PulseState state_ = PulseState::Disarmed;
  std::string fault_reason_;
  TimePoint ready_at_{};
  int voltage_ = 250;
  int width_ns_ = 80;
  std::uint64_t fired_ = 0;
  std::deque<std::string> out_;
};

}  // namespace emfi
