#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "emfi/calibration.hpp"
#include "emfi/clock.hpp"
#include "emfi/dut_sim.hpp"
#include "emfi/interlock.hpp"
#include "emfi/motion.hpp"
#include "emfi/pulse.hpp"
#include "emfi/serial_port.hpp"
#include "emfi/transport.hpp"
#include "emfi/trigger_power.hpp"

namespace emfi {

/// Ground truth of a simulated bench: where the die really sits on the stage
/// and where the probe really sits relative to the positioning camera.
struct SimBenchConfig {
  MotionLimits limits;
  DutConfig dut;
  DieAnchor die{{30.0, 40.0, 12.1}, 22.0, 9.0};  // corner z is the working height
  double probe_dx = 1.25;
  double probe_dy = -0.75;
  double surface_z = 12.0;  // die surface height in stage coordinates
  ProbeTip tip;
  Duration charge_latency = std::chrono::milliseconds(50);
  TriggerBoardTiming board;
  /// Pre-load the calibration store with the true anchor and offset, as if
  /// the operator had already calibrated.
  bool calibrated = true;
  TimePoint start = VirtualClock::default_epoch();
};

/// In-process devices sharing one virtual clock.
struct SimBench {
  explicit SimBench(const SimBenchConfig& cfg);

  SimBenchConfig config;
  VirtualClock clock;
  SimulatedMarlin marlin;
  SimulatedPulseGenerator pulse_gen;
  SimulatedDut dut;
  SimulatedTriggerBoard board;

  /// Die coordinate currently under the probe tip.
  DiePoint probe_die_position() const;
  /// Gap between probe tip and die surface at stage height z.
  double clearance(double z) const { return z - config.surface_z; }
};

struct SerialRigConfig {
  SerialSettings motion{"/dev/ttyACM0"};
  SerialSettings pulse{"/dev/ttyUSB0"};
  SerialSettings trigger{"/dev/ttyACM1"};
  SerialSettings console{"/dev/ttyUSB1"};
  MotionLimits limits;
};

/// Every device handle a campaign needs, plus the interlock and command trace
/// they share. Hardware and simulated rigs differ only in the transports.
class Rig {
 public:
  ~Rig();
  Rig(const Rig&) = delete;
  Rig& operator=(const Rig&) = delete;

  Clock& clock() { return *clock_; }
  Interlock& interlock() { return interlock_; }
  CommandTrace& trace() { return trace_; }
  MotionController& motion() { return *motion_; }
  PulseController& pulse() { return *pulse_; }
  TriggerPowerController& trigger() { return *trigger_; }
  DutConsole& console() { return *console_; }
  FlashEmulator& flash() { return *flash_; }
  CalibrationStore& calibration() { return calibration_; }
  /// Null for hardware rigs.
  SimBench* sim() { return sim_.get(); }

  /// Reseeds the simulated devices for attempt `seq`; hardware ignores it.
  void reseed(std::uint64_t campaign_seed, std::uint64_t seq);
  /// Clearance oracle for Z calibration. Hardware rigs have none: the
  /// operator confirms contact through the UI instead.
  std::optional<ClearanceOracle> clearance_oracle();

 private:
  Rig() = default;
  friend std::unique_ptr<Rig> make_simulated_rig(SimBenchConfig cfg);
  friend std::unique_ptr<Rig> make_serial_rig(const SerialRigConfig& cfg);

  std::unique_ptr<Clock> owned_clock_;
  Clock* clock_ = nullptr;
  Interlock interlock_;
  CommandTrace trace_;
  std::unique_ptr<SimBench> sim_;
  std::vector<std::unique_ptr<LineTransport>> ports_;
  std::unique_ptr<MotionController> motion_;
  std::unique_ptr<PulseController> pulse_;
  std::unique_ptr<TriggerPowerController> trigger_;
  std::unique_ptr<DutConsole> owned_console_;
  std::unique_ptr<FlashEmulator> owned_flash_;
  DutConsole* console_ = nullptr;
  FlashEmulator* flash_ = nullptr;
  CalibrationStore calibration_;
};

std::unique_ptr<Rig> make_simulated_rig(SimBenchConfig cfg = {});
std::unique_ptr<Rig> make_serial_rig(const SerialRigConfig& cfg);

/// Backend selection from the "rig" section of a config document:
///   {"backend": "sim", "fault_model": <path or inline model>, "die": ...,
///    "probe_offset": {"dx", "dy"}, "surface_z", "boot_threshold_v", "calibrated"}
///   {"backend": "serial", "ports": {"motion", "pulse", "trigger", "console"}}
struct RigSpec {
  bool simulated = true;
  SimBenchConfig sim;
  SerialRigConfig serial;
};

RigSpec parse_rig_spec(const Json& j, const std::string& base_dir = ".");
std::unique_ptr<Rig> make_rig(const RigSpec& spec);

}  // namespace emfi
