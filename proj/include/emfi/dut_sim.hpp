#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "emfi/clock.hpp"
#include "emfi/random.hpp"
#include "emfi/transport.hpp"
#include "emfi/types.hpp"

namespace emfi {

enum class EffectKind { LoopFault, SramFlip, Crash, ArkBypass };

std::string_view to_string(EffectKind e);
EffectKind effect_from_string(std::string_view s);

enum class PayloadTag { CounterLoop, SramPattern, ArkVerify };

PayloadTag payload_tag(const PayloadKind& p);

/// Gaussian susceptibility spot on the die. `payloads` restricts the blob to
/// some payloads; empty means every payload the effect applies to.
struct FaultBlob {
  DiePoint center;
  double sigma_mm = 1.0;
  double p_max = 0.1;
  EffectKind effect = EffectKind::LoopFault;
  std::vector<PayloadTag> payloads;

  bool operator==(const FaultBlob&) const = default;
};

/// Trigger delays [center - half_width, center + half_width] during which the
/// ARK comparison can be skipped. `weight` scales the blob probability.
struct BypassWindow {
  std::int64_t center = 0;
  std::int64_t half_width = 0;
  double weight = 1.0;

  bool operator==(const BypassWindow&) const = default;
};

/// Position, pulse-voltage, supply and timing susceptibility of the simulated
/// target: p = p_max * exp(-d^2 / 2 sigma^2) * [V >= knee] * supply factor,
/// where the supply factor is `vsoc_suppression` once V_SoC reaches
/// `vsoc_threshold` and 1 below it.
struct FaultModel {
  static constexpr int kSchemaVersion = 1;

  std::vector<FaultBlob> blobs;
  double voltage_knee = 300.0;
  double vsoc_threshold = 0.60;
  double vsoc_suppression = 0.0;
  std::vector<BypassWindow> bypass_windows;
  std::uint64_t seed = 1;

  bool operator==(const FaultModel&) const = default;

  void validate() const;

  /// Default model: a 22 x 9 mm die with loop, SRAM and crash spots, fault
  /// suppression at nominal V_SoC and ARK bypass windows at 128, 2364, 2384
  /// and 2391 cycles weighted by their relative attack success.
  static FaultModel reference_model();
};

/// Probability that `blob` produces its effect for this pulse.
double effect_probability(const FaultModel& model, const FaultBlob& blob, DiePoint at,
                          const PulseConfig& pulse, double v_soc, std::int64_t delay_cycles,
                          PayloadTag payload);

FaultModel parse_fault_model(std::string_view json_text);
std::string dump_fault_model(const FaultModel& model);
FaultModel load_fault_model(const std::string& path);

struct DutTiming {
  Duration boot_latency = std::chrono::milliseconds(1500);  // power-on to first flash read
  Duration verify = std::chrono::microseconds(53);          // ARK check after the SPI event
  Duration payload_runtime = std::chrono::milliseconds(200);
};

struct DutConfig {
  FaultModel model = FaultModel::reference_model();
  double boot_threshold_v = 0.56;
  DutTiming timing;
  /// The flash image carries a replaced ARK, so the check fails unless bypassed.
  bool ark_key_modified = true;
};

enum class DutPhase { Off, Booting, RunningPayload, Halted };

std::string_view to_string(DutPhase p);

struct DutState {
  DutPhase phase = DutPhase::Off;
  std::optional<AttemptOutcome> halted_outcome;
  PayloadKind payload;
  double v_soc_at_boot = 0.0;
  std::uint64_t boot_count = 0;
};

/// Reads the target's UART output for one attack cycle.
class DutConsole {
 public:
  virtual ~DutConsole() = default;
  virtual std::string collect_output(Duration deadline) = 0;
  /// Whether the target still had power when output collection ended.
  virtual bool target_powered() const = 0;
};

/// Selects the payload image served to the target (flash emulator).
class FlashEmulator {
 public:
  virtual ~FlashEmulator() = default;
  virtual void select_payload(const PayloadKind& payload) = 0;
};

/// Maps a payload's UART output to an outcome. Unrecognised output counts as
/// a crash; no output is a timeout while powered and a crash otherwise.
AttemptOutcome classify_response(std::string_view output, const PayloadKind& expected,
                                 bool powered = true);

/// Simulated target: boot flow Off -> Booting -> RunningPayload -> Halted,
/// one SPI event per boot, and payload output shaped by injected effects.
class SimulatedDut final : public DutConsole, public FlashEmulator {
 public:
  SimulatedDut(DutConfig config, Clock& clock);

  /// Power applied with the given V_SoC. Throws a state error unless Off.
  void boot(Volts v_soc);
  void power_off();

  std::optional<TimePoint> pending_spi_event() const;
  /// Delivers the boot's SPI event; the target starts running its payload.
  TimePoint consume_spi_event();

  /// Applies one pulse `delay_cycles` after the SPI event at die position `at`.
  std::optional<EffectKind> apply_pulse(DiePoint at, const PulseConfig& pulse,
                                        std::int64_t delay_cycles);
  /// Test hook: the next pulse lands this effect regardless of the model.
  void force_next_effect(EffectKind e) { forced_ = e; }

  std::string run_payload_to_completion();

  std::string collect_output(Duration deadline) override;
  bool target_powered() const override;
  void select_payload(const PayloadKind& payload) override;

  void reseed(std::uint64_t seed);
  DutState state() const;
  const DutConfig& config() const { return config_; }
  void set_model(FaultModel model);

 private:
  DutConfig config_;
  Clock& clock_;
  Rng rng_;
  mutable std::mutex mutex_;
  DutState state_;
  std::optional<TimePoint> spi_at_;
  std::optional<EffectKind> landed_;
  std::optional<EffectKind> forced_;
};

/// UART console of a physical target: collects lines until the line goes idle
/// or the deadline passes.
class SerialDutConsole final : public DutConsole {
 public:
  SerialDutConsole(LineTransport& uart, Clock& clock, Duration idle_gap = std::chrono::milliseconds(300));
  std::string collect_output(Duration deadline) override;
  bool target_powered() const override { return true; }

 private:
  LineTransport& uart_;
  Clock& clock_;
  Duration idle_gap_;
};

/// Flash emulator driven by the operator; only records the requested image.
class ManualFlashEmulator final : public FlashEmulator {
 public:
  void select_payload(const PayloadKind& payload) override { selected_ = payload; }
  const PayloadKind& selected() const { return selected_; }

 private:
  PayloadKind selected_;
};

}  // namespace emfi
