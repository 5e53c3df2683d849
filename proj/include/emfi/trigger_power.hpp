#pragma once

#include <functional>
#include <deque>
#include <mutex>
#include <string>
#include <vector>

#include "emfi/clock.hpp"
#include "emfi/dut_sim.hpp"
#include "emfi/random.hpp"
#include "emfi/transport.hpp"
#include "emfi/types.hpp"

namespace emfi {

struct PowerState {
  bool ps_on = false;
  bool pwr_sw = false;

  bool target_on() const { return ps_on && pwr_sw; }
  bool operator==(const PowerState&) const = default;
};

enum class Rail { Core, Soc };

std::string_view to_string(Rail r);

inline constexpr double kMinRailVolts = 0.3;
inline constexpr double kMaxRailVolts = 1.5;

struct Svi2Command {
  Rail rail = Rail::Soc;
  Volts setpoint{0.9};
};

/// Range error unless the setpoint lies in [0.3, 1.5] V.
void validate(const Svi2Command& cmd);

/// Wait cycles per microsecond of the trigger MCU. Chosen so that the 0..3000
/// cycle brute-force range spans the 53 us verification window.
inline constexpr double kDefaultCyclesPerMicrosecond = 3000.0 / 53.0;

struct SpiEvent {
  TimePoint at{};
  WaitCycles effective_delay{0};
  bool pulse_fired = false;
};

/// Host side of the trigger/power board protocol:
/// TRIG DELAY=<n> WINDOW=<n>, VSET SOC|CORE=<mV>, PWR ON|OFF,
/// WAIT SPI TIMEOUT=<ms>, STATUS?.
class TriggerPowerController {
 public:
  TriggerPowerController(LineTransport& transport, Clock& clock);
  TriggerPowerController(const TriggerPowerController&) = delete;
  TriggerPowerController& operator=(const TriggerPowerController&) = delete;

  void set_trace(CommandTrace* trace) { trace_ = trace; }
  void set_response_timeout(Duration t) { response_timeout_ = t; }

  void configure_trigger(const TriggerPlan& plan);
  void set_supply(const Svi2Command& cmd);
  void power_on();
  void power_off();
  /// Blocks until the next boot-time SPI event and the delayed trigger edge.
  /// Throws a timeout error if none arrives within `timeout`.
  SpiEvent await_spi_event(Duration timeout);
  /// As await_spi_event, but a board-reported timeout (no boot, no event)
  /// yields nullopt. Transport failures still throw.
  std::optional<SpiEvent> poll_spi_event(Duration timeout);
  PowerState power_state();

 private:
  std::string command(std::string_view line, Duration timeout);

  LineTransport& transport_;
  Clock& clock_;
  CommandTrace* trace_ = nullptr;
  Duration response_timeout_ = std::chrono::seconds(2);
};

struct TriggerBoardTiming {
  Duration inter_step = std::chrono::milliseconds(250);   // PS_ON -> PWR_SW
  Duration off_settle = std::chrono::milliseconds(1000);  // rails discharged after PS_ON drops
  double cycles_per_us = kDefaultCyclesPerMicrosecond;
};

/// In-process trigger/power board wired to a simulated target. On the SPI
/// event it waits the sampled delay and raises the trigger output; the
/// callback returns whether the pulse generator actually fired.
class SimulatedTriggerBoard final : public LineTransport {
 public:
  using TriggerOutput = std::function<bool(std::int64_t effective_delay)>;

  SimulatedTriggerBoard(Clock& clock, SimulatedDut& dut, TriggerOutput trigger_out,
                        TriggerBoardTiming timing = {});

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line(Duration timeout) override;

  void reseed(std::uint64_t seed);
  PowerState power() const;
  TriggerPlan plan() const;
  double v_soc() const;
  /// Pin-level history: "ps_on", "pwr_sw", "ps_off", "spi", "trigger".
  std::vector<std::string> events() const;
  void clear_events();

 private:
  std::string handle(std::string_view line);
  std::string wait_spi(Duration timeout);
  void event(std::string name);

  Clock& clock_;
  SimulatedDut& dut_;
  TriggerOutput trigger_out_;
  TriggerBoardTiming timing_;
  mutable std::mutex mutex_;
  Rng rng_{0};
  PowerState power_;
  TriggerPlan plan_;
  bool configured_ = false;
  int soc_mv_ = 900;
  int core_mv_ = 1100;
  std::vector<std::string> events_;
  std::deque<std::string> out_;
};

}  // namespace emfi
