#include "emfi/trigger_power.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

std::string_view to_string(Rail r) { return r == Rail::Core ? "CORE" : "SOC"; }

void validate(const Svi2Command& cmd) {
  const double v = cmd.setpoint.value();
  if (!(v >= kMinRailVolts && v <= kMaxRailVolts)) {
    throw Error(ErrorCode::range,
                fmt::format("{} setpoint {} V outside [{}, {}] V", to_string(cmd.rail), v, kMinRailVolts,
                            kMaxRailVolts));
  }
}

namespace {

// Value of "KEY=<int>" within a space-separated reply or command.
std::optional<std::int64_t> field(std::string_view line, std::string_view key) {
  std::size_t pos = 0;
  while ((pos = line.find(key, pos)) != std::string_view::npos) {
    if (pos == 0 || line[pos - 1] == ' ') {
      const auto text = line.substr(pos + key.size());
      std::int64_t v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc()) return std::nullopt;
      if (ptr != text.data() + text.size() && *ptr != ' ') return std::nullopt;
      return v;
    }
    pos += key.size();
  }
  return std::nullopt;
}

int to_millivolts(Volts v) { return static_cast<int>(std::lround(v.value() * 1000.0)); }

}  // namespace

// ---------------------------------------------------------------------------
// Host controller

TriggerPowerController::TriggerPowerController(LineTransport& transport, Clock& clock)
    : transport_(transport), clock_(clock) {}

std::string TriggerPowerController::command(std::string_view line, Duration timeout) {
  auto lines = transact(
      transport_, line, timeout,
      [](std::string_view l) {
        return l == "OK" || l.starts_with("ERR") || l.starts_with("SPI ") || l.starts_with("PS_ON=");
      },
      Device::TriggerPower, trace_);
  std::string reply = std::move(lines.back());
  if (reply == "ERR RANGE") {
    throw Error(ErrorCode::range, fmt::format("trigger board rejected '{}' as out of range", line));
  }
  if (reply.starts_with("ERR STATE")) {
    throw Error(ErrorCode::state, fmt::format("trigger board refused '{}': {}", line, reply));
  }
  if (reply.starts_with("ERR")) {
    throw Error(ErrorCode::device, fmt::format("trigger board error for '{}': {}", line, reply));
  }
  return reply;
}

void TriggerPowerController::configure_trigger(const TriggerPlan& plan) {
  validate(plan);
  command(fmt::format("TRIG DELAY={} WINDOW={}", plan.delay.value(), plan.window.value()), response_timeout_);
}

void TriggerPowerController::set_supply(const Svi2Command& cmd) {
  validate(cmd);
  command(fmt::format("VSET {}={}", to_string(cmd.rail), to_millivolts(cmd.setpoint)), response_timeout_);
}

void TriggerPowerController::power_on() { command("PWR ON", response_timeout_); }

void TriggerPowerController::power_off() { command("PWR OFF", response_timeout_); }

SpiEvent TriggerPowerController::await_spi_event(Duration timeout) {
  auto event = poll_spi_event(timeout);
  if (!event) throw Error(ErrorCode::timeout, "no SPI event before the deadline");
  return *event;
}

std::optional<SpiEvent> TriggerPowerController::poll_spi_event(Duration timeout) {
  const auto ms = std::chrono::ceil<std::chrono::milliseconds>(timeout).count();
  const auto lines = transact(
      transport_, fmt::format("WAIT SPI TIMEOUT={}", ms), timeout + response_timeout_,
      [](std::string_view l) { return l.starts_with("SPI ") || l.starts_with("ERR"); }, Device::TriggerPower,
      trace_);
  const std::string& reply = lines.back();
  if (reply == "ERR TIMEOUT") return std::nullopt;
  if (reply.starts_with("ERR")) {
    throw Error(ErrorCode::device, fmt::format("trigger board error while waiting for SPI: {}", reply));
  }
  const auto t = field(reply, "T=");
  const auto delay = field(reply, "DELAY=");
  const auto fired = field(reply, "FIRED=");
  if (!t || !delay || !fired) {
    throw Error(ErrorCode::device, fmt::format("malformed SPI report '{}'", reply));
  }
  return SpiEvent{TimePoint(Duration(*t)), WaitCycles(*delay), *fired != 0};
}

PowerState TriggerPowerController::power_state() {
  const auto reply = command("STATUS?", response_timeout_);
  const auto ps = field(reply, "PS_ON=");
  const auto sw = field(reply, "PWR_SW=");
  if (!ps || !sw) throw Error(ErrorCode::device, fmt::format("malformed status '{}'", reply));
  return {*ps != 0, *sw != 0};
}

// ---------------------------------------------------------------------------
// Simulated board

SimulatedTriggerBoard::SimulatedTriggerBoard(Clock& clock, SimulatedDut& dut, TriggerOutput trigger_out,
                                             TriggerBoardTiming timing)
    : clock_(clock), dut_(dut), trigger_out_(std::move(trigger_out)), timing_(timing) {}

void SimulatedTriggerBoard::write_line(std::string_view line) {
  std::string reply = handle(line);
  std::lock_guard lock(mutex_);
  out_.push_back(std::move(reply));
}

std::optional<std::string> SimulatedTriggerBoard::read_line(Duration) {
  std::lock_guard lock(mutex_);
  if (out_.empty()) return std::nullopt;
  std::string line = std::move(out_.front());
  out_.pop_front();
  return line;
}

void SimulatedTriggerBoard::reseed(std::uint64_t seed) {
  std::lock_guard lock(mutex_);
  rng_.reseed(seed);
}

PowerState SimulatedTriggerBoard::power() const {
  std::lock_guard lock(mutex_);
  return power_;
}

TriggerPlan SimulatedTriggerBoard::plan() const {
  std::lock_guard lock(mutex_);
  return plan_;
}

double SimulatedTriggerBoard::v_soc() const {
  std::lock_guard lock(mutex_);
  return soc_mv_ / 1000.0;
}

std::vector<std::string> SimulatedTriggerBoard::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

void SimulatedTriggerBoard::clear_events() {
  std::lock_guard lock(mutex_);
  events_.clear();
}

void SimulatedTriggerBoard::event(std::string name) {
  std::lock_guard lock(mutex_);
  events_.push_back(std::move(name));
}

std::string SimulatedTriggerBoard::handle(std::string_view line) {
  if (line.starts_with("TRIG ")) {
    const auto delay = field(line, "DELAY=");
    const auto window = field(line, "WINDOW=");
    if (!delay || !window) return "ERR SYNTAX";
    if (*delay < 0 || *window < 0 || *window > *delay) return "ERR RANGE";
    std::lock_guard lock(mutex_);
    plan_ = {WaitCycles(*delay), WaitCycles(*window)};
    configured_ = true;
    return "OK";
  }
  if (line.starts_with("VSET ")) {
    const auto soc = field(line, "SOC=");
    const auto core = field(line, "CORE=");
    if (!soc && !core) return "ERR SYNTAX";
    const auto mv = soc ? *soc : *core;
    if (mv < std::lround(kMinRailVolts * 1000) || mv > std::lround(kMaxRailVolts * 1000)) return "ERR RANGE";
    // The setpoint is latched and applied by the regulator at the next boot.
    std::lock_guard lock(mutex_);
    (soc ? soc_mv_ : core_mv_) = static_cast<int>(mv);
    return "OK";
  }
  if (line == "PWR ON") {
    if (power().target_on()) return "OK";
    {
      std::lock_guard lock(mutex_);
      power_.ps_on = true;
      events_.emplace_back("ps_on");
    }
    clock_.sleep_for(timing_.inter_step);
    {
      std::lock_guard lock(mutex_);
      power_.pwr_sw = true;
      events_.emplace_back("pwr_sw");
    }
    dut_.boot(Volts(v_soc()));
    return "OK";
  }
  if (line == "PWR OFF") {
    if (!power().ps_on) return "OK";
    {
      // Dropping PS_ON cuts the supply; the board latch behind PWR_SW resets with it.
      std::lock_guard lock(mutex_);
      power_ = {};
      events_.emplace_back("ps_off");
    }
    dut_.power_off();
    clock_.sleep_for(timing_.off_settle);
    return "OK";
  }
  if (line.starts_with("WAIT SPI ")) {
    const auto ms = field(line, "TIMEOUT=");
    if (!ms || *ms < 0) return "ERR SYNTAX";
    return wait_spi(std::chrono::milliseconds(*ms));
  }
  if (line == "STATUS?") {
    std::lock_guard lock(mutex_);
    return fmt::format("PS_ON={} PWR_SW={} SOC={} CORE={} TRIG={}/{}", power_.ps_on ? 1 : 0,
                       power_.pwr_sw ? 1 : 0, soc_mv_, core_mv_, plan_.delay.value(), plan_.window.value());
  }
  return "ERR SYNTAX";
}

std::string SimulatedTriggerBoard::wait_spi(Duration timeout) {
  TriggerPlan plan;
  {
    std::lock_guard lock(mutex_);
    if (!configured_) return "ERR STATE UNCONFIGURED";
    plan = plan_;
  }
  const TimePoint deadline = clock_.now() + timeout;
  const auto pending = power().target_on() ? dut_.pending_spi_event() : std::nullopt;
  if (!pending || *pending > deadline) {
    const auto remaining = deadline - clock_.now();
    if (remaining > Duration::zero()) clock_.sleep_for(remaining);
    return "ERR TIMEOUT";
  }
  if (*pending > clock_.now()) clock_.sleep_for(*pending - clock_.now());
  const TimePoint at = dut_.consume_spi_event();
  event("spi");

  std::int64_t delay = 0;
  {
    std::lock_guard lock(mutex_);
    delay = rng_.uniform_int(plan.delay.value() - plan.window.value(), plan.delay.value() + plan.window.value());
  }
  const auto wait = Duration(static_cast<std::int64_t>(std::llround(delay / timing_.cycles_per_us)));
  if (wait > Duration::zero()) clock_.sleep_for(wait);
  event("trigger");
  const bool fired = trigger_out_ ? trigger_out_(delay) : false;
  return fmt::format("SPI T={} DELAY={} FIRED={}", at.time_since_epoch().count(), delay, fired ? 1 : 0);
}

}  // namespace emfi
