#include "emfi/pulse.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

std::string_view to_string(PulseState s) {
  switch (s) {
    case PulseState::Disarmed: return "DISARMED";
    case PulseState::Armed: return "ARMED";
    case PulseState::Charging: return "CHARGING";
    case PulseState::Ready: return "READY";
    case PulseState::Faulted: return "FAULTED";
  }
  return "FAULTED";
}

PulseState pulse_state_from_string(std::string_view s) {
  for (auto st : {PulseState::Disarmed, PulseState::Armed, PulseState::Charging, PulseState::Ready,
                  PulseState::Faulted}) {
    if (to_string(st) == s) return st;
  }
  throw Error(ErrorCode::device, fmt::format("unknown pulse generator state '{}'", s));
}

// ---------------------------------------------------------------------------
// Waveform model

double PulseWaveform::energy_j() const {
  double e = 0.0;
  for (std::size_t k = 1; k < trace.size(); ++k) {
    const double dt = (trace[k].t_ns - trace[k - 1].t_ns) * 1e-9;
    const double p0 = trace[k - 1].voltage * trace[k - 1].current;
    const double p1 = trace[k].voltage * trace[k].current;
    e += 0.5 * (p0 + p1) * dt;
  }
  return e;
}

double CoilModel::damping_ratio() const {
  return 0.5 * resistance_ohm * std::sqrt(capacitance_f / inductance_h);
}

double CoilModel::natural_frequency() const {
  return 1.0 / std::sqrt(inductance_h * capacitance_f);
}

CoilModel coil_model(const ProbeTip& tip) {
  // The 4 mm coil has the lower loop impedance: longer main lobe and higher
  // peak current than the 1 mm coil for the same drive.
  if (tip.diameter_mm >= 4.0) return {0.5e-6, 2.0, 20e-9, 2.0};
  return {0.8e-6, 5.0, 5e-9, 2.0};
}

namespace {

/// Trapezoidal drive: linear edges of `edge` ns, flat top, total `width` ns.
double drive(double t_ns, double v0, double width_ns, double edge_ns) {
  if (t_ns <= 0.0) return 0.0;
  if (t_ns < edge_ns) return v0 * t_ns / edge_ns;
  if (t_ns < width_ns) return v0;
  if (t_ns < width_ns + edge_ns) return v0 * (1.0 - (t_ns - width_ns) / edge_ns);
  return 0.0;
}

}  // namespace

PulseWaveform simulate_waveform(const PulseConfig& cfg, double sample_ns) {
  validate(cfg);
  const CoilModel m = coil_model(cfg.probe);
  const double v0 = cfg.voltage.value();
  const double width = cfg.width.value();
  const double decay_rate = m.damping_ratio() * m.natural_frequency();  // 1/s
  const double tail_ns = std::log(1000.0) / decay_rate * 1e9;
  const double end_ns = width + m.edge_ns + tail_ns;

  constexpr double dt_ns = 0.05;
  const double dt = dt_ns * 1e-9;
  const auto steps = static_cast<std::size_t>(std::ceil(end_ns / dt_ns));
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(sample_ns / dt_ns)));

  // State: capacitor charge q and loop current i. Coil voltage = u - q/C.
  const auto deriv = [&](double t_ns, double q, double i, double& dq, double& di) {
    dq = i;
    di = (drive(t_ns, v0, width, m.edge_ns) - m.resistance_ohm * i - q / m.capacitance_f) /
         m.inductance_h;
  };

  PulseWaveform w;
  w.trace.reserve(steps / stride + 2);
  double q = 0.0;
  double i = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t_ns = static_cast<double>(k) * dt_ns;
    if (k % stride == 0 || k == steps) {
      w.trace.push_back({t_ns, drive(t_ns, v0, width, m.edge_ns) - q / m.capacitance_f, i});
    }
    double dq1, di1, dq2, di2, dq3, di3, dq4, di4;
    deriv(t_ns, q, i, dq1, di1);
    deriv(t_ns + dt_ns / 2, q + dt / 2 * dq1, i + dt / 2 * di1, dq2, di2);
    deriv(t_ns + dt_ns / 2, q + dt / 2 * dq2, i + dt / 2 * di2, dq3, di3);
    deriv(t_ns + dt_ns, q + dt * dq3, i + dt * di3, dq4, di4);
    q += dt / 6 * (dq1 + 2 * dq2 + 2 * dq3 + dq4);
    i += dt / 6 * (di1 + 2 * di2 + 2 * di3 + di4);
  }

  for (const auto& s : w.trace) {
    w.peak_voltage = std::max(w.peak_voltage, s.voltage);
    w.peak_current = std::max(w.peak_current, s.current);
  }

  // Edge timing on the main (first positive) lobe.
  const double pk = w.peak_voltage;
  const auto first_at_or_above = [&](double level, std::size_t from) {
    for (std::size_t k = from; k < w.trace.size(); ++k) {
      if (w.trace[k].voltage >= level) return k;
    }
    return w.trace.size() - 1;
  };
  const auto first_below = [&](double level, std::size_t from) {
    for (std::size_t k = from; k < w.trace.size(); ++k) {
      if (w.trace[k].voltage < level) return k;
    }
    return w.trace.size() - 1;
  };
  const std::size_t r10 = first_at_or_above(0.1 * pk, 0);
  const std::size_t r50 = first_at_or_above(0.5 * pk, r10);
  const std::size_t r90 = first_at_or_above(0.9 * pk, r50);
  const std::size_t f90 = first_below(0.9 * pk, r90);
  const std::size_t f50 = first_below(0.5 * pk, r90);
  const std::size_t f10 = first_below(0.1 * pk, f50);
  w.rise_time_ns = w.trace[r90].t_ns - w.trace[r10].t_ns;
  w.pulse_width_ns = w.trace[f50].t_ns - w.trace[r50].t_ns;
  w.fall_time_ns = w.trace[f10].t_ns - w.trace[f90].t_ns;
  return w;
}

// ---------------------------------------------------------------------------
// Controller

namespace {

/// Extracts "<key>=<value>" from a STATUS? reply.
std::string_view field(std::string_view reply, std::string_view key) {
  std::size_t pos = 0;
  while (pos < reply.size()) {
    auto end = reply.find(' ', pos);
    if (end == std::string_view::npos) end = reply.size();
    const auto tok = reply.substr(pos, end - pos);
    if (tok.size() > key.size() && tok.starts_with(key) && tok[key.size()] == '=') {
      return tok.substr(key.size() + 1);
    }
    pos = end + 1;
  }
  return {};
}

int parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::device, fmt::format("bad integer '{}' in device reply", s));
  }
  return v;
}

PulseGenState parse_status(std::string_view reply) {
  if (!reply.starts_with("STATE=")) {
    throw Error(ErrorCode::device, fmt::format("unexpected status reply '{}'", reply));
  }
  PulseGenState st;
  st.state = pulse_state_from_string(field(reply, "STATE"));
  if (st.state == PulseState::Faulted) {
    const auto r = reply.find("REASON=");
    st.fault_reason = r == std::string_view::npos ? "unknown" : std::string(reply.substr(r + 7));
  }
  return st;
}

}  // namespace

PulseController::PulseController(LineTransport& transport, Clock& clock, Interlock* interlock)
    : transport_(transport), clock_(clock), interlock_(interlock) {}

std::string PulseController::command(std::string_view line) {
  auto lines = transact(
      transport_, line, response_timeout_,
      [](std::string_view l) {
        return l == "OK" || l.starts_with("ERR") || l.starts_with("STATE=");
      },
      Device::Pulse, trace_);
  std::string reply = std::move(lines.back());
  if (reply.starts_with("ERR STATE")) {
    const auto name = reply.size() > 10 ? reply.substr(10) : std::string("UNKNOWN");
    throw Error(ErrorCode::state, fmt::format("pulse generator refused '{}' in state {}", line, name));
  }
  if (reply.starts_with("ERR RANGE")) {
    throw Error(ErrorCode::range, fmt::format("pulse generator rejected '{}' as out of range", line));
  }
  if (reply.starts_with("ERR")) {
    throw Error(ErrorCode::device, fmt::format("pulse generator error for '{}': {}", line, reply));
  }
  return reply;
}

PulseConfig PulseController::set_config(const PulseConfig& cfg) {
  validate(cfg);
  const double v = cfg.voltage.value();
  const double w = cfg.width.value();
  if (v != std::round(v) || w != std::round(w)) {
    throw Error(ErrorCode::validation, "pulse voltage and width have 1 V / 1 ns resolution");
  }
  command(fmt::format("SET VOLT={}", static_cast<int>(v)));
  command(fmt::format("SET WIDTH={}", static_cast<int>(w)));

  const std::string reply = command("STATUS?");
  const int rv = parse_int(field(reply, "VOLT"));
  const int rw = parse_int(field(reply, "WIDTH"));
  if (rv != static_cast<int>(v) || rw != static_cast<int>(w)) {
    throw Error(ErrorCode::device,
                fmt::format("readback mismatch: wrote {} V/{} ns, read {} V/{} ns", v, w, rv, rw));
  }
  config_ = cfg;
  return {Volts(rv), Nanoseconds(rw), cfg.probe};
}

void PulseController::arm() {
  // Raise the interlock before the generator can hold charge.
  if (interlock_) interlock_->set_pulse_armed(true);
  try {
    command("ARM");
  } catch (...) {
    if (interlock_) {
      try {
        if (status().state == PulseState::Disarmed) interlock_->set_pulse_armed(false);
      } catch (...) {
      }
    }
    throw;
  }
}

void PulseController::disarm() {
  command("DISARM");
  if (interlock_) interlock_->set_pulse_armed(false);
}

void PulseController::charge() { command("CHARGE"); }

void PulseController::wait_ready(Duration budget) {
  const TimePoint start = clock_.now();
  for (;;) {
    const auto st = status();
    if (st.state == PulseState::Ready) return;
    if (st.state != PulseState::Charging) {
      throw Error(ErrorCode::state,
                  fmt::format("pulse generator left charging in state {}", to_string(st.state)));
    }
    if (clock_.now() - start >= budget) throw Error(ErrorCode::timeout, "pulse generator charge timed out");
    clock_.sleep_for(std::chrono::milliseconds(5));
  }
}

PulseWaveform PulseController::fire() {
  command("FIRE");
  return simulate_waveform(config_);
}

PulseGenState PulseController::status() { return parse_status(command("STATUS?")); }

// ---------------------------------------------------------------------------
// Simulated generator

SimulatedPulseGenerator::SimulatedPulseGenerator(Clock& clock, Duration charge_latency)
    : clock_(clock), charge_latency_(charge_latency) {}

void SimulatedPulseGenerator::write_line(std::string_view line) { out_.push_back(handle(line)); }

std::optional<std::string> SimulatedPulseGenerator::read_line(Duration) {
  if (out_.empty()) return std::nullopt;
  std::string line = std::move(out_.front());
  out_.pop_front();
  return line;
}

void SimulatedPulseGenerator::update() {
  if (state_ == PulseState::Charging && clock_.now() >= ready_at_) state_ = PulseState::Ready;
}

std::string SimulatedPulseGenerator::state_error() const {
  return fmt::format("ERR STATE {}", to_string(state_));
}

std::string SimulatedPulseGenerator::handle(std::string_view line) {
  update();
  const auto set_value = [&](std::string_view prefix, int lo, int hi, int& target) -> std::string {
    if (state_ != PulseState::Disarmed && state_ != PulseState::Armed) return state_error();
    const auto text = line.substr(prefix.size());
    int v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) return "ERR SYNTAX";
    if (v < lo || v > hi) return "ERR RANGE";
    target = v;
    return "OK";
  };

  if (line.starts_with("SET VOLT=")) return set_value("SET VOLT=", 1, 500, voltage_);
  if (line.starts_with("SET WIDTH=")) return set_value("SET WIDTH=", 15, 960, width_ns_);
  if (line == "ARM") {
    if (state_ != PulseState::Disarmed) return state_error();
    state_ = PulseState::Armed;
    return "OK";
  }
  if (line == "DISARM") {
    state_ = PulseState::Disarmed;
    fault_reason_.clear();
    return "OK";
  }
  if (line == "CHARGE") {
    if (state_ != PulseState::Armed) return state_error();
    state_ = PulseState::Charging;
    ready_at_ = clock_.now() + charge_latency_;
    return "OK";
  }
  if (line == "FIRE") {
    if (state_ != PulseState::Ready) return state_error();
    state_ = PulseState::Armed;
    ++fired_;
    return "OK";
  }
  if (line == "STATUS?") {
    std::string reply = fmt::format("STATE={} VOLT={} WIDTH={}", to_string(state_), voltage_, width_ns_);
    if (state_ == PulseState::Faulted) reply += " REASON=" + fault_reason_;
    return reply;
  }
  return "ERR SYNTAX";
}

bool SimulatedPulseGenerator::hardware_trigger() {
  update();
  if (state_ != PulseState::Ready) return false;
  state_ = PulseState::Armed;
  ++fired_;
  return true;
}

void SimulatedPulseGenerator::inject_fault(std::string reason) {
  state_ = PulseState::Faulted;
  fault_reason_ = std::move(reason);
}

PulseGenState SimulatedPulseGenerator::state() {
  update();
  return {state_, state_ == PulseState::Faulted ? fault_reason_ : std::string()};
}

}  // namespace emfi
