#include "emfi/dut_sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "emfi/error.hpp"
#include "emfi/serialization.hpp"

namespace emfi {

std::string_view to_string(EffectKind e) {
  switch (e) {
    case EffectKind::LoopFault: return "LoopFault";
    case EffectKind::SramFlip: return "SramFlip";
    case EffectKind::Crash: return "Crash";
    case EffectKind::ArkBypass: return "ArkBypass";
  }
  return "Crash";
}

EffectKind effect_from_string(std::string_view s) {
  for (auto e : {EffectKind::LoopFault, EffectKind::SramFlip, EffectKind::Crash, EffectKind::ArkBypass}) {
    if (to_string(e) == s) return e;
  }
  throw Error(ErrorCode::validation, fmt::format("unknown effect '{}'", s));
}

namespace {

std::string_view to_string(PayloadTag t) {
  switch (t) {
    case PayloadTag::CounterLoop: return "CounterLoop";
    case PayloadTag::SramPattern: return "SramPattern";
    case PayloadTag::ArkVerify: return "ArkVerify";
  }
  return "CounterLoop";
}

PayloadTag payload_tag_from_string(std::string_view s) {
  for (auto t : {PayloadTag::CounterLoop, PayloadTag::SramPattern, PayloadTag::ArkVerify}) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorCode::validation, fmt::format("unknown payload '{}'", s));
}

bool effect_applies(EffectKind e, PayloadTag p) {
  switch (e) {
    case EffectKind::LoopFault: return p == PayloadTag::CounterLoop;
    case EffectKind::SramFlip: return p == PayloadTag::SramPattern;
    case EffectKind::ArkBypass: return p == PayloadTag::ArkVerify;
    case EffectKind::Crash: return true;
  }
  return false;
}

}  // namespace

PayloadTag payload_tag(const PayloadKind& p) { return static_cast<PayloadTag>(p.index()); }

std::string_view to_string(DutPhase p) {
  switch (p) {
    case DutPhase::Off: return "Off";
    case DutPhase::Booting: return "Booting";
    case DutPhase::RunningPayload: return "RunningPayload";
    case DutPhase::Halted: return "Halted";
  }
  return "Off";
}

// ---------------------------------------------------------------------------
// Fault model

void FaultModel::validate() const {
  for (const auto& b : blobs) {
    if (!(b.sigma_mm > 0.0)) throw Error(ErrorCode::validation, "blob sigma must be > 0");
    if (!(b.p_max >= 0.0 && b.p_max <= 1.0)) throw Error(ErrorCode::validation, "blob p_max must be in [0, 1]");
  }
  if (!(vsoc_suppression >= 0.0 && vsoc_suppression <= 1.0)) {
    throw Error(ErrorCode::validation, "V_SoC suppression multiplier must be in [0, 1]");
  }
  for (const auto& w : bypass_windows) {
    if (w.half_width < 0) throw Error(ErrorCode::validation, "bypass window half-width must be >= 0");
    if (!(w.weight >= 0.0 && w.weight <= 1.0)) {
      throw Error(ErrorCode::validation, "bypass window weight must be in [0, 1]");
    }
  }
}

FaultModel FaultModel::reference_model() {
  FaultModel m;
  m.voltage_knee = 300.0;
  m.vsoc_threshold = 0.60;
  m.vsoc_suppression = 0.0;
  m.seed = 1;
  m.blobs = {
      {{14.5, 3.5}, 1.0, 0.30, EffectKind::LoopFault, {}},
      {{6.0, 6.5}, 0.8, 0.12, EffectKind::LoopFault, {}},
      {{18.0, 7.0}, 0.9, 0.08, EffectKind::LoopFault, {}},
      {{9.5, 2.0}, 0.7, 0.20, EffectKind::SramFlip, {}},
      {{3.0, 4.0}, 0.6, 0.10, EffectKind::SramFlip, {}},
      {{11.0, 8.0}, 0.6, 0.05, EffectKind::Crash, {}},
      {{14.5, 3.5}, 0.7, 0.2206, EffectKind::ArkBypass, {}},
  };
  // Weights are the attack success rates relative to the strongest window.
  m.bypass_windows = {
      {128, 4, 0.0158 / 0.2206},
      {2364, 4, 1.0},
      {2384, 4, 0.0352 / 0.2206},
      {2391, 2, 0.0068 / 0.2206},
  };
  return m;
}

double effect_probability(const FaultModel& model, const FaultBlob& blob, DiePoint at,
                          const PulseConfig& pulse, double v_soc, std::int64_t delay_cycles,
                          PayloadTag payload) {
  if (!effect_applies(blob.effect, payload)) return 0.0;
  if (!blob.payloads.empty() &&
      std::find(blob.payloads.begin(), blob.payloads.end(), payload) == blob.payloads.end()) {
    return 0.0;
  }
  if (pulse.voltage.value() < model.voltage_knee) return 0.0;
  const double dx = at.x - blob.center.x;
  const double dy = at.y - blob.center.y;
  double p = blob.p_max * std::exp(-(dx * dx + dy * dy) / (2.0 * blob.sigma_mm * blob.sigma_mm));
  if (v_soc >= model.vsoc_threshold) p *= model.vsoc_suppression;
  if (blob.effect == EffectKind::ArkBypass) {
    double weight = 0.0;
    for (const auto& w : model.bypass_windows) {
      if (delay_cycles >= w.center - w.half_width && delay_cycles <= w.center + w.half_width) {
        weight = std::max(weight, w.weight);
      }
    }
    p *= weight;
  }
  return std::clamp(p, 0.0, 1.0);
}

FaultModel parse_fault_model(std::string_view json_text) {
  const Json j = parse_json(json_text);
  FaultModel m;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != FaultModel::kSchemaVersion) {
      throw Error(ErrorCode::validation, fmt::format("unsupported fault model schema version {}", version));
    }
    m.seed = j.value("seed", m.seed);
    m.voltage_knee = j.value("voltage_knee", m.voltage_knee);
    m.vsoc_threshold = j.value("vsoc_threshold", m.vsoc_threshold);
    m.vsoc_suppression = j.value("vsoc_suppression", m.vsoc_suppression);
    for (const auto& b : j.value("blobs", Json::array())) {
      FaultBlob blob;
      blob.center = b.at("center").get<DiePoint>();
      blob.sigma_mm = b.at("sigma_mm").get<double>();
      blob.p_max = b.at("p_max").get<double>();
      blob.effect = effect_from_string(b.at("effect").get<std::string>());
      for (const auto& p : b.value("payloads", Json::array())) {
        blob.payloads.push_back(payload_tag_from_string(p.get<std::string>()));
      }
      m.blobs.push_back(std::move(blob));
    }
    for (const auto& w : j.value("bypass_windows", Json::array())) {
      m.bypass_windows.push_back({w.at("center").get<std::int64_t>(),
                                  w.at("half_width").get<std::int64_t>(), w.value("weight", 1.0)});
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, fmt::format("malformed fault model: {}", e.what()));
  }
  m.validate();
  return m;
}

std::string dump_fault_model(const FaultModel& m) {
  Json blobs = Json::array();
  for (const auto& b : m.blobs) {
    Json payloads = Json::array();
    for (auto p : b.payloads) payloads.push_back(std::string(to_string(p)));
    blobs.push_back({{"center", b.center},
                     {"sigma_mm", b.sigma_mm},
                     {"p_max", b.p_max},
                     {"effect", std::string(to_string(b.effect))},
                     {"payloads", payloads}});
  }
  Json windows = Json::array();
  for (const auto& w : m.bypass_windows) {
    windows.push_back({{"center", w.center}, {"half_width", w.half_width}, {"weight", w.weight}});
  }
  Json j{{"schema_version", FaultModel::kSchemaVersion},
         {"seed", m.seed},
         {"voltage_knee", m.voltage_knee},
         {"vsoc_threshold", m.vsoc_threshold},
         {"vsoc_suppression", m.vsoc_suppression},
         {"blobs", blobs},
         {"bypass_windows", windows}};
  return j.dump(2);
}

FaultModel load_fault_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open fault model '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_fault_model(ss.str());
}

// ---------------------------------------------------------------------------
// Response classification

namespace {

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto l = text.substr(start, end - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) out.push_back(l);
    start = end + 1;
  }
  return out;
}

std::optional<std::uint64_t> read_uint(std::string_view& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc()) return std::nullopt;
  s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
  return v;
}

bool consume(std::string_view& s, std::string_view prefix) {
  if (!s.starts_with(prefix)) return false;
  s.remove_prefix(prefix.size());
  return true;
}

}  // namespace

AttemptOutcome classify_response(std::string_view output, const PayloadKind& expected, bool powered) {
  const auto lines = lines_of(output);
  if (lines.empty()) return powered ? AttemptOutcome::Timeout : AttemptOutcome::Crash;

  switch (payload_tag(expected)) {
    case PayloadTag::CounterLoop: {
      std::string_view s = lines.front();
      if (!consume(s, "COUNTER ")) return AttemptOutcome::Crash;
      const auto counter = read_uint(s);
      if (!counter || !consume(s, " EXPECTED ")) return AttemptOutcome::Crash;
      const auto want = read_uint(s);
      if (!want || !s.empty()) return AttemptOutcome::Crash;
      return *counter == *want ? AttemptOutcome::NoEffect : AttemptOutcome::PayloadFault;
    }
    case PayloadTag::SramPattern: {
      std::string_view s = lines.front();
      if (!consume(s, "SRAM FAULTS ")) return AttemptOutcome::Crash;
      const auto faults = read_uint(s);
      if (!faults || !s.empty()) return AttemptOutcome::Crash;
      return *faults > 0 ? AttemptOutcome::PayloadFault : AttemptOutcome::NoEffect;
    }
    case PayloadTag::ArkVerify: {
      for (auto l : lines) {
        if (l == "OFFCHIP BL EXEC") return AttemptOutcome::BypassSuccess;
      }
      const auto last = lines.back();
      if (last == "ARK OK" || last == "ARK FAIL HALT") return AttemptOutcome::NoEffect;
      return AttemptOutcome::Crash;
    }
  }
  return AttemptOutcome::Crash;
}

// ---------------------------------------------------------------------------
// Simulated target

SimulatedDut::SimulatedDut(DutConfig config, Clock& clock)
    : config_(std::move(config)), clock_(clock), rng_(config_.model.seed) {
  config_.model.validate();
  state_.payload = payload::CounterLoop{};
}

void SimulatedDut::set_model(FaultModel model) {
  model.validate();
  std::lock_guard lock(mutex_);
  config_.model = std::move(model);
}

void SimulatedDut::boot(Volts v_soc) {
  std::lock_guard lock(mutex_);
  if (state_.phase != DutPhase::Off) {
    throw Error(ErrorCode::state, fmt::format("boot requested while target is {}", to_string(state_.phase)));
  }
  ++state_.boot_count;
  state_.v_soc_at_boot = v_soc.value();
  state_.halted_outcome.reset();
  landed_.reset();
  if (v_soc.value() < config_.boot_threshold_v) {
    // The security processor never reaches the flash read.
    state_.phase = DutPhase::Halted;
    state_.halted_outcome = AttemptOutcome::BootFailure;
    spi_at_.reset();
    return;
  }
  state_.phase = DutPhase::Booting;
  spi_at_ = clock_.now() + config_.timing.boot_latency;
}

void SimulatedDut::power_off() {
  std::lock_guard lock(mutex_);
  state_.phase = DutPhase::Off;
  state_.halted_outcome.reset();
  spi_at_.reset();
  landed_.reset();
}

std::optional<TimePoint> SimulatedDut::pending_spi_event() const {
  std::lock_guard lock(mutex_);
  if (state_.phase != DutPhase::Booting) return std::nullopt;
  return spi_at_;
}

TimePoint SimulatedDut::consume_spi_event() {
  std::lock_guard lock(mutex_);
  if (state_.phase != DutPhase::Booting || !spi_at_) {
    throw Error(ErrorCode::state, "no pending SPI event");
  }
  const TimePoint t = *spi_at_;
  spi_at_.reset();
  state_.phase = DutPhase::RunningPayload;
  return t;
}

std::optional<EffectKind> SimulatedDut::apply_pulse(DiePoint at, const PulseConfig& pulse,
                                                    std::int64_t delay_cycles) {
  std::lock_guard lock(mutex_);
  if (state_.phase != DutPhase::RunningPayload || landed_) return std::nullopt;
  if (forced_) {
    landed_ = std::exchange(forced_, std::nullopt);
    return landed_;
  }
  const PayloadTag tag = payload_tag(state_.payload);
  const auto& blobs = config_.model.blobs;
  std::vector<double> p(blobs.size());
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    p[k] = effect_probability(config_.model, blobs[k], at, pulse, state_.v_soc_at_boot, delay_cycles, tag);
  }
  std::vector<std::size_t> order(blobs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
  for (const auto k : order) {
    if (p[k] <= 0.0) break;
    if (rng_.bernoulli(p[k])) {
      landed_ = blobs[k].effect;
      return landed_;
    }
  }
  return std::nullopt;
}

std::string SimulatedDut::run_payload_to_completion() {
  std::unique_lock lock(mutex_);
  if (state_.phase != DutPhase::RunningPayload) {
    throw Error(ErrorCode::state,
                fmt::format("payload not running (target is {})", to_string(state_.phase)));
  }
  const PayloadKind payload = state_.payload;
  const auto effect = landed_;
  std::string out;

  if (effect == EffectKind::Crash) {
    out = fmt::format("?ABORT 0x{:08x}", static_cast<std::uint32_t>(rng_.next()));
  } else if (const auto* loop = std::get_if<payload::CounterLoop>(&payload)) {
    std::uint64_t counter = loop->iterations;
    if (effect == EffectKind::LoopFault) {
      counter -= static_cast<std::uint64_t>(rng_.uniform_int(1, std::min<std::int64_t>(3, loop->iterations)));
    }
    out = fmt::format("COUNTER {} EXPECTED {}", counter, loop->iterations);
  } else if (const auto* sram = std::get_if<payload::SramPattern>(&payload)) {
    if (effect == EffectKind::SramFlip) {
      const auto index = rng_.uniform_int(0, sram->n - 1);
      const auto bit = rng_.uniform_int(0, 31);
      const std::uint32_t got = sram->word ^ (1u << bit);
      out = fmt::format("SRAM FAULTS 1\nDIFF {} 0x{:08X} 0x{:08X}", index, sram->word, got);
    } else {
      out = "SRAM FAULTS 0";
    }
  } else {
    if (!config_.ark_key_modified) {
      out = "ARK OK";
    } else if (effect == EffectKind::ArkBypass) {
      out = "OFFCHIP BL EXEC";
    } else {
      out = "ARK FAIL HALT";
    }
  }

  state_.phase = DutPhase::Halted;
  state_.halted_outcome = classify_response(out, payload, true);
  const Duration runtime = std::holds_alternative<payload::ArkVerify>(payload)
                               ? config_.timing.verify
                               : config_.timing.payload_runtime;
  lock.unlock();
  clock_.sleep_for(runtime);
  return out;
}

std::string SimulatedDut::collect_output(Duration) {
  {
    std::lock_guard lock(mutex_);
    if (state_.phase != DutPhase::RunningPayload) return {};
  }
  return run_payload_to_completion();
}

bool SimulatedDut::target_powered() const {
  std::lock_guard lock(mutex_);
  return state_.phase != DutPhase::Off;
}

void SimulatedDut::select_payload(const PayloadKind& payload) {
  validate(payload);
  std::lock_guard lock(mutex_);
  state_.payload = payload;
}

void SimulatedDut::reseed(std::uint64_t seed) {
  std::lock_guard lock(mutex_);
  rng_.reseed(seed);
}

DutState SimulatedDut::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

// ---------------------------------------------------------------------------
// Physical target console

SerialDutConsole::SerialDutConsole(LineTransport& uart, Clock& clock, Duration idle_gap)
    : uart_(uart), clock_(clock), idle_gap_(idle_gap) {}

std::string SerialDutConsole::collect_output(Duration deadline) {
  const TimePoint end = clock_.now() + deadline;
  std::string out;
  while (clock_.now() < end) {
    const Duration wait = out.empty() ? std::chrono::duration_cast<Duration>(end - clock_.now()) : idle_gap_;
    auto line = uart_.read_line(wait);
    if (!line) break;
    if (!out.empty()) out.push_back('\n');
    out += *line;
  }
  return out;
}

}  // namespace emfi
