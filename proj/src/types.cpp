#include "emfi/types.hpp"

#include <cmath>

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

bool StagePosition::is_finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

void validate(const GridSpec& spec) {
  if (!spec.origin.is_finite() || !std::isfinite(spec.z)) {
    throw Error(ErrorCode::validation, "grid origin must be finite");
  }
  if (!(spec.pitch > 0.0) || !std::isfinite(spec.pitch)) {
    throw Error(ErrorCode::validation, fmt::format("grid pitch must be > 0, got {}", spec.pitch));
  }
  if (!(spec.width >= 0.0) || !(spec.height >= 0.0) || !std::isfinite(spec.width) ||
      !std::isfinite(spec.height)) {
    throw Error(ErrorCode::validation, "grid width and height must be finite and >= 0");
  }
}

void validate(const SupplyVoltages& v) {
  for (const Volts rail : {v.v_soc, v.v_core}) {
    if (!(rail.value() > 0.0) || rail.value() > 1.5) {
      throw Error(ErrorCode::range, fmt::format("supply voltage {} V outside (0, 1.5]", rail.value()));
    }
  }
}

void validate(const TriggerPlan& plan) {
  if (plan.delay.value() < 0) throw Error(ErrorCode::validation, "trigger delay must be >= 0");
  if (plan.window.value() < 0) throw Error(ErrorCode::validation, "trigger window must be >= 0");
  if (plan.window > plan.delay) {
    throw Error(ErrorCode::validation, "trigger window must not reach before the SPI event");
  }
}

std::string_view to_string(AttemptOutcome o) {
  switch (o) {
    case AttemptOutcome::NoEffect: return "NoEffect";
    case AttemptOutcome::PayloadFault: return "PayloadFault";
    case AttemptOutcome::Crash: return "Crash";
    case AttemptOutcome::BypassSuccess: return "BypassSuccess";
    case AttemptOutcome::BootFailure: return "BootFailure";
    case AttemptOutcome::Timeout: return "Timeout";
  }
  return "NoEffect";
}

AttemptOutcome outcome_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kOutcomeCount; ++i) {
    const auto o = static_cast<AttemptOutcome>(i);
    if (to_string(o) == s) return o;
  }
  throw Error(ErrorCode::validation, fmt::format("unknown outcome '{}'", s));
}

std::string_view to_string(Winding w) { return w == Winding::CW ? "CW" : "CCW"; }

Winding winding_from_string(std::string_view s) {
  if (s == "CW") return Winding::CW;
  if (s == "CCW") return Winding::CCW;
  throw Error(ErrorCode::validation, fmt::format("unknown winding '{}'", s));
}

std::string ProbeTip::id() const { return fmt::format("{}mm-{}", diameter_mm, to_string(winding)); }

void validate(const PulseConfig& cfg) {
  const double v = cfg.voltage.value();
  if (!(v > 0.0) || v > kMaxPulseVoltage) {
    throw Error(ErrorCode::range, fmt::format("pulse voltage {} V outside (0, 500]", v));
  }
  const double w = cfg.width.value();
  if (!(w >= kMinPulseWidthNs) || w > kMaxPulseWidthNs) {
    throw Error(ErrorCode::range, fmt::format("pulse width {} ns outside [15, 960]", w));
  }
  if (cfg.probe.diameter_mm != 1.0 && cfg.probe.diameter_mm != 4.0) {
    throw Error(ErrorCode::validation,
                fmt::format("unsupported probe tip diameter {} mm", cfg.probe.diameter_mm));
  }
}

std::string_view payload_name(const PayloadKind& p) {
  struct Visitor {
    std::string_view operator()(const payload::CounterLoop&) const { return "CounterLoop"; }
    std::string_view operator()(const payload::SramPattern&) const { return "SramPattern"; }
    std::string_view operator()(const payload::ArkVerify&) const { return "ArkVerify"; }
  };
  return std::visit(Visitor{}, p);
}

void validate(const PayloadKind& p) {
  if (const auto* loop = std::get_if<payload::CounterLoop>(&p); loop && loop->iterations == 0) {
    throw Error(ErrorCode::validation, "counter loop iterations must be > 0");
  }
  if (const auto* sram = std::get_if<payload::SramPattern>(&p); sram && sram->n == 0) {
    throw Error(ErrorCode::validation, "SRAM pattern word count must be > 0");
  }
}

}  // namespace emfi
