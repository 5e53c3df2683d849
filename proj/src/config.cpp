#include "emfi/config.hpp"

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

std::string_view to_string(CampaignMode m) {
  switch (m) {
    case CampaignMode::Grid: return "grid";
    case CampaignMode::Fixed: return "fixed";
    case CampaignMode::Sweep: return "sweep";
  }
  return "grid";
}

CampaignMode CampaignConfig::mode() const {
  const int active = int(grid.has_value()) + int(fixed.has_value()) + int(sweep.has_value());
  if (active != 1) {
    throw Error(ErrorCode::validation, "campaign needs exactly one of grid, fixed or sweep");
  }
  if (grid) return CampaignMode::Grid;
  if (fixed) return CampaignMode::Fixed;
  return CampaignMode::Sweep;
}

void CampaignConfig::validate() const {
  const CampaignMode m = mode();
  emfi::validate(payload);
  emfi::validate(pulse);
  emfi::validate(supply);
  emfi::validate(trigger);
  if (!(feed_mm_s > 0.0)) throw Error(ErrorCode::validation, "feed must be > 0");
  for (const auto d : {timeouts.spi, timeouts.output, timeouts.charge}) {
    if (d <= Duration::zero()) throw Error(ErrorCode::validation, "cycle timeouts must be > 0");
  }
  if (m != CampaignMode::Sweep && attempts == 0) {
    throw Error(ErrorCode::validation, "attempts must be > 0");
  }
  if (m != CampaignMode::Grid && !std::holds_alternative<payload::ArkVerify>(payload)) {
    throw Error(ErrorCode::validation, fmt::format("{} campaigns need the ArkVerify payload", to_string(m)));
  }
  if (grid) {
    emfi::validate(*grid);
    if (refine_pitch && !(*refine_pitch > 0.0 && *refine_pitch < grid->pitch)) {
      throw Error(ErrorCode::validation, "refine pitch must be positive and finer than the grid pitch");
    }
  } else if (refine_pitch) {
    throw Error(ErrorCode::validation, "refine pitch applies to grid campaigns only");
  }
  if (sweep) {
    if (sweep->step <= 0) throw Error(ErrorCode::validation, "sweep step must be > 0");
    if (sweep->attempts_per_delay == 0) throw Error(ErrorCode::validation, "attempts per delay must be > 0");
    if (sweep->window < 0) throw Error(ErrorCode::validation, "sweep window must be >= 0");
    if (sweep->lo <= sweep->hi && (sweep->lo < 0 || sweep->window > sweep->lo)) {
      throw Error(ErrorCode::validation, "sweep range must start at or after its window");
    }
    if (sweep->group_threshold < 0) throw Error(ErrorCode::validation, "group threshold must be >= 0");
  }
}

void to_json(Json& j, const DelaySweep& s) {
  j = Json{{"position", s.position},
           {"lo", s.lo},
           {"hi", s.hi},
           {"step", s.step},
           {"window", s.window},
           {"attempts_per_delay", s.attempts_per_delay},
           {"group_threshold", s.group_threshold}};
}

void from_json(const Json& j, DelaySweep& s) {
  const DelaySweep d;
  s.position = j.at("position").get<DiePoint>();
  s.lo = j.value("lo", d.lo);
  s.hi = j.value("hi", d.hi);
  s.step = j.value("step", d.step);
  s.window = j.value("window", d.window);
  s.attempts_per_delay = j.value("attempts_per_delay", d.attempts_per_delay);
  s.group_threshold = j.value("group_threshold", d.group_threshold);
}

namespace {

std::int64_t to_ms(Duration d) { return std::chrono::duration_cast<std::chrono::milliseconds>(d).count(); }

}  // namespace

void to_json(Json& j, const CampaignConfig& c) {
  j = Json{{"name", c.name},
           {"payload", c.payload},
           {"attempts", c.attempts},
           {"pulse", c.pulse},
           {"supply", c.supply},
           {"trigger", c.trigger},
           {"timeouts",
            {{"spi_ms", to_ms(c.timeouts.spi)},
             {"output_ms", to_ms(c.timeouts.output)},
             {"charge_ms", to_ms(c.timeouts.charge)}}},
           {"seed", c.seed},
           {"feed_mm_s", c.feed_mm_s},
           {"count_error_attempts", c.count_error_attempts},
           {"allow_outside_die", c.allow_outside_die}};
  if (c.grid) j["grid"] = *c.grid;
  if (c.fixed) j["fixed"] = *c.fixed;
  if (c.sweep) j["sweep"] = *c.sweep;
  if (c.refine_pitch) j["refine_pitch"] = *c.refine_pitch;
}

void from_json(const Json& j, CampaignConfig& c) {
  const CampaignConfig d;
  c.name = j.value("name", d.name);
  c.payload = j.contains("payload") ? j.at("payload").get<PayloadKind>() : d.payload;
  c.grid = j.contains("grid") ? std::optional(j.at("grid").get<GridSpec>()) : std::nullopt;
  c.fixed = j.contains("fixed") ? std::optional(j.at("fixed").get<DiePoint>()) : std::nullopt;
  c.sweep = j.contains("sweep") ? std::optional(j.at("sweep").get<DelaySweep>()) : std::nullopt;
  c.attempts = j.value("attempts", d.attempts);
  c.pulse = j.value("pulse", d.pulse);
  c.supply = j.value("supply", d.supply);
  c.trigger = j.value("trigger", d.trigger);
  c.timeouts = d.timeouts;
  if (j.contains("timeouts")) {
    const auto& t = j.at("timeouts");
    c.timeouts.spi = std::chrono::milliseconds(t.value("spi_ms", to_ms(d.timeouts.spi)));
    c.timeouts.output = std::chrono::milliseconds(t.value("output_ms", to_ms(d.timeouts.output)));
    c.timeouts.charge = std::chrono::milliseconds(t.value("charge_ms", to_ms(d.timeouts.charge)));
  }
  c.seed = j.value("seed", d.seed);
  c.feed_mm_s = j.value("feed_mm_s", d.feed_mm_s);
  c.count_error_attempts = j.value("count_error_attempts", d.count_error_attempts);
  c.allow_outside_die = j.value("allow_outside_die", d.allow_outside_die);
  c.refine_pitch = j.contains("refine_pitch") ? std::optional(j.at("refine_pitch").get<double>()) : std::nullopt;
}

CampaignConfig parse_campaign_config(const Json& j) {
  CampaignConfig c;
  try {
    c = j.get<CampaignConfig>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, fmt::format("malformed campaign config: {}", e.what()));
  }
  c.validate();
  return c;
}

}  // namespace emfi
