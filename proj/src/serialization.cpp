#include "emfi/serialization.hpp"

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

void to_json(Json& j, const StagePosition& p) { j = Json{{"x", p.x}, {"y", p.y}, {"z", p.z}}; }

void from_json(const Json& j, StagePosition& p) {
  p.x = j.at("x").get<double>();
  p.y = j.at("y").get<double>();
  p.z = j.at("z").get<double>();
}

void to_json(Json& j, const DiePoint& p) { j = Json{{"x", p.x}, {"y", p.y}}; }

void from_json(const Json& j, DiePoint& p) {
  p.x = j.at("x").get<double>();
  p.y = j.at("y").get<double>();
}

void to_json(Json& j, const GridSpec& g) {
  j = Json{{"origin", g.origin}, {"width", g.width}, {"height", g.height}, {"pitch", g.pitch}, {"z", g.z}};
}

void from_json(const Json& j, GridSpec& g) {
  g.origin = j.value("origin", StagePosition{});
  g.width = j.at("width").get<double>();
  g.height = j.at("height").get<double>();
  g.pitch = j.at("pitch").get<double>();
  g.z = j.value("z", 0.0);
}

void to_json(Json& j, const ProbeTip& t) {
  j = Json{{"diameter_mm", t.diameter_mm}, {"winding", std::string(to_string(t.winding))}};
}

void from_json(const Json& j, ProbeTip& t) {
  t.diameter_mm = j.at("diameter_mm").get<double>();
  t.winding = winding_from_string(j.at("winding").get<std::string>());
}

void to_json(Json& j, const PulseConfig& c) {
  j = Json{{"voltage", c.voltage.value()}, {"width_ns", c.width.value()}, {"tip", c.probe}};
}

void from_json(const Json& j, PulseConfig& c) {
  c.voltage = Volts(j.at("voltage").get<double>());
  c.width = Nanoseconds(j.at("width_ns").get<double>());
  c.probe = j.value("tip", ProbeTip{});
}

void to_json(Json& j, const SupplyVoltages& s) {
  j = Json{{"v_soc", s.v_soc.value()}, {"v_core", s.v_core.value()}};
}

void from_json(const Json& j, SupplyVoltages& s) {
  s.v_soc = Volts(j.at("v_soc").get<double>());
  s.v_core = Volts(j.value("v_core", SupplyVoltages{}.v_core.value()));
}

void to_json(Json& j, const TriggerPlan& t) {
  j = Json{{"delay", t.delay.value()}, {"window", t.window.value()}};
}

void from_json(const Json& j, TriggerPlan& t) {
  t.delay = WaitCycles(j.at("delay").get<std::int64_t>());
  t.window = WaitCycles(j.value("window", std::int64_t{0}));
}

void to_json(Json& j, const PayloadKind& p) {
  j = Json{{"kind", std::string(payload_name(p))}};
  if (const auto* loop = std::get_if<payload::CounterLoop>(&p)) {
    j["iterations"] = loop->iterations;
  } else if (const auto* sram = std::get_if<payload::SramPattern>(&p)) {
    j["word"] = sram->word;
    j["n"] = sram->n;
  }
}

void from_json(const Json& j, PayloadKind& p) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "CounterLoop") {
    p = payload::CounterLoop{j.value("iterations", payload::CounterLoop{}.iterations)};
  } else if (kind == "SramPattern") {
    p = payload::SramPattern{j.value("word", payload::SramPattern{}.word),
                             j.value("n", payload::SramPattern{}.n)};
  } else if (kind == "ArkVerify") {
    p = payload::ArkVerify{};
  } else {
    throw Error(ErrorCode::validation, fmt::format("unknown payload kind '{}'", kind));
  }
}

void to_json(Json& j, const SuccessStats& s) {
  j = Json{{"successes", s.successes}, {"attempts", s.attempts}};
}

void from_json(const Json& j, SuccessStats& s) {
  s.successes = j.at("successes").get<std::uint64_t>();
  s.attempts = j.at("attempts").get<std::uint64_t>();
}

void to_json(Json& j, const AttemptRecord& r) {
  j = Json{{"v", kAttemptSchemaVersion},
           {"seq", r.seq},
           {"ts", format_iso8601(r.timestamp)},
           {"pos", r.position},
           {"die", r.die},
           {"pulse", r.pulse},
           {"supply", r.supply},
           {"trigger", r.trigger},
           {"effective_delay", r.effective_delay ? Json(r.effective_delay->value()) : Json(nullptr)},
           {"payload", r.payload},
           {"outcome", std::string(to_string(r.outcome))},
           {"output", r.output},
           {"error", r.device_error}};
}

void from_json(const Json& j, AttemptRecord& r) {
  const int version = j.at("v").get<int>();
  if (version != 1 && version != 2) {
    throw Error(ErrorCode::validation, fmt::format("unsupported attempt schema version {}", version));
  }
  r.seq = j.at("seq").get<std::uint64_t>();
  r.timestamp = parse_iso8601(j.at("ts").get<std::string>());
  r.position = j.at("pos").get<StagePosition>();
  r.pulse = j.at("pulse").get<PulseConfig>();
  r.supply = j.at("supply").get<SupplyVoltages>();
  r.trigger = j.at("trigger").get<TriggerPlan>();
  r.payload = j.at("payload").get<PayloadKind>();
  r.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  r.output = j.value("output", std::string());
  if (version == 1) {
    // v1 logged only stage coordinates; they stand in for the die point so
    // that positions stay distinct in scan results.
    r.die = DiePoint{r.position.x, r.position.y};
    r.effective_delay.reset();
    r.device_error.clear();
    return;
  }
  r.die = j.at("die").get<DiePoint>();
  const auto& eff = j.at("effective_delay");
  r.effective_delay = eff.is_null() ? std::nullopt : std::optional(WaitCycles(eff.get<std::int64_t>()));
  r.device_error = j.value("error", std::string());
}

std::string serialize_record(const AttemptRecord& r) { return Json(r).dump(); }

Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, "invalid JSON");
  }
}

AttemptRecord parse_record(std::string_view line) {
  const Json j = parse_json(line);
  try {
    return j.get<AttemptRecord>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, fmt::format("malformed attempt record: {}", e.what()));
  }
}

}  // namespace emfi
