#pragma once

// JSON mapping for the domain types. Attempt logs, configuration files and
// API bodies all share these representations.

#include <string>
#include <string_view>

#include "json.hpp"

#include "emfi/types.hpp"

namespace emfi {

using Json = nlohmann::json;

/// Attempt-log schema. Version 1 lines (no die point, device error, effective
/// delay or core rail) are still readable.
inline constexpr int kAttemptSchemaVersion = 2;

void to_json(Json& j, const StagePosition& p);
void from_json(const Json& j, StagePosition& p);
void to_json(Json& j, const DiePoint& p);
void from_json(const Json& j, DiePoint& p);
void to_json(Json& j, const GridSpec& g);
void from_json(const Json& j, GridSpec& g);
void to_json(Json& j, const ProbeTip& t);
void from_json(const Json& j, ProbeTip& t);
void to_json(Json& j, const PulseConfig& c);
void from_json(const Json& j, PulseConfig& c);
void to_json(Json& j, const SupplyVoltages& s);
void from_json(const Json& j, SupplyVoltages& s);
void to_json(Json& j, const TriggerPlan& t);
void from_json(const Json& j, TriggerPlan& t);
void to_json(Json& j, const PayloadKind& p);
void from_json(const Json& j, PayloadKind& p);
void to_json(Json& j, const SuccessStats& s);
void from_json(const Json& j, SuccessStats& s);
void to_json(Json& j, const AttemptRecord& r);
void from_json(const Json& j, AttemptRecord& r);

/// One log line (no trailing newline).
std::string serialize_record(const AttemptRecord& r);
/// Throws ParseError (with byte offset) on malformed JSON and validation
/// errors on unknown schema versions.
AttemptRecord parse_record(std::string_view line);

/// Parses JSON text, mapping syntax errors to ParseError.
Json parse_json(std::string_view text);

}  // namespace emfi

// PayloadKind is a std::variant, which argument-dependent lookup does not
// associate with namespace emfi.
template <>
struct nlohmann::adl_serializer<emfi::PayloadKind> {
  static void to_json(json& j, const emfi::PayloadKind& p) { emfi::to_json(j, p); }
  static void from_json(const json& j, emfi::PayloadKind& p) { emfi::from_json(j, p); }
};
