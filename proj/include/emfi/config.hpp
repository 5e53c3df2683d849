#pragma once

#include <optional>
#include <string>

#include "emfi/clock.hpp"
#include "emfi/serialization.hpp"
#include "emfi/types.hpp"

namespace emfi {

enum class CampaignMode { Grid, Fixed, Sweep };

std::string_view to_string(CampaignMode m);

/// Brute force of the trigger delay at one die position.
struct DelaySweep {
  DiePoint position;
  std::int64_t lo = 0;
  std::int64_t hi = 3000;
  std::int64_t step = 1;
  std::int64_t window = 0;
  std::uint32_t attempts_per_delay = 20;
  /// Successful delays at most this far apart join one group.
  std::int64_t group_threshold = 4;

  bool operator==(const DelaySweep&) const = default;
};

struct CycleTimeouts {
  Duration spi = std::chrono::seconds(3);
  Duration output = std::chrono::seconds(2);
  Duration charge = std::chrono::seconds(1);

  bool operator==(const CycleTimeouts&) const = default;
};

/// One campaign. Positions are die coordinates; exactly one of grid, fixed
/// and sweep is set. `attempts` counts per grid position in grid mode and in
/// total in fixed mode.
struct CampaignConfig {
  std::string name = "campaign";
  PayloadKind payload;
  std::optional<GridSpec> grid;
  std::optional<DiePoint> fixed;
  std::optional<DelaySweep> sweep;
  std::uint32_t attempts = 100;
  PulseConfig pulse;
  SupplyVoltages supply;
  TriggerPlan trigger;
  CycleTimeouts timeouts;
  std::uint64_t seed = 1;
  double feed_mm_s = 10.0;
  /// Whether boot failures, timeouts and device errors enter the
  /// success-rate denominator.
  bool count_error_attempts = true;
  /// Allow grid points beyond the die edge (border scans).
  bool allow_outside_die = false;
  /// Grid mode: follow the coarse scan with a finer scan around its maximum.
  std::optional<double> refine_pitch;

  bool operator==(const CampaignConfig&) const = default;

  CampaignMode mode() const;
  void validate() const;
};

void to_json(Json& j, const DelaySweep& s);
void from_json(const Json& j, DelaySweep& s);
void to_json(Json& j, const CampaignConfig& c);
void from_json(const Json& j, CampaignConfig& c);

/// Parses a campaign document; validation errors name the offending field.
CampaignConfig parse_campaign_config(const Json& j);

}  // namespace emfi
