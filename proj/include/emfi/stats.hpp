#pragma once

#include <chrono>
#include <cstdint>

#include "emfi/types.hpp"

namespace emfi {

struct Interval {
  double low = 0.0;
  double high = 0.0;

  bool contains(double v) const { return low <= v && v <= high; }
  double width() const { return high - low; }
};

/// successes / attempts. Throws undefined_rate when attempts == 0.
double success_rate(const SuccessStats& stats);

/// Wilson score interval at the given two-sided confidence level.
Interval wilson_interval(const SuccessStats& stats, double level);

/// Total wall time of a campaign: positions * attempts * cycle time.
std::chrono::duration<double> estimate_campaign_duration(std::uint64_t positions,
                                                         std::uint64_t attempts_per_position,
                                                         std::chrono::duration<double> cycle);

}  // namespace emfi
