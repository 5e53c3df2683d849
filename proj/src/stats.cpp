#include "emfi/stats.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

namespace {

void check(const SuccessStats& stats) {
  if (stats.attempts == 0) throw Error(ErrorCode::undefined_rate, "success rate undefined for 0 attempts");
  if (stats.successes > stats.attempts) {
    throw Error(ErrorCode::validation,
                fmt::format("successes {} exceed attempts {}", stats.successes, stats.attempts));
  }
}

}  // namespace

double success_rate(const SuccessStats& stats) {
  check(stats);
  return static_cast<double>(stats.successes) / static_cast<double>(stats.attempts);
}

Interval wilson_interval(const SuccessStats& stats, double level) {
  check(stats);
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::validation, fmt::format("confidence level {} outside (0, 1)", level));
  }
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
  const double n = static_cast<double>(stats.attempts);
  const double p = static_cast<double>(stats.successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;

  Interval iv{std::max(0.0, center - half), std::min(1.0, center + half)};
  // Pin the closed-form boundaries so rounding never excludes the estimate.
  if (stats.successes == 0) iv.low = 0.0;
  if (stats.successes == stats.attempts) iv.high = 1.0;
  iv.low = std::min(iv.low, p);
  iv.high = std::max(iv.high, p);
  return iv;
}

std::chrono::duration<double> estimate_campaign_duration(std::uint64_t positions,
                                                         std::uint64_t attempts_per_position,
                                                         std::chrono::duration<double> cycle) {
  if (positions == 0 || attempts_per_position == 0 || !(cycle.count() > 0.0)) {
    throw Error(ErrorCode::validation, "campaign duration inputs must all be positive");
  }
  return cycle * static_cast<double>(positions) * static_cast<double>(attempts_per_position);
}

}  // namespace emfi
