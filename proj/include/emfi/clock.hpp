#pragma once

#include <chrono>
#include <mutex>
#include <string>
#include <string_view>

namespace emfi {

using Duration = std::chrono::microseconds;
using TimePoint = std::chrono::time_point<std::chrono::system_clock, Duration>;

/// Time source shared by every device of a rig. Simulated rigs run on a
/// VirtualClock so that sleeps cost nothing and runs are reproducible.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimePoint now() const = 0;
  virtual void sleep_for(Duration d) = 0;
  /// Jump to an absolute time. Only meaningful for virtual clocks, where it
  /// is used to continue a resumed campaign on the original timeline.
  virtual bool resync(TimePoint) { return false; }
  virtual bool is_virtual() const { return false; }
};

class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(TimePoint start = default_epoch()) : now_(start) {}

  TimePoint now() const override;
  void sleep_for(Duration d) override;
  bool resync(TimePoint t) override;
  bool is_virtual() const override { return true; }

  /// 2024-01-01T00:00:00Z
  static TimePoint default_epoch();

 private:
  mutable std::mutex mutex_;
  TimePoint now_;
};

class WallClock final : public Clock {
 public:
  TimePoint now() const override;
  void sleep_for(Duration d) override;
};

/// UTC, ISO-8601 with microsecond precision, e.g. "2024-01-01T00:00:03.000250Z".
std::string format_iso8601(TimePoint t);
TimePoint parse_iso8601(std::string_view text);

}  // namespace emfi
