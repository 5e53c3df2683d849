#pragma once

#include <mutex>

namespace emfi {

/// Safety rule shared by the pulse and motion controllers: the stage may only
/// move while the pulse generator is disarmed. motion_permitted() implies
/// !pulse_armed() at all times.
class Interlock {
 public:
  bool pulse_armed() const;
  bool motion_permitted() const;

  /// Called by the pulse controller before it sends ARM and after DISARM
  /// is acknowledged.
  void set_pulse_armed(bool armed);
  /// Operator-level lockout independent of the pulse state.
  void set_motion_locked(bool locked);

  /// Throws a safety error unless motion is permitted.
  void require_motion_permitted() const;

 private:
  mutable std::mutex mutex_;
  bool pulse_armed_ = false;
  bool motion_locked_ = false;
};

}  // namespace emfi
