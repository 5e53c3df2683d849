#include "emfi/interlock.hpp"

#include "emfi/error.hpp"

namespace emfi {

bool Interlock::pulse_armed() const {
  std::lock_guard lock(mutex_);
  return pulse_armed_;
}

bool Interlock::motion_permitted() const {
  std::lock_guard lock(mutex_);
  return !pulse_armed_ && !motion_locked_;
}

void Interlock::set_pulse_armed(bool armed) {
  std::lock_guard lock(mutex_);
  pulse_armed_ = armed;
}

void Interlock::set_motion_locked(bool locked) {
  std::lock_guard lock(mutex_);
  motion_locked_ = locked;
}

void Interlock::require_motion_permitted() const {
  std::lock_guard lock(mutex_);
  if (pulse_armed_) throw Error(ErrorCode::safety, "interlock: stage motion refused while pulse generator is armed");
  if (motion_locked_) throw Error(ErrorCode::safety, "interlock: stage motion locked out");
}

}  // namespace emfi
