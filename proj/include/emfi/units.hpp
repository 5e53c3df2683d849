#pragma once

#include <compare>
#include <cstdint>

namespace emfi {

// Unit convention: lengths in millimeters, voltages in volts, pulse widths in
// nanoseconds, trigger delays in integer wait cycles. Each gets its own type
// so a width can never be passed where a voltage is expected.
template <typename Tag, typename Rep = double>
class Quantity {
 public:
  using rep = Rep;

  constexpr Quantity() = default;
  constexpr explicit Quantity(Rep value) : value_(value) {}

  constexpr Rep value() const { return value_; }

  constexpr auto operator<=>(const Quantity&) const = default;

  constexpr Quantity operator+(Quantity o) const { return Quantity(value_ + o.value_); }
  constexpr Quantity operator-(Quantity o) const { return Quantity(value_ - o.value_); }
  constexpr Quantity operator-() const { return Quantity(-value_); }
  constexpr Quantity operator*(Rep k) const { return Quantity(value_ * k); }
  constexpr Quantity& operator+=(Quantity o) {
    value_ += o.value_;
    return *this;
  }

 private:
  Rep value_{};
};

struct MillimetersTag {};
struct VoltsTag {};
struct NanosecondsTag {};
struct WaitCyclesTag {};
struct MmPerSecondTag {};

using Millimeters = Quantity<MillimetersTag>;
using Volts = Quantity<VoltsTag>;
using Nanoseconds = Quantity<NanosecondsTag>;
using WaitCycles = Quantity<WaitCyclesTag, std::int64_t>;
using MmPerSecond = Quantity<MmPerSecondTag>;

namespace literals {
constexpr Millimeters operator""_mm(long double v) { return Millimeters(static_cast<double>(v)); }
constexpr Millimeters operator""_mm(unsigned long long v) { return Millimeters(static_cast<double>(v)); }
constexpr Volts operator""_V(long double v) { return Volts(static_cast<double>(v)); }
constexpr Volts operator""_V(unsigned long long v) { return Volts(static_cast<double>(v)); }
constexpr Nanoseconds operator""_ns(unsigned long long v) { return Nanoseconds(static_cast<double>(v)); }
constexpr WaitCycles operator""_cycles(unsigned long long v) {
  return WaitCycles(static_cast<std::int64_t>(v));
}
}  // namespace literals

}  // namespace emfi
