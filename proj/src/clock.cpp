#include "emfi/clock.hpp"

#include <ctime>
#include <thread>

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

TimePoint VirtualClock::now() const {
  std::lock_guard lock(mutex_);
  return now_;
}

void VirtualClock::sleep_for(Duration d) {
  if (d <= Duration::zero()) return;
  std::lock_guard lock(mutex_);
  now_ += d;
}

bool VirtualClock::resync(TimePoint t) {
  std::lock_guard lock(mutex_);
  now_ = t;
  return true;
}

TimePoint VirtualClock::default_epoch() {
  // 2024-01-01T00:00:00Z
  return TimePoint(std::chrono::duration_cast<Duration>(std::chrono::seconds(1704067200)));
}

TimePoint WallClock::now() const {
  return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
}

void WallClock::sleep_for(Duration d) { std::this_thread::sleep_for(d); }

std::string format_iso8601(TimePoint t) {
  const auto since_epoch = t.time_since_epoch().count();
  auto secs = since_epoch / 1'000'000;
  auto micros = since_epoch % 1'000'000;
  if (micros < 0) {
    micros += 1'000'000;
    secs -= 1;
  }
  const std::time_t tt = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, micros);
}

namespace {

int read_digits(std::string_view text, std::size_t pos, std::size_t count) {
  if (pos + count > text.size()) throw ParseError(text.size(), "truncated timestamp");
  int v = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    if (text[i] < '0' || text[i] > '9') throw ParseError(i, "expected digit in timestamp");
    v = v * 10 + (text[i] - '0');
  }
  return v;
}

void expect_char(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) {
    throw ParseError(pos, fmt::format("expected '{}' in timestamp", c));
  }
}

}  // namespace

TimePoint parse_iso8601(std::string_view text) {
  std::tm tm{};
  tm.tm_year = read_digits(text, 0, 4) - 1900;
  expect_char(text, 4, '-');
  tm.tm_mon = read_digits(text, 5, 2) - 1;
  expect_char(text, 7, '-');
  tm.tm_mday = read_digits(text, 8, 2);
  expect_char(text, 10, 'T');
  tm.tm_hour = read_digits(text, 11, 2);
  expect_char(text, 13, ':');
  tm.tm_min = read_digits(text, 14, 2);
  expect_char(text, 16, ':');
  tm.tm_sec = read_digits(text, 17, 2);
  std::size_t pos = 19;
  long micros = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 6) {
        micros = micros * 10 + (text[pos] - '0');
        ++digits;
      }
      ++pos;
    }
    if (digits == 0) throw ParseError(pos, "empty fraction in timestamp");
    for (; digits < 6; ++digits) micros *= 10;
  }
  expect_char(text, pos, 'Z');
  if (pos + 1 != text.size()) throw ParseError(pos + 1, "trailing characters after timestamp");
  const std::time_t secs = timegm(&tm);
  return TimePoint(Duration(static_cast<std::int64_t>(secs) * 1'000'000 + micros));
}

}  // namespace emfi
