#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ttsim {

// Signed span of simulated time in picoseconds.
using Duration = std::int64_t;

inline constexpr Duration kPicosecond = 1;
inline constexpr Duration kNanosecond = 1'000;
inline constexpr Duration kMicrosecond = 1'000'000;
inline constexpr Duration kMillisecond = 1'000'000'000;
inline constexpr Duration kSecond = 1'000'000'000'000;

// Point on the global "true" timeline, picoseconds since simulation start.
struct SimTime {
  std::uint64_t ticks = 0;

  constexpr SimTime() = default;
  constexpr explicit SimTime(std::uint64_t t) : ticks(t) {}

  static constexpr SimTime from(Duration d) {
    if (d < 0) throw std::logic_error("SimTime cannot be negative");
    return SimTime(static_cast<std::uint64_t>(d));
  }

  constexpr Duration since_start() const { return static_cast<Duration>(ticks); }

  friend constexpr auto operator<=>(SimTime, SimTime) = default;

  friend constexpr SimTime operator+(SimTime t, Duration d) {
    return SimTime::from(static_cast<Duration>(t.ticks) + d);
  }
  friend constexpr Duration operator-(SimTime a, SimTime b) {
    return static_cast<Duration>(a.ticks) - static_cast<Duration>(b.ticks);
  }
};

inline constexpr double to_us(Duration d) { return static_cast<double>(d) / kMicrosecond; }

// Parses "100ns", "24.576ms", "3 ms", "1s", "250" (bare number = picoseconds).
// Decimal fractions are resolved exactly down to the picosecond.
inline Duration parse_duration(std::string_view text) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
  };
  std::string_view s = trim(text);
  if (s.empty()) throw std::invalid_argument("empty duration");

  bool negative = false;
  if (s.front() == '-' || s.front() == '+') {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  std::size_t pos = 0;
  __int128 whole = 0;
  __int128 frac = 0;
  __int128 frac_scale = 1;
  bool any_digit = false;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    whole = whole * 10 + (s[pos] - '0');
    ++pos;
    any_digit = true;
  }
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      frac = frac * 10 + (s[pos] - '0');
      frac_scale *= 10;
      ++pos;
      any_digit = true;
    }
  }
  if (!any_digit) throw std::invalid_argument("bad duration: " + std::string(text));
  std::string_view unit = trim(s.substr(pos));

  Duration scale = 0;
  if (unit.empty() || unit == "ps") scale = kPicosecond;
  else if (unit == "ns") scale = kNanosecond;
  else if (unit == "us") scale = kMicrosecond;
  else if (unit == "ms") scale = kMillisecond;
  else if (unit == "s") scale = kSecond;
  else throw std::invalid_argument("bad duration unit: " + std::string(text));

  __int128 frac_ps = frac * scale;
  if (frac_ps % frac_scale != 0)
    throw std::invalid_argument("duration finer than 1 ps: " + std::string(text));
  __int128 total = whole * scale + frac_ps / frac_scale;
  if (total > INT64_MAX) throw std::invalid_argument("duration overflow: " + std::string(text));
  return negative ? -static_cast<Duration>(total) : static_cast<Duration>(total);
}

}  // namespace ttsim
