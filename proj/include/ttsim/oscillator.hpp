#pragma once

#include <cstdint>
#include <stdexcept>

#include "ttsim/sim_time.hpp"

namespace ttsim {

/// Free-running crystal: nominal period t_SYS and a constant frequency
/// offset. The actual period is t_sys_nominal / (1 + drift), so a positive
/// drift runs fast.
///
/// Drift is held in parts per billion, which represents any ppm value with
/// three decimals exactly. `phase` is the fraction of the next tick already
/// accumulated, stored as a numerator over `phase_denominator()`.
struct OscillatorState {
  Duration t_sys_nominal = kNanosecond;
  std::int64_t drift_ppb = 0;
  std::uint64_t phase = 0;

  static constexpr std::int64_t kMaxDriftPpb = 10'000'000;  // 10000 ppm
  static constexpr std::int64_t kPpbScale = 1'000'000'000;

  static OscillatorState make(Duration t_sys, double drift_ppm, std::uint64_t phase_num = 0) {
    OscillatorState s;
    s.t_sys_nominal = t_sys;
    s.drift_ppb = static_cast<std::int64_t>(drift_ppm * 1000.0 + (drift_ppm >= 0 ? 0.5 : -0.5));
    s.phase = phase_num;
    s.validate();
    return s;
  }

  void validate() const {
    if (t_sys_nominal <= 0) throw std::invalid_argument("oscillator period must be positive");
    if (drift_ppb > kMaxDriftPpb || drift_ppb < -kMaxDriftPpb)
      throw std::invalid_argument("oscillator drift exceeds 10000 ppm");
    if (static_cast<__int128>(phase) >= phase_denominator())
      throw std::invalid_argument("oscillator phase must lie in [0, 1)");
  }

  double drift_ppm() const { return static_cast<double>(drift_ppb) / 1000.0; }

  // One tick expressed in (picosecond x ppb-scale) units.
  __int128 phase_denominator() const { return static_cast<__int128>(t_sys_nominal) * kPpbScale; }
  // Phase gained per picosecond of true time, same units.
  __int128 rate() const { return kPpbScale + drift_ppb; }
};

struct TickAdvance {
  std::uint64_t ticks = 0;
  OscillatorState state;
};

/// Local ticks produced over `true_dt`, carrying the fractional phase.
inline TickAdvance ticks_elapsed(const OscillatorState& osc, Duration true_dt) {
  if (true_dt < 0) throw std::invalid_argument("ticks_elapsed: negative duration");
  __int128 acc = static_cast<__int128>(true_dt) * osc.rate() + osc.phase;
  __int128 den = osc.phase_denominator();
  TickAdvance out;
  out.ticks = static_cast<std::uint64_t>(acc / den);
  out.state = osc;
  out.state.phase = static_cast<std::uint64_t>(acc % den);
  return out;
}

/// n ticks times the actual period, rounded to the nearest picosecond.
inline Duration true_duration_of_ticks(const OscillatorState& osc, std::uint64_t n) {
  __int128 num = static_cast<__int128>(n) * osc.phase_denominator();
  __int128 den = osc.rate();
  return static_cast<Duration>((2 * num + den) / (2 * den));
}

/// An oscillator started at simulation time zero. Because the rate is
/// constant, the tick count at any instant has a closed form.
class FreeRunningOscillator {
 public:
  FreeRunningOscillator() = default;
  explicit FreeRunningOscillator(OscillatorState initial) : initial_(initial) { initial_.validate(); }

  const OscillatorState& state() const { return initial_; }
  Duration t_sys() const { return initial_.t_sys_nominal; }

  std::uint64_t ticks_at(SimTime t) const {
    return ticks_elapsed(initial_, t.since_start()).ticks;
  }

  /// Earliest instant at which ticks_at() reaches n.
  SimTime time_of_tick(std::uint64_t n) const {
    __int128 need = static_cast<__int128>(n) * initial_.phase_denominator() - initial_.phase;
    if (need <= 0) return SimTime{};
    __int128 r = initial_.rate();
    return SimTime(static_cast<std::uint64_t>((need + r - 1) / r));
  }

 private:
  OscillatorState initial_{};
};

}  // namespace ttsim
