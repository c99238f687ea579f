#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttsim/kernel.hpp"
#include "ttsim/rational.hpp"
#include "ttsim/sim_time.hpp"

namespace ttsim::ttcan {

// Local_Time register: 24 integer NTU bits and 3 fractional bits.
inline constexpr int kFracBits = 3;
inline constexpr int kIntBits = 24;
inline constexpr int kWidth = kIntBits + kFracBits;
inline constexpr std::int64_t kUnitsPerNtu = std::int64_t{1} << kFracBits;
inline constexpr std::uint32_t kModulus = std::uint32_t{1} << kWidth;
inline constexpr std::uint32_t kMask = kModulus - 1;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value of a wrapping Local_Time / Global_Time register, in units of NTU/8.
struct NtuTime {
  std::uint32_t raw = 0;

  static constexpr NtuTime from_units(std::int64_t units) {
    std::int64_t m = units % static_cast<std::int64_t>(kModulus);
    if (m < 0) m += kModulus;
    return NtuTime{static_cast<std::uint32_t>(m)};
  }
  static constexpr NtuTime from_ntu(std::int64_t ntu) { return from_units(ntu * kUnitsPerNtu); }

  constexpr double ntu() const { return static_cast<double>(raw) / kUnitsPerNtu; }

  friend constexpr bool operator==(NtuTime, NtuTime) = default;
};

/// a - b on the wrapping register, mapped into [-2^26, 2^26).
constexpr std::int32_t wrap_diff(NtuTime a, NtuTime b) {
  std::uint32_t d = (a.raw - b.raw) & kMask;
  if (d >= kModulus / 2) return static_cast<std::int32_t>(d) - static_cast<std::int32_t>(kModulus);
  return static_cast<std::int32_t>(d);
}

/// a - b assuming a is at or after b (forward distance on the ring).
constexpr std::uint32_t wrap_forward(NtuTime a, NtuTime b) { return (a.raw - b.raw) & kMask; }

constexpr NtuTime operator+(NtuTime t, std::int64_t units) {
  return NtuTime::from_units(static_cast<std::int64_t>(t.raw) + units);
}
constexpr NtuTime operator-(NtuTime t, std::int64_t units) { return t + (-units); }

/// Fixed-point local timebase: Local_Time counts NTU/8 steps, one NTU lasts
/// TUR oscillator ticks. The register wraps; `units()` keeps the unbounded
/// count for the simulator's bookkeeping.
class NtuClock {
 public:
  NtuClock() = default;
  NtuClock(Rational tur, Duration t_sys) : tur_(tur), t_sys_(t_sys) {
    if (!tur_.positive()) throw ConfigError("TUR must be positive");
    if (t_sys_ <= 0) throw ConfigError("t_SYS must be positive");
  }

  const Rational& tur() const { return tur_; }
  Duration t_sys() const { return t_sys_; }
  /// NTU = TUR * t_SYS (nominal oscillator period), in picoseconds.
  Rational ntu_length() const { return tur_ * Rational(t_sys_); }

  NtuTime local_time() const { return NtuTime::from_units(units_); }
  std::int64_t units() const { return units_; }
  std::uint64_t carry() const { return carry_; }

  /// Counts `n` oscillator ticks.
  void advance(std::uint64_t n) {
    __int128 total = static_cast<__int128>(n) * units_per_tick_num() + carry_;
    units_ += static_cast<std::int64_t>(total / tur_.num());
    carry_ = static_cast<std::uint64_t>(total % tur_.num());
  }

  /// Ticks still needed until units() reaches `target` (0 if already there).
  std::uint64_t ticks_until(std::int64_t target) const {
    if (target <= units_) return 0;
    __int128 need = static_cast<__int128>(target - units_) * tur_.num() - carry_;
    if (need <= 0) return 0;
    __int128 per = units_per_tick_num();
    return static_cast<std::uint64_t>((need + per - 1) / per);
  }

  void set_tur(Rational tur) {
    if (!tur.positive()) throw ConfigError("TUR must be positive");
    carry_ = static_cast<std::uint64_t>(static_cast<__int128>(carry_) * tur.num() / tur_.num());
    tur_ = tur;
  }

  /// Moves Local_Time by a signed number of NTU/8 units.
  void step(std::int64_t delta_units) { units_ += delta_units; }

  void set_local_time(NtuTime value) { units_ += wrap_diff(value, local_time()); }

 private:
  // Units gained per tick are 8q/p when TUR = p/q.
  __int128 units_per_tick_num() const { return static_cast<__int128>(kUnitsPerNtu) * tur_.den(); }

  Rational tur_{16};
  Duration t_sys_ = kNanosecond;
  std::int64_t units_ = 0;
  std::uint64_t carry_ = 0;
};

struct TtcanNodeState {
  NtuClock clock;
  NtuTime sync_mark{};
  NtuTime ref_mark{};
  NtuTime ref_mark_previous{};
  NtuTime master_ref_mark{};
  NtuTime master_ref_mark_previous{};
  std::int32_t local_offset = 0;
  std::uint32_t references_seen = 0;
  bool time_master = false;
};

enum class CorrectionStatus : std::uint8_t {
  Applied,
  Bootstrap,        // no previous marks yet
  SkippedZeroSpan,  // master mark difference zero or negative
  Rejected,         // df <= 0
  WithinDeadband,   // gap inside quantization, rate left alone
};

inline const char* to_string(CorrectionStatus s) {
  switch (s) {
    case CorrectionStatus::Applied: return "applied";
    case CorrectionStatus::Bootstrap: return "bootstrap";
    case CorrectionStatus::SkippedZeroSpan: return "skipped-zero-span";
    case CorrectionStatus::Rejected: return "rejected";
    case CorrectionStatus::WithinDeadband: return "within-deadband";
  }
  return "?";
}

/// Latches Local_Time at the SOF sample point. Only a reference frame
/// moves Ref_Mark.
inline TtcanNodeState capture_sync_mark(TtcanNodeState s, bool reference_frame) {
  s.sync_mark = s.clock.local_time();
  if (reference_frame) {
    s.ref_mark_previous = s.ref_mark;
    s.ref_mark = s.sync_mark;
  }
  return s;
}

/// Cycle_Time = Local_Time - Ref_Mark, in NTU/8 units. Negative right
/// after a master resynchronization with a negative T_gap.
inline std::int32_t cycle_time(const TtcanNodeState& s) {
  return wrap_diff(s.clock.local_time(), s.ref_mark);
}

inline NtuTime global_time(const TtcanNodeState& s) {
  return s.clock.local_time() + s.local_offset;
}

inline std::int32_t local_offset(NtuTime ref_mark, NtuTime master_ref_mark) {
  return wrap_diff(master_ref_mark, ref_mark);
}

/// df = (Ref_Mark - Ref_Mark_prev) / (Master_Ref_Mark - Master_Ref_Mark_prev).
inline std::optional<Rational> drift_factor(const TtcanNodeState& s) {
  if (s.references_seen < 2) return std::nullopt;
  std::int64_t master_span = wrap_diff(s.master_ref_mark, s.master_ref_mark_previous);
  if (master_span <= 0) return std::nullopt;
  std::int64_t local_span = wrap_diff(s.ref_mark, s.ref_mark_previous);
  return Rational(local_span, master_span);
}

struct ClockCorrection {
  NtuClock clock;
  CorrectionStatus status = CorrectionStatus::Applied;
};

/// TUR = df * TUR_previous; NTU follows from NTU = TUR * t_SYS.
inline ClockCorrection apply_drift_correction(NtuClock clock, const Rational& df) {
  if (!df.positive()) return {clock, CorrectionStatus::Rejected};
  clock.set_tur(df * clock.tur());
  return {clock, CorrectionStatus::Applied};
}

/// Exponential smoothing of df toward 1: weight 1 applies df unchanged.
inline Rational smooth_drift_factor(const Rational& df, const Rational& weight) {
  return Rational(1) + (df - Rational(1)) * weight;
}

// ---------------------------------------------------------------------------
// System matrix

enum class WindowKind : std::uint8_t { Reference, Exclusive, Arbitration, Free };

inline const char* to_string(WindowKind k) {
  switch (k) {
    case WindowKind::Reference: return "reference";
    case WindowKind::Exclusive: return "exclusive";
    case WindowKind::Arbitration: return "arbitration";
    case WindowKind::Free: return "free";
  }
  return "?";
}

inline constexpr std::uint16_t kReferenceId = 0;

struct TimeWindow {
  WindowKind kind = WindowKind::Free;
  std::int64_t start_offset = 0;  // NTU from basic-cycle start
  std::int64_t length = 0;        // NTU
  std::optional<std::uint16_t> owner_message;

  std::int64_t end() const { return start_offset + length; }
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

struct WindowSpec {
  WindowKind kind = WindowKind::Exclusive;
  std::int64_t start_offset = 0;
  std::int64_t length = 0;
  std::optional<std::uint16_t> owner_message;
  std::optional<std::size_t> row;  // absent: every row
};

struct SystemMatrix {
  std::int64_t t_cycle = 0;  // NTU
  std::vector<std::vector<TimeWindow>> rows;

  std::size_t row_count() const { return rows.size(); }
};

class MatrixError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

inline std::string describe(const TimeWindow& w) {
  std::string s = std::string(to_string(w.kind)) + "[" + std::to_string(w.start_offset) + "," +
                  std::to_string(w.end()) + ")";
  if (w.owner_message) s += " id " + std::to_string(*w.owner_message);
  return s;
}

/// Validates window specs and lays them into rows, each starting with the
/// reference-message window at offset 0.
inline SystemMatrix build_system_matrix(std::span<const WindowSpec> specs, std::int64_t t_cycle,
                                        std::size_t row_count, std::int64_t reference_length) {
  if (t_cycle <= 0) throw MatrixError("basic cycle length must be positive");
  if (row_count == 0) throw MatrixError("system matrix needs at least one row");
  if (reference_length <= 0 || reference_length > t_cycle)
    throw MatrixError("reference window does not fit the basic cycle");

  SystemMatrix m;
  m.t_cycle = t_cycle;
  m.rows.assign(row_count, {TimeWindow{WindowKind::Reference, 0, reference_length, kReferenceId}});

  for (const auto& spec : specs) {
    TimeWindow w{spec.kind, spec.start_offset, spec.length, spec.owner_message};
    if (spec.kind == WindowKind::Reference) throw MatrixError("reference windows are implicit");
    if (spec.length <= 0) throw MatrixError("window " + describe(w) + " has non-positive length");
    if (spec.start_offset < 0 || w.end() > t_cycle)
      throw MatrixError("window " + describe(w) + " overflows basic cycle of " +
                        std::to_string(t_cycle) + " NTU");
    if (spec.kind == WindowKind::Exclusive && !spec.owner_message)
      throw MatrixError("exclusive window " + describe(w) + " has no owner message");
    if (spec.kind != WindowKind::Exclusive) w.owner_message.reset();
    if (spec.row && *spec.row >= row_count)
      throw MatrixError("window " + describe(w) + " names row " + std::to_string(*spec.row) +
                        " beyond row count " + std::to_string(row_count));
    for (std::size_t r = 0; r < row_count; ++r) {
      if (spec.row && *spec.row != r) continue;
      m.rows[r].push_back(w);
    }
  }

  for (std::size_t r = 0; r < row_count; ++r) {
    auto& row = m.rows[r];
    std::stable_sort(row.begin(), row.end(), [](const TimeWindow& a, const TimeWindow& b) {
      return a.start_offset < b.start_offset;
    });
    for (std::size_t i = 1; i < row.size(); ++i) {
      if (row[i].start_offset < row[i - 1].end()) {
        throw MatrixError("row " + std::to_string(r) + ": window " + describe(row[i]) +
                          " overlaps " + describe(row[i - 1]));
      }
    }
  }
  return m;
}

/// Window whose half-open span [start, start+length) holds `cycle_units`
/// (Cycle_Time in NTU/8 units).
inline std::optional<TimeWindow> window_at(const SystemMatrix& m, std::int64_t cycle_units,
                                           std::size_t row) {
  if (row >= m.rows.size()) throw std::out_of_range("system matrix row");
  for (const auto& w : m.rows[row]) {
    if (cycle_units >= w.start_offset * kUnitsPerNtu && cycle_units < w.end() * kUnitsPerNtu)
      return w;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// CAN frames and bus timing

struct CanFrame {
  std::uint16_t id = 0;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, 8> data{};
  NodeId src = kNoNode;

  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

inline constexpr std::uint16_t kMaxStandardId = 0x7ff;

/// Lowest identifier wins the bitwise arbitration.
inline CanFrame arbitrate(std::span<const CanFrame> contenders) {
  if (contenders.empty()) throw ConfigError("arbitration needs at least one contender");
  const CanFrame* best = &contenders[0];
  for (std::size_t i = 1; i < contenders.size(); ++i) {
    if (contenders[i].id < best->id) best = &contenders[i];
  }
  for (std::size_t i = 0; i < contenders.size(); ++i) {
    for (std::size_t j = i + 1; j < contenders.size(); ++j) {
      if (contenders[i].id == contenders[j].id)
        throw ConfigError("duplicate CAN identifier " + std::to_string(contenders[i].id) +
                          " in arbitration");
    }
  }
  return *best;
}

// Exact counts the stuff bits of the actual bit stream, so frame length
// depends on identifier and data.
enum class StuffingMode : std::uint8_t { Nominal, WorstCase, Exact };

/// Bits on the wire for a standard (11-bit id) data frame followed by the
/// 3-bit intermission: SOF, id, RTR, IDE, r0, DLC, data, CRC, CRC delimiter,
/// ACK slot and delimiter, EOF.
inline std::int64_t can_frame_bits(std::size_t payload_len, StuffingMode stuffing) {
  if (payload_len > 8) throw ConfigError("CAN payload exceeds 8 bytes");
  const std::int64_t data_bits = 8 * static_cast<std::int64_t>(payload_len);
  std::int64_t bits = 1 + 11 + 1 + 1 + 1 + 4 + data_bits + 15 + 1 + 2 + 7 + 3;
  if (stuffing != StuffingMode::Nominal) {  // Exact is bounded by the worst case
    const std::int64_t stuffable = 1 + 11 + 1 + 1 + 1 + 4 + data_bits + 15;
    bits += (stuffable - 1) / 4;
  }
  return bits;
}

/// CRC-15 (polynomial 0x4599) over a bit sequence, MSB first.
inline std::uint16_t can_crc15(std::span<const std::uint8_t> bits) {
  std::uint16_t crc = 0;
  for (std::uint8_t b : bits) {
    const bool next = (b != 0) != (((crc >> 14) & 1u) != 0);
    crc = static_cast<std::uint16_t>((crc << 1) & 0x7fff);
    if (next) crc ^= 0x4599;
  }
  return crc;
}

/// Stuffable part of a data frame: SOF through the CRC sequence.
inline std::vector<std::uint8_t> can_stuffable_bits(const CanFrame& f) {
  if (f.dlc > 8) throw ConfigError("CAN payload exceeds 8 bytes");
  std::vector<std::uint8_t> bits;
  auto put = [&](std::uint32_t v, int n) {
    for (int i = n - 1; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((v >> i) & 1u));
  };
  put(0, 1);
  put(f.id & kMaxStandardId, 11);
  put(0, 3);  // RTR, IDE, r0
  put(f.dlc, 4);
  for (std::size_t i = 0; i < f.dlc; ++i) put(f.data[i], 8);
  put(can_crc15(bits), 15);
  return bits;
}

/// Number of stuff bits the transmitter inserts into `bits`.
inline std::int64_t can_stuff_count(std::span<const std::uint8_t> bits) {
  std::int64_t stuffed = 0;
  int run = 0;
  std::uint8_t last = 2;
  for (std::uint8_t b : bits) {
    if (b == last) {
      ++run;
    } else {
      last = b;
      run = 1;
    }
    if (run == 5) {
      ++stuffed;
      last = static_cast<std::uint8_t>(1 - b);
      run = 1;
    }
  }
  return stuffed;
}

inline std::int64_t can_frame_bits(const CanFrame& f, StuffingMode stuffing) {
  if (stuffing != StuffingMode::Exact) return can_frame_bits(f.dlc, stuffing);
  return can_frame_bits(f.dlc, StuffingMode::Nominal) + can_stuff_count(can_stuffable_bits(f));
}

inline Duration can_frame_duration(const CanFrame& f, StuffingMode stuffing, std::int64_t bitrate_bps) {
  if (bitrate_bps <= 0) throw ConfigError("CAN bit rate must be positive");
  __int128 ps = static_cast<__int128>(can_frame_bits(f, stuffing)) * kSecond;
  return static_cast<Duration>((ps + bitrate_bps - 1) / bitrate_bps);
}

inline Duration can_frame_duration(std::size_t payload_len, StuffingMode stuffing,
                                   std::int64_t bitrate_bps) {
  if (bitrate_bps <= 0) throw ConfigError("CAN bit rate must be positive");
  __int128 ps = static_cast<__int128>(can_frame_bits(payload_len, stuffing)) * kSecond;
  return static_cast<Duration>((ps + bitrate_bps - 1) / bitrate_bps);
}

// ---------------------------------------------------------------------------
// Reference message

/// Sent by the time master with CAN id 0 and an 8-byte payload:
/// bytes 0-3 Master_Ref_Mark (little endian, 27 bits used), byte 4 cycle
/// index, bytes 5-7 T_gap in NTU/8 units (24-bit two's complement).
struct ReferenceMessage {
  NtuTime master_ref_mark{};
  std::uint8_t cycle_index = 0;
  std::int32_t t_gap = 0;

  friend bool operator==(const ReferenceMessage&, const ReferenceMessage&) = default;
};

inline CanFrame encode_reference(const ReferenceMessage& r, NodeId src) {
  if (r.t_gap >= (1 << 23) || r.t_gap < -(1 << 23)) throw ConfigError("T_gap exceeds 24 bits");
  CanFrame f;
  f.id = kReferenceId;
  f.dlc = 8;
  f.src = src;
  for (int i = 0; i < 4; ++i) f.data[i] = static_cast<std::uint8_t>(r.master_ref_mark.raw >> (8 * i));
  f.data[4] = r.cycle_index;
  auto gap = static_cast<std::uint32_t>(r.t_gap);
  for (int i = 0; i < 3; ++i) f.data[5 + i] = static_cast<std::uint8_t>(gap >> (8 * i));
  return f;
}

inline ReferenceMessage decode_reference(const CanFrame& f) {
  if (f.id != kReferenceId || f.dlc != 8) throw ConfigError("not a reference message");
  ReferenceMessage r;
  std::uint32_t mark = 0;
  for (int i = 0; i < 4; ++i) mark |= static_cast<std::uint32_t>(f.data[i]) << (8 * i);
  r.master_ref_mark = NtuTime{mark & kMask};
  r.cycle_index = f.data[4];
  std::uint32_t gap = 0;
  for (int i = 0; i < 3; ++i) gap |= static_cast<std::uint32_t>(f.data[5 + i]) << (8 * i);
  if (gap & 0x800000u) gap |= 0xff000000u;
  r.t_gap = static_cast<std::int32_t>(gap);
  return r;
}

/// Plain level-2 handling of a reference at a node whose Ref_Mark was just
/// latched by capture_sync_mark(): updates the master marks, Local_Offset,
/// and TUR from the drift factor.
inline std::pair<TtcanNodeState, CorrectionStatus> standard_reference_update(
    TtcanNodeState s, const ReferenceMessage& ref) {
  s.master_ref_mark_previous = s.master_ref_mark;
  s.master_ref_mark = ref.master_ref_mark;
  ++s.references_seen;
  s.local_offset = s.time_master ? 0 : local_offset(s.ref_mark, s.master_ref_mark);
  if (s.references_seen < 2) return {s, CorrectionStatus::Bootstrap};
  auto df = drift_factor(s);
  if (!df) return {s, CorrectionStatus::SkippedZeroSpan};
  auto corrected = apply_drift_correction(s.clock, *df);
  s.clock = corrected.clock;
  return {s, corrected.status};
}

// ---------------------------------------------------------------------------
// Window-triggered transmission

enum class TxDecision : std::uint8_t { TransmitAtWindowStart, EnterArbitration, Defer };

struct TxPlan {
  TxDecision decision = TxDecision::Defer;
  std::optional<TimeWindow> window;
};

/// Decides what a node does with `frame` when its Cycle_Time is
/// `cycle_units`. `frame_units` is the frame's wire time in NTU/8 units.
/// A frame only starts if it completes before the window closes.
inline TxPlan node_transmit_in_window(const SystemMatrix& m, std::size_t row,
                                      std::int64_t cycle_units, const CanFrame& frame,
                                      std::int64_t frame_units) {
  auto w = window_at(m, cycle_units, row);
  if (!w) return {TxDecision::Defer, std::nullopt};
  const std::int64_t end_units = w->end() * kUnitsPerNtu;
  if (w->kind == WindowKind::Exclusive && w->owner_message == frame.id) {
    const std::int64_t start_units = w->start_offset * kUnitsPerNtu;
    if (start_units + frame_units <= end_units) return {TxDecision::TransmitAtWindowStart, w};
    return {TxDecision::Defer, w};
  }
  if (w->kind == WindowKind::Arbitration) {
    if (cycle_units + frame_units <= end_units) return {TxDecision::EnterArbitration, w};
    return {TxDecision::Defer, w};
  }
  return {TxDecision::Defer, w};
}

/// Rounds a wire duration up to whole NTU/8 units of a nominal NTU.
inline std::int64_t duration_to_units(Duration d, Duration nominal_ntu) {
  __int128 num = static_cast<__int128>(d) * kUnitsPerNtu;
  return static_cast<std::int64_t>((num + nominal_ntu - 1) / nominal_ntu);
}

}  // namespace ttsim::ttcan
