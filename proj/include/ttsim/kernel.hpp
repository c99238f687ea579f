#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ttsim/sim_time.hpp"

namespace ttsim {

using NodeId = std::uint32_t;
using EventId = std::uint64_t;

inline constexpr NodeId kNoNode = 0xffffffffu;

// Declaration order is the tie-break priority for events firing at the same
// instant: earlier enumerators run first.
enum class EventKind : std::uint8_t {
  WindowOpen,
  PcfDispatch,
  CycleEnd,
  FrameArrival,
  TxComplete,
  GeneratorFire,
  Sample,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::WindowOpen: return "window-open";
    case EventKind::PcfDispatch: return "pcf-dispatch";
    case EventKind::CycleEnd: return "cycle-end";
    case EventKind::FrameArrival: return "frame-arrival";
    case EventKind::TxComplete: return "tx-complete";
    case EventKind::GeneratorFire: return "generator-fire";
    case EventKind::Sample: return "sample";
  }
  return "unknown";
}

struct TraceEntry {
  SimTime at;
  NodeId node = kNoNode;
  EventKind kind = EventKind::Sample;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

using EventTrace = std::vector<TraceEntry>;

class SchedulingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Event {
  NodeId target = kNoNode;
  EventKind kind = EventKind::Sample;
  std::function<void()> handler;
};

/// Single-threaded discrete-event engine.
///
/// Events are totally ordered by (fire time, kind priority, sequence number);
/// the sequence number is the event id, assigned in scheduling order.
class Kernel {
 public:
  SimTime now() const { return now_; }

  void set_trace_enabled(bool on) { trace_enabled_ = on; }
  bool trace_enabled() const { return trace_enabled_; }

  std::size_t pending() const { return heap_.size() - cancelled_in_heap_; }

  EventId schedule(Event event, SimTime at) {
    if (at < now_) {
      throw SchedulingError("event for node " + std::to_string(event.target) + " (" +
                            to_string(event.kind) + ") scheduled at " + std::to_string(at.ticks) +
                            " ps, before now = " + std::to_string(now_.ticks) + " ps");
    }
    EventId id = next_id_++;
    state_.push_back(State::Pending);
    heap_.push_back(Entry{at, event.kind, id, event.target, std::move(event.handler)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    return id;
  }

  EventId schedule(SimTime at, NodeId target, EventKind kind, std::function<void()> handler) {
    return schedule(Event{target, kind, std::move(handler)}, at);
  }

  bool cancel(EventId id) {
    if (id >= state_.size() || state_[id] != State::Pending) return false;
    state_[id] = State::Cancelled;
    ++cancelled_in_heap_;
    return true;
  }

  bool is_pending(EventId id) const { return id < state_.size() && state_[id] == State::Pending; }

  /// Processes every event with fire time <= t_end, then sets now = t_end.
  EventTrace run_until(SimTime t_end) {
    if (t_end < now_) throw SchedulingError("run_until target lies in the past");
    EventTrace trace;
    while (!heap_.empty() && heap_.front().at <= t_end) {
      std::pop_heap(heap_.begin(), heap_.end(), Later{});
      Entry e = std::move(heap_.back());
      heap_.pop_back();
      if (state_[e.id] == State::Cancelled) {
        --cancelled_in_heap_;
        continue;
      }
      state_[e.id] = State::Fired;
      now_ = e.at;
      if (trace_enabled_) trace.push_back(TraceEntry{e.at, e.target, e.kind});
      ++processed_;
      if (e.handler) e.handler();
    }
    now_ = t_end;
    return trace;
  }

  std::uint64_t processed() const { return processed_; }

 private:
  enum class State : std::uint8_t { Pending, Fired, Cancelled };

  struct Entry {
    SimTime at;
    EventKind kind;
    EventId id;
    NodeId target;
    std::function<void()> handler;
  };

  // Heap comparator: true when a fires after b.
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.at != b.at) return a.at > b.at;
      if (a.kind != b.kind) return a.kind > b.kind;
      return a.id > b.id;
    }
  };

  SimTime now_{};
  EventId next_id_ = 0;
  std::vector<Entry> heap_;
  std::vector<State> state_;
  std::size_t cancelled_in_heap_ = 0;
  std::uint64_t processed_ = 0;
  bool trace_enabled_ = false;
};

/// Writes `<ticks>,<node>,<kind>` records, one per line.
template <typename NameOf>
void write_trace(std::ostream& os, const EventTrace& trace, NameOf&& name_of) {
  for (const auto& e : trace) {
    os << e.at.ticks << ',' << name_of(e.node) << ',' << to_string(e.kind) << '\n';
  }
}

}  // namespace ttsim
