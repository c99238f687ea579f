#include "ttsim/network.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>

#include "ttsim/gateway.hpp"
#include "ttsim/oscillator.hpp"
#include "ttsim/tte.hpp"

namespace ttsim::net {

const FlowResult* RunResult::flow(const std::string& id) const {
  for (const auto& f : flows) {
    if (f.flow_id == id) return &f;
  }
  return nullptr;
}

double RunResult::link_utilization(const std::string& from, const std::string& to) const {
  for (const auto& l : links) {
    if (l.from == from && l.to == to) return l.utilization;
  }
  return 0.0;
}

namespace {

using scenario::NodeKind;
using scenario::Scenario;
using tte::SyncRole;
using tte::TrafficClass;

constexpr std::uint32_t kNoFlow = 0xffffffffu;
constexpr std::size_t kNoPort = static_cast<std::size_t>(-1);

struct Tag {
  std::uint32_t flow = kNoFlow;
  std::uint64_t seq = 0;
};

struct Packet {
  std::uint32_t vl = 0;
  TrafficClass cls = TrafficClass::BE;
  std::int64_t payload = 0;
  std::uint32_t src = 0;
  std::uint32_t dst = kNoNode;  // BE only
  Tag tag;
  bool pcf = false;
  tte::PcfFrame pcf_body;
  std::vector<gateway::TunnelTuple> tuples;
  std::vector<Tag> tuple_tags;
};

struct TxItem {
  ttcan::CanFrame frame;
  Tag tag;
};

// One-shot callbacks ordered by a deadline on some local clock. Only the
// earliest is armed in the kernel.
template <typename Key>
struct TimerSet {
  struct Entry {
    EventKind kind;
    std::function<void()> fn;
  };
  std::map<std::pair<Key, std::uint64_t>, Entry> entries;
  std::uint64_t next_seq = 0;
  std::optional<EventId> armed;

  void add(Key at, EventKind kind, std::function<void()> fn) {
    entries.emplace(std::make_pair(at, next_seq++), Entry{kind, std::move(fn)});
  }
};

struct SlotGroup {
  Duration period = 0;
  std::vector<Duration> offsets;  // sorted
};

struct Port {
  std::uint32_t owner = 0, peer = 0;
  std::size_t reverse = 0;
  std::int64_t rate = 0;
  Duration prop = 0;
  bool busy = false;
  std::deque<Packet> pcf, tt_ready, rc;
  tte::BoundedQueue<Packet> be;
  std::map<std::uint32_t, std::deque<Packet>> tt_buf;
  std::vector<SlotGroup> slots;
  metrics::LinkUsage usage;
};

struct EthState {
  tte::TteClock clock;
  TimerSet<Duration> timers;
  std::vector<std::size_t> ports;
  tte::ForwardingTable fwd;
  std::size_t port_to_cm = kNoPort;
  std::map<std::int64_t, std::vector<Duration>> cm_bucket;
  std::map<std::uint32_t, tte::RcShaper> shapers;
  std::map<std::uint32_t, std::deque<std::pair<gateway::TunnelTuple, Tag>>> encap;
  std::map<std::uint16_t, std::uint32_t> encap_vl;  // CAN id -> tunnel
  gateway::DecapTable decap;
};

struct CanState {
  std::uint32_t bus = 0;
  FreeRunningOscillator osc;
  std::uint64_t ticks = 0;
  gateway::GatewayState gw;  // ECUs only use gw.can_master
  TimerSet<std::int64_t> timers;
  std::map<std::uint16_t, std::deque<TxItem>> txq;
  std::int64_t cycle_ref = 0;  // unbounded units at the cycle origin
  std::size_t row = 0;
  std::set<std::uint16_t> tx_ids;

  ttcan::TtcanNodeState& st() { return gw.can_master; }
};

struct NodeRt {
  const scenario::NodeDef* def = nullptr;
  std::optional<EthState> eth;
  std::optional<CanState> can;
};

struct BusRt {
  std::uint32_t gateway = 0;
  std::vector<std::uint32_t> members;
  ttcan::SystemMatrix matrix;
  bool busy = false;
  bool resolve_pending = false;
  std::vector<std::pair<std::uint32_t, std::uint16_t>> contenders;
};

struct FlowRt {
  const scenario::FlowDef* def = nullptr;
  std::uint32_t src = 0, dst = 0;
  std::vector<metrics::MetricRecord> records;
  std::mt19937_64 rng;
  std::vector<SimTime> be_times;
};

std::int64_t floor_div(__int128 a, __int128 b) {
  __int128 q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return static_cast<std::int64_t>(q);
}

class Model {
 public:
  Model(const Scenario& s, const RunOptions& opt) : s_(s), opt_(opt) {
    seed_ = opt.seed.value_or(s.seed);
    end_ = SimTime::from(opt.duration.value_or(s.duration));
    unit_ps_ = s.ttcan.ntu / ttcan::kUnitsPerNtu;
    k_.set_trace_enabled(opt.event_trace);
    build();
  }

  RunResult run() {
    start();
    RunResult r;
    r.trace = k_.run_until(end_);
    r.events = k_.processed();
    finish(r);
    return r;
  }

 private:
  const Scenario& s_;
  RunOptions opt_;
  std::uint64_t seed_ = 1;
  SimTime end_{};
  Duration unit_ps_ = 0;
  Kernel k_;
  std::vector<NodeRt> nodes_;
  std::map<std::string, std::uint32_t> index_;
  std::vector<Port> ports_;
  std::vector<BusRt> buses_;
  std::map<std::string, std::uint32_t> bus_index_;
  std::vector<FlowRt> flows_;
  std::map<std::pair<std::uint32_t, std::uint16_t>, std::uint32_t> can_source_;  // (bus, id) -> flow
  std::map<std::uint32_t, std::uint32_t> tt_flow_of_vl_;
  std::map<std::uint32_t, std::size_t> vl_slot_count_;
  std::uint32_t cm_ = 0;
  Counters counters_;
  std::vector<SyncSample> sync_;
  std::vector<ResyncLog> resyncs_;
  std::vector<ReferenceLog> refs_;

  // -------------------------------------------------------------------------
  // Construction

  std::size_t port_between(std::uint32_t a, std::uint32_t b) const {
    for (std::size_t p : nodes_[a].eth->ports) {
      if (ports_[p].peer == b) return p;
    }
    return kNoPort;
  }

  std::size_t port_toward(std::uint32_t from, const std::string& target) const {
    auto path = scenario::route_nodes(s_, nodes_[from].def->name, target);
    if (path.size() < 2) return kNoPort;
    return port_between(from, index_.at(path[1]));
  }

  void build() {
    const Duration cc = scenario::cluster_cycle_of(s_);
    for (const auto& n : s_.nodes) {
      index_[n.name] = static_cast<std::uint32_t>(nodes_.size());
      NodeRt rt;
      rt.def = &n;
      const FreeRunningOscillator osc(OscillatorState::make(n.t_sys, n.drift_ppm, n.phase));
      if (scenario::is_ethernet(n.kind)) {
        rt.eth.emplace();
        rt.eth->clock = tte::TteClock(osc, s_.tte.integration_period, cc);
        if (n.role == SyncRole::CompressionMaster) cm_ = index_[n.name];
      }
      if (n.kind == NodeKind::Gateway || n.kind == NodeKind::Ecu) {
        rt.can.emplace();
        rt.can->osc = osc;
        rt.can->st().clock = ttcan::NtuClock(Rational(s_.ttcan.ntu, n.t_sys), n.t_sys);
        rt.can->gw.t_cycle = s_.ttcan.t_cycle;
        rt.can->gw.row_count = s_.ttcan.rows;
      }
      nodes_.push_back(std::move(rt));
    }

    for (const auto& l : s_.links) {
      const std::uint32_t a = index_.at(l.a), b = index_.at(l.b);
      const std::size_t pa = ports_.size(), pb = pa + 1;
      for (auto [own, peer, rev] : {std::tuple{a, b, pb}, std::tuple{b, a, pa}}) {
        Port p;
        p.owner = own;
        p.peer = peer;
        p.reverse = rev;
        p.rate = l.rate_bps;
        p.prop = l.propagation;
        p.be = tte::BoundedQueue<Packet>(s_.tte.be_queue);
        ports_.push_back(std::move(p));
        nodes_[own].eth->ports.push_back(ports_.size() - 1);
      }
    }

    const std::string& cm_name = s_.nodes[cm_].name;
    for (std::uint32_t n = 0; n < nodes_.size(); ++n) {
      if (!nodes_[n].eth) continue;
      auto& e = *nodes_[n].eth;
      if (n != cm_) e.port_to_cm = port_toward(n, cm_name);
      if (nodes_[n].def->kind != NodeKind::Switch) continue;
      for (std::uint32_t d = 0; d < nodes_.size(); ++d) {
        if (d == n || !nodes_[d].eth || nodes_[d].def->kind == NodeKind::Switch) continue;
        e.fwd.add_destination(d, port_toward(n, nodes_[d].def->name));
      }
    }

    build_vls();
    build_buses();
    build_flows();
  }

  void build_vls() {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::set<std::size_t>> tree;  // (switch, vl) -> ports
    std::map<std::size_t, std::map<Duration, std::set<Duration>>> slot_sets;
    for (const auto& v : s_.vls) {
      vl_slot_count_[v.id] = std::max<std::size_t>(1, v.offsets.size());
      std::set<std::size_t> seen_ports;
      for (const auto& r : v.receivers) {
        auto path = scenario::route_nodes(s_, v.sender, r);
        for (std::size_t h = 0; h + 1 < path.size(); ++h) {
          const std::uint32_t u = index_.at(path[h]);
          const std::size_t p = port_between(u, index_.at(path[h + 1]));
          if (h > 0) tree[{u, v.id}].insert(p);
          if (v.cls != TrafficClass::TT || !seen_ports.insert(p).second) continue;
          for (Duration o : v.offsets) {
            const Duration at = (o + static_cast<Duration>(h) * s_.tte.hop_slot) % v.period;
            slot_sets[p][v.period].insert(at);
            schedule_slot(p, v.id, at, v.period);
          }
        }
      }
      if (v.tunnel) {
        auto& g = *nodes_[index_.at(v.sender)].eth;
        for (std::uint16_t id : v.can_ids) g.encap_vl[id] = v.id;
        for (const auto& r : v.receivers) {
          auto& rn = nodes_[index_.at(r)];
          const scenario::BusDef* b = s_.bus(rn.def->bus);
          std::set<std::uint16_t> ids;
          for (std::uint16_t id : v.can_ids) {
            for (const auto& w : b->windows) {
              if (w.kind == ttcan::WindowKind::Exclusive && w.owner_message == id) ids.insert(id);
            }
          }
          rn.eth->decap[v.id] = ids;
          rn.can->tx_ids.insert(ids.begin(), ids.end());
        }
      }
    }
    for (const auto& [key, ports] : tree) {
      nodes_[key.first].eth->fwd.add_vl(key.second, {ports.begin(), ports.end()});
    }
    for (auto& [p, groups] : slot_sets) {
      for (auto& [period, offs] : groups) ports_[p].slots.push_back({period, {offs.begin(), offs.end()}});
    }
  }

  void build_buses() {
    for (const auto& b : s_.buses) {
      bus_index_[b.name] = static_cast<std::uint32_t>(buses_.size());
      BusRt rt;
      rt.gateway = index_.at(b.gateway);
      rt.matrix = scenario::matrix_of(s_, b);
      buses_.push_back(std::move(rt));
    }
    for (std::uint32_t n = 0; n < nodes_.size(); ++n) {
      if (!nodes_[n].can) continue;
      const std::uint32_t b = bus_index_.at(nodes_[n].def->bus);
      nodes_[n].can->bus = b;
      buses_[b].members.push_back(n);
      if (nodes_[n].def->kind == NodeKind::Gateway) nodes_[n].can->st().time_master = true;
    }
  }

  void build_flows() {
    for (std::uint32_t i = 0; i < s_.flows.size(); ++i) {
      const auto& f = s_.flows[i];
      FlowRt rt;
      rt.def = &f;
      rt.src = index_.at(f.src);
      rt.dst = index_.at(f.dst);
      std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32), i, 0x5eedu};
      rt.rng.seed(seq);
      if (f.category == metrics::Category::TTCAN) {
        auto& c = *nodes_[rt.src].can;
        for (std::uint16_t id : f.can_ids) {
          can_source_[{c.bus, id}] = i;
          c.tx_ids.insert(id);
        }
      }
      if (f.category == metrics::Category::TT) tt_flow_of_vl_[f.vl] = i;
      flows_.push_back(std::move(rt));
    }
  }

  // -------------------------------------------------------------------------
  // Local timers

  void eth_timer(std::uint32_t n, Duration local, EventKind kind, std::function<void()> fn) {
    nodes_[n].eth->timers.add(local, kind, std::move(fn));
    arm_eth(n);
  }

  void arm_eth(std::uint32_t n) {
    auto& e = *nodes_[n].eth;
    auto& t = e.timers;
    if (t.armed) {
      k_.cancel(*t.armed);
      t.armed.reset();
    }
    if (t.entries.empty()) return;
    const auto& first = *t.entries.begin();
    const SimTime at = std::max(k_.now(), e.clock.true_time_of(first.first.first));
    t.armed = k_.schedule(at, n, first.second.kind, [this, n] { fire_eth(n); });
  }

  void fire_eth(std::uint32_t n) {
    auto& e = *nodes_[n].eth;
    e.timers.armed.reset();
    while (!e.timers.entries.empty()) {
      auto it = e.timers.entries.begin();
      if (it->first.first > e.clock.local_at(k_.now())) break;
      auto fn = std::move(it->second.fn);
      e.timers.entries.erase(it);
      fn();
    }
    arm_eth(n);
  }

  void can_sync(std::uint32_t n) {
    auto& c = *nodes_[n].can;
    const std::uint64_t now_ticks = c.osc.ticks_at(k_.now());
    c.st().clock.advance(now_ticks - c.ticks);
    c.ticks = now_ticks;
  }

  void can_timer(std::uint32_t n, std::int64_t units, EventKind kind, std::function<void()> fn) {
    nodes_[n].can->timers.add(units, kind, std::move(fn));
  }

  void arm_can(std::uint32_t n) {
    auto& c = *nodes_[n].can;
    auto& t = c.timers;
    if (t.armed) {
      k_.cancel(*t.armed);
      t.armed.reset();
    }
    if (t.entries.empty()) return;
    can_sync(n);
    const auto& first = *t.entries.begin();
    const std::uint64_t need = c.st().clock.ticks_until(first.first.first);
    const SimTime at = std::max(k_.now(), c.osc.time_of_tick(c.ticks + need));
    t.armed = k_.schedule(at, n, first.second.kind, [this, n] { fire_can(n); });
  }

  void fire_can(std::uint32_t n) {
    auto& c = *nodes_[n].can;
    c.timers.armed.reset();
    can_sync(n);
    while (!c.timers.entries.empty()) {
      auto it = c.timers.entries.begin();
      if (it->first.first > c.st().clock.units()) break;
      auto fn = std::move(it->second.fn);
      c.timers.entries.erase(it);
      fn();
    }
    arm_can(n);
  }

  // -------------------------------------------------------------------------
  // Metrics bookkeeping

  Tag new_record(std::uint32_t fi) {
    auto& f = flows_[fi];
    const std::uint64_t seq = f.records.size();
    f.records.push_back({fi, seq, k_.now(), std::nullopt, false});
    return {fi, seq};
  }

  void delivered(const Tag& t, std::uint32_t at_node) {
    if (t.flow == kNoFlow) return;
    auto& f = flows_[t.flow];
    if (f.dst != at_node) return;
    auto& r = f.records[t.seq];
    if (!r.t_recv && !r.dropped) r.t_recv = k_.now();
  }

  void dropped(const Tag& t) {
    if (t.flow == kNoFlow) return;
    auto& r = flows_[t.flow].records[t.seq];
    if (!r.t_recv) r.dropped = true;
  }

  // -------------------------------------------------------------------------
  // Ethernet ports

  Duration wire_time(const Port& p, const Packet& pkt) const {
    return pkt.pcf ? tte::eth_wire_time(tte::kPcfFrameBytes, p.rate) : tte::eth_frame_duration(pkt.payload, p.rate);
  }

  std::optional<SimTime> next_tt(std::size_t pi) const {
    const Port& p = ports_[pi];
    if (p.slots.empty()) return std::nullopt;
    const auto& clock = nodes_[p.owner].eth->clock;
    const Duration local = clock.local_at(k_.now());
    std::optional<Duration> best;
    for (const auto& g : p.slots) {
      const Duration base = floor_div(local, g.period) * g.period;
      auto it = std::lower_bound(g.offsets.begin(), g.offsets.end(), local - base);
      const Duration cand = it != g.offsets.end() ? base + *it : base + g.period + g.offsets.front();
      if (!best || cand < *best) best = cand;
    }
    return clock.true_time_of(*best);
  }

  void enqueue(std::size_t pi, Packet pkt) {
    Port& p = ports_[pi];
    if (pkt.pcf) {
      p.pcf.push_back(std::move(pkt));
    } else if (pkt.cls == TrafficClass::TT) {
      auto& buf = p.tt_buf[pkt.vl];
      buf.push_back(std::move(pkt));
      if (buf.size() > vl_slot_count_[buf.back().vl]) {
        ++counters_.tt_overruns;
        dropped(buf.front().tag);
        buf.pop_front();
      }
      return;  // leaves at its slot
    } else if (pkt.cls == TrafficClass::RC) {
      p.rc.push_back(std::move(pkt));
    } else {
      const Tag t = pkt.tag;
      if (!p.be.push(std::move(pkt))) {
        ++counters_.be_dropped;
        dropped(t);
      }
    }
    try_send(pi);
  }

  void try_send(std::size_t pi) {
    Port& p = ports_[pi];
    if (p.busy) return;
    auto take = [&](std::deque<Packet>& q) {
      Packet pkt = std::move(q.front());
      q.pop_front();
      transmit(pi, std::move(pkt));
    };
    if (!p.pcf.empty()) return take(p.pcf);
    if (!p.tt_ready.empty()) return take(p.tt_ready);
    if (p.rc.empty() && p.be.empty()) return;
    const auto guard = next_tt(pi);
    if (!p.rc.empty()) {
      if (tte::fits_before_tt(k_.now(), wire_time(p, p.rc.front()), guard)) return take(p.rc);
    }
    if (!p.be.empty() && tte::fits_before_tt(k_.now(), wire_time(p, p.be.front()), guard)) {
      transmit(pi, p.be.pop());
    }
  }

  void transmit(std::size_t pi, Packet pkt) {
    Port& p = ports_[pi];
    p.busy = true;
    const SimTime end = k_.now() + wire_time(p, pkt);
    p.usage.add_busy(k_.now(), end);
    k_.schedule(end, p.owner, EventKind::TxComplete, [this, pi] {
      ports_[pi].busy = false;
      try_send(pi);
    });
    auto shared = std::make_shared<Packet>(std::move(pkt));
    k_.schedule(end + p.prop, p.peer, EventKind::FrameArrival,
                [this, pi, shared] { arrive(ports_[pi].peer, ports_[pi].reverse, std::move(*shared)); });
  }

  void schedule_slot(std::size_t pi, std::uint32_t vl, Duration local, Duration period) {
    eth_timer(ports_[pi].owner, local, EventKind::WindowOpen, [this, pi, vl, local, period] {
      tt_slot(pi, vl);
      schedule_slot(pi, vl, local + period, period);
    });
  }

  void tt_slot(std::size_t pi, std::uint32_t vl) {
    Port& p = ports_[pi];
    auto& e = *nodes_[p.owner].eth;
    auto enc = e.encap.find(vl);
    const scenario::VlDef* def = s_.vl(vl);
    if (def->tunnel && nodes_[p.owner].def->name == def->sender) {
      std::optional<std::vector<std::pair<gateway::TunnelTuple, Tag>>> batch;
      if (enc != e.encap.end()) batch = gateway::encapsulate(enc->second, s_.ttcan.tuple_capacity);
      if (!batch) {
        ++counters_.tunnel_slots_empty;
      } else {
        Packet pkt;
        pkt.vl = vl;
        pkt.cls = TrafficClass::TT;
        pkt.payload = def->payload;
        pkt.src = p.owner;
        for (auto& [tuple, tag] : *batch) {
          pkt.tuples.push_back(tuple);
          pkt.tuple_tags.push_back(tag);
        }
        p.tt_ready.push_back(std::move(pkt));
      }
    } else {
      auto& buf = p.tt_buf[vl];
      if (buf.empty()) {
        ++counters_.tt_slots_empty;
      } else {
        p.tt_ready.push_back(std::move(buf.front()));
        buf.pop_front();
      }
    }
    try_send(pi);
  }

  // -------------------------------------------------------------------------
  // Ethernet nodes

  void arrive(std::uint32_t n, std::size_t in_port, Packet pkt) {
    if (pkt.pcf) return on_pcf(n, in_port, std::move(pkt));
    if (nodes_[n].def->kind == NodeKind::Switch) return forward(n, std::move(pkt));
    if (pkt.cls == TrafficClass::TT && !pkt.tuples.empty()) return decap(n, pkt);
    delivered(pkt.tag, n);
  }

  void forward(std::uint32_t n, Packet pkt) {
    auto& e = *nodes_[n].eth;
    tte::EthFrame f{pkt.vl, pkt.cls, pkt.payload, pkt.src, {}, {}};
    if (pkt.cls == TrafficClass::BE) f.dst = {pkt.dst};
    auto out = e.fwd.route(f);
    if (out.empty()) {
      ++counters_.unroutable;
      dropped(pkt.tag);
      return;
    }
    for (std::size_t i = 0; i + 1 < out.size(); ++i) enqueue(out[i], pkt);
    enqueue(out.back(), std::move(pkt));
  }

  void decap(std::uint32_t n, const Packet& pkt) {
    auto& e = *nodes_[n].eth;
    auto& c = *nodes_[n].can;
    for (std::size_t i = 0; i < pkt.tuples.size(); ++i) {
      auto frames = gateway::decapsulate(e.decap, pkt.vl, {pkt.tuples[i]}, n);
      if (!frames) {
        ++counters_.unroutable;
        dropped(pkt.tuple_tags[i]);
        return;
      }
      if (frames->empty()) {
        ++counters_.can_tuples_filtered;
        continue;
      }
      const auto& f = frames->front();
      c.txq[f.id].push_back({f, pkt.tuple_tags[i]});
    }
  }

  // -------------------------------------------------------------------------
  // Clock synchronization

  Duration local(std::uint32_t n) const { return nodes_[n].eth->clock.local_at(k_.now()); }
  Duration stamp(std::uint32_t n) const { return nodes_[n].eth->clock.fine_local_at(k_.now()); }

  Packet make_pcf(std::uint32_t n, std::int64_t k, bool from_cm) {
    Packet pkt;
    pkt.pcf = true;
    pkt.src = n;
    pkt.pcf_body.integration_cycle_index = static_cast<std::uint32_t>(k % s_.tte.max_integration_cycle);
    pkt.pcf_body.origin = n;
    pkt.pcf_body.from_compression_master = from_cm;
    pkt.pcf_body.dispatched_at = k_.now();
    pkt.pcf_body.sender_time = stamp(n);
    return pkt;
  }

  void sm_dispatch(std::uint32_t n, std::int64_t k) {
    const Duration period = s_.tte.integration_period;
    enqueue(nodes_[n].eth->port_to_cm, make_pcf(n, k, false));
    eth_timer(n, (k + 1) * period, EventKind::PcfDispatch, [this, n, k] { sm_dispatch(n, k + 1); });
  }

  void cm_round(std::int64_t k) {
    auto& e = *nodes_[cm_].eth;
    const Duration period = s_.tte.integration_period;
    auto it = e.cm_bucket.find(k);
    std::optional<Duration> corr;
    if (it != e.cm_bucket.end()) corr = tte::cm_compress(it->second);
    e.cm_bucket.erase(e.cm_bucket.begin(), e.cm_bucket.upper_bound(k));
    if (corr) {
      e.clock.apply_correction(*corr);
    } else {
      ++counters_.cm_empty_rounds;
    }
    Packet pkt = make_pcf(cm_, k, true);
    for (std::size_t p : e.ports) enqueue(p, pkt);
    eth_timer(cm_, (k + 1) * period + s_.tte.cm_window, EventKind::PcfDispatch, [this, k] { cm_round(k + 1); });
  }

  void on_pcf(std::uint32_t n, std::size_t in_port, Packet pkt) {
    auto& nd = nodes_[n];
    auto& e = *nd.eth;
    const auto& body = pkt.pcf_body;
    const Duration transparent = k_.now() - body.dispatched_at;
    const Duration reading = stamp(n) - transparent;  // own clock at the sender's dispatch
    const Duration period = s_.tte.integration_period;
    if (!body.from_compression_master) {
      if (n == cm_) {
        const std::int64_t k = floor_div(reading + period / 2, period);
        if (static_cast<std::uint32_t>(k % s_.tte.max_integration_cycle) == body.integration_cycle_index &&
            std::llabs(reading - k * period) < s_.tte.cm_window) {
          e.cm_bucket[k].push_back(body.sender_time - reading);
        }
      } else if (nd.def->kind == NodeKind::Switch) {
        enqueue(e.port_to_cm, std::move(pkt));
      }
      return;
    }
    if (n != cm_) {
      e.clock.apply_correction(body.sender_time - reading);
      ++counters_.pcf_corrections;
      arm_eth(n);
    }
    if (nd.def->kind == NodeKind::Switch) {
      for (std::size_t p : e.ports) {
        if (p != in_port) enqueue(p, pkt);
      }
    }
  }

  // -------------------------------------------------------------------------
  // CAN buses

  Duration can_duration(const ttcan::CanFrame& f) const {
    return ttcan::can_frame_duration(f, s_.ttcan.stuffing, s_.ttcan.bitrate);
  }

  void bus_request(std::uint32_t b, std::uint32_t n, std::uint16_t id) {
    auto& bus = buses_[b];
    bus.contenders.push_back({n, id});
    if (!bus.busy && !bus.resolve_pending) {
      bus.resolve_pending = true;
      k_.schedule(k_.now(), n, EventKind::TxComplete, [this, b] { bus_resolve(b); });
    }
  }

  // A queued frame may still start if its window is open and it ends in time.
  bool may_start(std::uint32_t n, std::uint16_t id, const ttcan::CanFrame& f) {
    if (id == ttcan::kReferenceId) return true;
    auto& c = *nodes_[n].can;
    can_sync(n);
    const std::int64_t cycle_units = c.st().clock.units() - c.cycle_ref;
    const std::int64_t frame_units = ttcan::duration_to_units(can_duration(f), s_.ttcan.ntu);
    const auto& m = buses_[c.bus].matrix;
    auto plan = ttcan::node_transmit_in_window(m, c.row, cycle_units, f, frame_units);
    if (plan.decision == ttcan::TxDecision::Defer) return false;
    return cycle_units + frame_units <= plan.window->end() * ttcan::kUnitsPerNtu;
  }

  void bus_resolve(std::uint32_t b) {
    auto& bus = buses_[b];
    bus.resolve_pending = false;
    if (bus.busy) return;
    std::vector<ttcan::CanFrame> cands;
    std::vector<std::pair<std::uint32_t, std::uint16_t>> keep;
    for (auto [n, id] : bus.contenders) {
      auto& q = nodes_[n].can->txq[id];
      if (q.empty()) continue;
      if (!may_start(n, id, q.front().frame)) {
        ++counters_.can_window_misses;
        continue;
      }
      cands.push_back(q.front().frame);
      cands.back().src = n;
      keep.push_back({n, id});
    }
    bus.contenders = keep;
    if (cands.empty()) return;
    const ttcan::CanFrame win = ttcan::arbitrate(cands);
    std::erase_if(bus.contenders, [&](const auto& c) { return c.first == win.src && c.second == win.id; });
    bus_start(b, win.src, win.id);
  }

  void bus_start(std::uint32_t b, std::uint32_t n, std::uint16_t id) {
    auto& bus = buses_[b];
    auto& q = nodes_[n].can->txq[id];
    auto item = std::make_shared<TxItem>(std::move(q.front()));
    q.pop_front();
    const Duration d = can_duration(item->frame);
    bus.busy = true;
    const SimTime end = k_.now() + d;
    k_.schedule(end, n, EventKind::TxComplete, [this, b] {
      buses_[b].busy = false;
      if (!buses_[b].contenders.empty()) bus_resolve(b);
    });
    for (std::uint32_t m : bus.members) {
      if (m == n) continue;
      k_.schedule(end + s_.ttcan.propagation, m, EventKind::FrameArrival,
                  [this, m, item, d] { can_receive(m, *item, d + s_.ttcan.propagation); });
    }
  }

  void can_receive(std::uint32_t n, const TxItem& item, Duration delay) {
    auto& nd = nodes_[n];
    if (item.frame.id == ttcan::kReferenceId) {
      if (nd.def->kind == NodeKind::Ecu) ecu_reference(n, ttcan::decode_reference(item.frame), delay);
      return;
    }
    if (nd.def->kind == NodeKind::Gateway) {
      auto& e = *nd.eth;
      auto it = e.encap_vl.find(item.frame.id);
      if (it == e.encap_vl.end()) return;
      can_sync(n);
      const auto stamp = static_cast<std::uint16_t>(nd.can->st().clock.local_time().raw >> ttcan::kFracBits);
      e.encap[it->second].push_back({gateway::to_tuple(item.frame, stamp), item.tag});
      return;
    }
    delivered(item.tag, n);
  }

  double effective_ntu_ps(std::uint32_t n) {
    auto& c = *nodes_[n].can;
    const double rate = 1.0 + static_cast<double>(c.osc.state().drift_ppb) * 1e-9;
    return c.st().clock.tur().to_double() * static_cast<double>(c.osc.t_sys()) / rate;
  }

  void ecu_reference(std::uint32_t n, const ttcan::ReferenceMessage& ref, Duration delay) {
    auto& c = *nodes_[n].can;
    can_sync(n);
    const auto tau = static_cast<std::int32_t>(ttcan::duration_to_units(delay, s_.ttcan.ntu));
    auto r = gateway::node_on_reference(c.st(), ref, tau, s_.ttcan.smoothing);
    c.st() = r.state;
    std::optional<double> df;
    if (r.df) df = r.df->to_double();
    refs_.push_back({k_.now(), n, df, effective_ntu_ps(n), effective_ntu_ps(buses_[c.bus].gateway), r.step});
    // windows count from the master's cycle start, tau before adoption
    plan_cycle(n, c.st().clock.units() - tau, ref.cycle_index);
  }

  void gw_resync(std::uint32_t n) {
    auto& c = *nodes_[n].can;
    can_sync(n);
    const __int128 scaled = static_cast<__int128>(local(n)) * ttcan::kUnitsPerNtu;
    const auto tte_now = ttcan::NtuTime::from_units(floor_div(scaled, s_.ttcan.ntu));
    auto r = gateway::end_of_cycle_resync(c.gw, tte_now, s_.ttcan.smoothing);
    c.gw = r.state;
    std::optional<double> df;
    if (r.df) df = r.df->to_double();
    resyncs_.push_back({k_.now(), n, r.reference.t_gap, df, r.status});
    plan_cycle(n, c.st().clock.units() - r.reference.t_gap, c.gw.cycle_index);
    c.txq[ttcan::kReferenceId].push_front({ttcan::encode_reference(r.reference, n), {}});
    bus_request(c.bus, n, ttcan::kReferenceId);
  }

  void plan_cycle(std::uint32_t n, std::int64_t ref_units, std::size_t row) {
    auto& nd = nodes_[n];
    auto& c = *nd.can;
    c.timers.entries.clear();
    c.cycle_ref = ref_units;
    c.row = row % s_.ttcan.rows;
    const bool ecu = nd.def->kind == NodeKind::Ecu;
    for (const auto& w : buses_[c.bus].matrix.rows[c.row]) {
      if (w.kind != ttcan::WindowKind::Exclusive || !w.owner_message || !c.tx_ids.count(*w.owner_message)) continue;
      const std::uint16_t id = *w.owner_message;
      if (ecu) {
        const std::int64_t gen = std::max<std::int64_t>(0, w.start_offset - s_.ttcan.lead);
        can_timer(n, ref_units + gen * ttcan::kUnitsPerNtu, EventKind::GeneratorFire, [this, n, id] { ecu_generate(n, id); });
      }
      can_timer(n, ref_units + w.start_offset * ttcan::kUnitsPerNtu, EventKind::WindowOpen, [this, n, id] {
        auto& cs = *nodes_[n].can;
        if (!cs.txq[id].empty()) bus_request(cs.bus, n, id);
      });
    }
    if (!ecu) {
      can_timer(n, ref_units + s_.ttcan.t_cycle * ttcan::kUnitsPerNtu, EventKind::CycleEnd, [this, n] { gw_resync(n); });
    }
    arm_can(n);
  }

  void ecu_generate(std::uint32_t n, std::uint16_t id) {
    auto& c = *nodes_[n].can;
    auto it = can_source_.find({c.bus, id});
    if (it == can_source_.end()) return;
    auto& f = flows_[it->second];
    ttcan::CanFrame frame;
    frame.id = id;
    frame.dlc = static_cast<std::uint8_t>(f.def->payload);
    for (std::size_t i = 0; i < frame.dlc; ++i) frame.data[i] = static_cast<std::uint8_t>(f.rng());
    frame.src = n;
    auto& q = c.txq[id];
    q.push_back({frame, new_record(it->second)});
    if (q.size() > 2) {
      ++counters_.can_window_misses;
      dropped(q.front().tag);
      q.pop_front();
    }
  }

  // -------------------------------------------------------------------------
  // Ethernet traffic sources

  void tt_generate(std::uint32_t fi, Duration local_at, Duration period) {
    auto& f = flows_[fi];
    eth_timer(f.src, local_at, EventKind::GeneratorFire, [this, fi, local_at, period] {
      auto& fl = flows_[fi];
      Packet pkt;
      pkt.vl = fl.def->vl;
      pkt.cls = TrafficClass::TT;
      pkt.payload = fl.def->payload;
      pkt.src = fl.src;
      pkt.tag = new_record(fi);
      enqueue(nodes_[fl.src].eth->ports.front(), std::move(pkt));
      tt_generate(fi, local_at + period, period);
    });
  }

  void rc_generate(std::uint32_t fi, Duration local_at) {
    auto& f = flows_[fi];
    eth_timer(f.src, local_at, EventKind::GeneratorFire, [this, fi, local_at] {
      auto& fl = flows_[fi];
      auto pkt = std::make_shared<Packet>();
      pkt->vl = fl.def->vl;
      pkt->cls = TrafficClass::RC;
      pkt->payload = fl.def->payload;
      pkt->src = fl.src;
      pkt->tag = new_record(fi);
      auto& e = *nodes_[fl.src].eth;
      auto sh = e.shapers.find(fl.def->vl);
      if (sh == e.shapers.end()) sh = e.shapers.emplace(fl.def->vl, tte::RcShaper(s_.vl(fl.def->vl)->bag)).first;
      const SimTime admit = sh->second.admit(k_.now());
      const std::size_t port = e.ports.front();
      if (admit <= k_.now()) {
        enqueue(port, std::move(*pkt));
      } else {
        k_.schedule(admit, fl.src, EventKind::GeneratorFire, [this, port, pkt] { enqueue(port, std::move(*pkt)); });
      }
      rc_generate(fi, local_at + fl.def->period);
    });
  }

  void be_next(std::uint32_t fi, std::size_t i) {
    auto& f = flows_[fi];
    if (i >= f.be_times.size()) return;
    k_.schedule(f.be_times[i], f.src, EventKind::GeneratorFire, [this, fi, i] {
      auto& fl = flows_[fi];
      Packet pkt;
      pkt.vl = 0;
      pkt.cls = TrafficClass::BE;
      pkt.payload = fl.def->payload;
      pkt.src = fl.src;
      pkt.dst = fl.dst;
      pkt.tag = new_record(fi);
      enqueue(nodes_[fl.src].eth->ports.front(), std::move(pkt));
      be_next(fi, i + 1);
    });
  }

  // -------------------------------------------------------------------------
  // Sampling

  Duration can_error(std::uint32_t n, Duration reference_ps) {
    auto& c = *nodes_[n].can;
    can_sync(n);
    const __int128 scaled = static_cast<__int128>(reference_ps) * ttcan::kUnitsPerNtu;
    const std::int64_t ref_units = floor_div(scaled, s_.ttcan.ntu);
    const Duration rem = reference_ps - ref_units * unit_ps_;
    const std::int32_t d = ttcan::wrap_diff(ttcan::global_time(c.st()), ttcan::NtuTime::from_units(ref_units));
    return static_cast<Duration>(d) * unit_ps_ - rem;
  }

  void sample() {
    const Duration cm_local = local(cm_);
    const Duration truth = k_.now().since_start();
    for (std::uint32_t n = 0; n < nodes_.size(); ++n) {
      auto& nd = nodes_[n];
      if (nd.def->kind == NodeKind::Gateway || nd.def->kind == NodeKind::Ecu) {
        sync_.push_back({k_.now(), n, can_error(n, cm_local), can_error(n, truth)});
      }
      if (nd.def->kind != NodeKind::Ecu && nd.def->kind != NodeKind::Gateway) {
        const Duration l = local(n);
        sync_.push_back({k_.now(), n, l - cm_local, l - truth});
      }
    }
    const SimTime next = k_.now() + s_.sample_period;
    if (next <= end_) k_.schedule(next, cm_, EventKind::Sample, [this] { sample(); });
  }

  // -------------------------------------------------------------------------
  // Run

  void start() {
    const Duration period = s_.tte.integration_period;
    for (std::uint32_t n = 0; n < nodes_.size(); ++n) {
      const auto& d = *nodes_[n].def;
      if (!nodes_[n].eth) continue;
      if (d.role == SyncRole::SynchronizationMaster && n != cm_) {
        eth_timer(n, period, EventKind::PcfDispatch, [this, n] { sm_dispatch(n, 1); });
      }
    }
    eth_timer(cm_, period + s_.tte.cm_window, EventKind::PcfDispatch, [this] { cm_round(1); });
    for (std::uint32_t n = 0; n < nodes_.size(); ++n) {
      if (nodes_[n].def->kind == NodeKind::Gateway) {
        k_.schedule(SimTime{}, n, EventKind::CycleEnd, [this, n] { gw_resync(n); });
      }
    }
    for (std::uint32_t fi = 0; fi < flows_.size(); ++fi) {
      auto& f = flows_[fi];
      switch (f.def->category) {
        case metrics::Category::TT: {
          const auto* v = s_.vl(f.def->vl);
          for (Duration o : v->offsets) {
            Duration at = o - s_.tte.tt_lead;
            if (at < 0) at += v->period;
            tt_generate(fi, at, v->period);
          }
          break;
        }
        case metrics::Category::RC:
          if (f.def->offsets.empty()) rc_generate(fi, f.def->offset);
          for (Duration o : f.def->offsets) rc_generate(fi, o);
          break;
        case metrics::Category::BE: {
          metrics::FlowSpec spec{f.def->id, metrics::Category::BE, f.def->payload, 0, f.def->rate_bps,
                                 f.src,     {f.dst},               f.def->offset};
          f.be_times = metrics::generate(spec, SimTime{}, end_, f.rng);
          be_next(fi, 0);
          break;
        }
        case metrics::Category::TTCAN:
          break;  // driven by the bus schedule
      }
    }
    if (opt_.sync_trace) k_.schedule(SimTime{}, cm_, EventKind::Sample, [this] { sample(); });
  }

  void finish(RunResult& r) {
    r.scenario = s_.name;
    Duration ws = scenario::warmup_of(s_);
    Duration we = end_.since_start() - s_.drain;
    if (we <= ws) {
      ws = 0;
      we = end_.since_start();
    }
    r.window_start = SimTime::from(ws);
    r.window_end = SimTime::from(we);
    for (const auto& n : nodes_) r.node_names.push_back(n.def->name);
    for (const auto& f : flows_) {
      r.flows.push_back({f.def->id, f.def->category,
                         metrics::summarize(f.records, r.window_start, r.window_end, f.def->payload)});
    }
    for (const auto& p : ports_) {
      r.links.push_back({nodes_[p.owner].def->name, nodes_[p.peer].def->name,
                         p.usage.utilization(r.window_start, r.window_end)});
    }
    r.sync = std::move(sync_);
    r.resyncs = std::move(resyncs_);
    r.references = std::move(refs_);
    r.counters = counters_;
  }
};

}  // namespace

RunResult simulate(const scenario::Scenario& s, const RunOptions& opt) {
  scenario::require_valid(s, s.name);
  Model m(s, opt);
  return m.run();
}

}  // namespace ttsim::net
