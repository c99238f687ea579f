#include <gtest/gtest.h>

#include <algorithm>
#include <string>

#include "ttsim/scenario.hpp"

using namespace ttsim;
using namespace ttsim::scenario;

namespace {

const std::string kBase = R"(schema_version: 1
name: mini
duration: 100ms
nodes:
  - {name: sw, kind: switch, role: cm}
  - {name: a, kind: end_system, role: sm}
  - {name: b, kind: end_system}
links:
  - {a: sw, b: a}
  - {a: sw, b: b}
)";

std::string bundled(const std::string& name) { return std::string(TTSIM_SCENARIO_DIR) + "/" + name + ".scn"; }

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(), [&](const auto& e) { return e.find(needle) != std::string::npos; });
}

std::vector<std::string> parse_errors(const std::string& text) {
  try {
    parse_scenario(text, "t.scn");
  } catch (const ScenarioError& e) {
    return e.errors();
  }
  return {};
}

}  // namespace

TEST(Scenario, BundledFig1Topology) {
  const auto s = load_scenario(bundled("fig1"));
  EXPECT_TRUE(validate(s).empty());
  auto count = [&](NodeKind k) { return std::count_if(s.nodes.begin(), s.nodes.end(), [&](auto& n) { return n.kind == k; }); };
  EXPECT_EQ(count(NodeKind::Switch), 2);
  EXPECT_EQ(count(NodeKind::Gateway), 4);
  EXPECT_EQ(s.buses.size(), 4u);
  for (const auto& l : s.links) {
    EXPECT_EQ(l.rate_bps, 100'000'000);
    EXPECT_EQ(l.propagation, 100 * kNanosecond);
  }
  EXPECT_EQ(s.ttcan.bitrate, 1'000'000);
  EXPECT_EQ(s.ttcan.t_cycle * s.ttcan.ntu, 24'576 * kMicrosecond);
}

TEST(Scenario, AllBundledValidate) {
  for (const char* n : {"fig1", "worstcase", "twoclock"}) {
    const auto s = load_scenario(bundled(n));
    EXPECT_EQ(validate(s), std::vector<std::string>{}) << n;
    EXPECT_EQ(s.name, n);
  }
}

TEST(Scenario, MissingFileIsAnError) { EXPECT_THROW(load_scenario(bundled("no-such-file")), ScenarioError); }

TEST(Scenario, SyntaxErrorCarriesLine) {
  const auto errors = parse_errors(kBase + "flows: [\n  {id: x\n");
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("line "), std::string::npos) << errors[0];
}

TEST(Scenario, UnknownKeyCarriesLine) {
  const auto errors = parse_errors(kBase + "colour: blue\n");
  ASSERT_FALSE(errors.empty());
  EXPECT_TRUE(mentions(errors, "line 11")) << errors[0];
  EXPECT_TRUE(mentions(errors, "colour"));
}

TEST(Scenario, FlowWithMissingNodeNamesTheFlow) {
  const auto s = parse_scenario(kBase + R"(flows:
  - {id: lost, category: BE, src: a, dst: ghost, rate: 1e6}
)");
  const auto errors = validate(s);
  EXPECT_TRUE(mentions(errors, "lost")) << ::testing::PrintToString(errors);
  EXPECT_TRUE(mentions(errors, "ghost"));
  EXPECT_THROW(require_valid(s), ScenarioError);
}

TEST(Scenario, OverlappingTtSlotsRejected) {
  const auto s = parse_scenario(kBase + R"(virtual_links:
  - {id: 1, class: TT, sender: a, receivers: [b], payload: 50, period: 3ms, offsets: [100us]}
  - {id: 2, class: TT, sender: a, receivers: [b], payload: 50, period: 3ms, offsets: [102us]}
)");
  EXPECT_TRUE(mentions(validate(s), "TT overlap")) << ::testing::PrintToString(validate(s));
}

TEST(Scenario, DisjointTtSlotsAccepted) {
  const auto s = parse_scenario(kBase + R"(virtual_links:
  - {id: 1, class: TT, sender: a, receivers: [b], payload: 50, period: 3ms, offsets: [100us]}
  - {id: 2, class: TT, sender: a, receivers: [b], payload: 50, period: 6ms, offsets: [500us, 3500us]}
)");
  EXPECT_TRUE(validate(s).empty()) << ::testing::PrintToString(validate(s));
  EXPECT_EQ(cluster_cycle_of(s), 6 * kMillisecond);
}

TEST(Scenario, CanWindowOverlap) {
  std::string text = kBase;
  text.replace(text.find("links:"), 0, "  - {name: g, kind: gateway, bus: c}\n  - {name: e, kind: ecu, bus: c}\n");
  text += R"(  - {a: sw, b: g}
buses:
  - name: c
    gateway: g
    windows:
      - {start: 3000, length: 1500, owner: 0x10}
      - {start: 4000, length: 1500, owner: 0x11}
)";
  EXPECT_TRUE(mentions(validate(parse_scenario(text)), "overlaps"));
}

TEST(Scenario, OffsetRunsExpand) {
  const auto s = parse_scenario(kBase + R"(virtual_links:
  - {id: 1, class: TT, sender: a, receivers: [b], payload: 50, period: 10ms,
     offsets: [{first: 100us, step: 30us, count: 3, repeat: 2, every: 1ms}, 5ms]}
)");
  const std::vector<Duration> want{100 * kMicrosecond, 130 * kMicrosecond, 160 * kMicrosecond,
                                   1100 * kMicrosecond, 1130 * kMicrosecond, 1160 * kMicrosecond,
                                   5 * kMillisecond};
  EXPECT_EQ(s.vls.at(0).offsets, want);
}

TEST(Scenario, RepeatNeedsEvery) {
  const auto errors = parse_errors(kBase + R"(virtual_links:
  - {id: 1, class: TT, sender: a, receivers: [b], payload: 50, period: 10ms,
     offsets: {first: 100us, step: 30us, count: 3, repeat: 2}}
)");
  EXPECT_TRUE(mentions(errors, "repeat needs every")) << ::testing::PrintToString(errors);
}

TEST(Scenario, FlowOffsetsOnlyForRc) {
  const auto s = parse_scenario(kBase + R"(virtual_links:
  - {id: 1, class: TT, sender: a, receivers: [b], payload: 50, period: 3ms, offsets: [100us]}
flows:
  - {id: t, category: TT, src: a, dst: b, vl: 1, offsets: [0us]}
)");
  EXPECT_TRUE(mentions(validate(s), "offsets only apply to RC flows"));
}

TEST(Scenario, SwitchCannotBeSyncMaster) {
  std::string text = kBase;
  text.replace(text.find("role: cm"), 8, "role: sm");
  const auto errors = validate(parse_scenario(text));
  EXPECT_TRUE(mentions(errors, "synchronization master cannot be a switch"));
  EXPECT_TRUE(mentions(errors, "exactly one compression master"));
}

TEST(Scenario, UnknownPinRejected) {
  const auto s = parse_scenario(kBase + "pin: [colour]\n");
  EXPECT_TRUE(mentions(validate(s), "pin: unknown parameter"));
}

TEST(Scenario, RouteFollowsTree) {
  const auto s = load_scenario(bundled("fig1"));
  EXPECT_EQ(route_nodes(s, "adas", "cu"), (std::vector<std::string>{"adas", "sw1", "sw2", "cu"}));
  EXPECT_EQ(route_nodes(s, "gw1", "gw2"), (std::vector<std::string>{"gw1", "sw1", "gw2"}));
  EXPECT_TRUE(route_nodes(s, "adas", "e11").empty());
}
