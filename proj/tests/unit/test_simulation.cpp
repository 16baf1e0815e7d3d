#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>

#include "swarmstage/error.hpp"
#include "swarmstage/simulation.hpp"

using namespace swarmstage;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("swarmstage_test_" + name);
  fs::remove_all(p);
  return p;
}

PerformanceScript firework(double duration) {
  auto s = load_script("scenarios/firework.script");
  s.duration = duration;
  return s;
}

}  // namespace

TEST_CASE("duration 0 gives an empty but valid trace") {
  const auto trace = run(firework(0.0));
  CHECK(trace.trajectories.empty());
  CHECK(trace.duration == 0.0);
  CHECK(trace.roster.size() == 14);  // 12 robots, marker, one station
  const auto dir = scratch("empty");
  write_trace(trace, dir.string());
  const auto back = load_trace(dir.string());
  CHECK(back.seed == trace.seed);
  CHECK(back.trajectories.empty());
  CHECK(back.roster.size() == trace.roster.size());
  fs::remove_all(dir);
}

TEST_CASE("13-node roster runs and is deterministic") {
  auto s = load_script("scenarios/standard.script");
  s.duration = 40.0;
  const auto a = run(s);
  CHECK(a.roster.size() == 13);
  int robots = 0, stations = 0, markers = 0;
  for (const auto& r : a.roster) {
    robots += r.role == NodeRole::Robot;
    stations += r.role == NodeRole::GroundStation;
    markers += r.role == NodeRole::Marker;
  }
  CHECK(robots == 10);
  CHECK(stations == 2);
  CHECK(markers == 1);

  const auto da = scratch("det_a"), db = scratch("det_b");
  write_trace(a, da.string());
  write_trace(run(s), db.string());
  for (const char* f : {"trace.json", "trajectories.csv", "bandwidth.csv", "events.csv", "cues.csv", "phases.csv"}) {
    CAPTURE(f);
    const auto ca = slurp(da / f);
    CHECK_FALSE(ca.empty());
    CHECK(ca == slurp(db / f));
  }

  s.seed = 2;
  s.net.seed = 2;
  const auto dc = scratch("det_c");
  write_trace(run(s), dc.string());
  CHECK(slurp(da / "trajectories.csv") != slurp(dc / "trajectories.csv"));
  for (const auto& d : {da, db, dc}) fs::remove_all(d);
}

TEST_CASE("cues apply in order and never early") {
  auto s = load_script("scenarios/standard.script");
  s.duration = 210.0;
  const auto trace = run(s);
  REQUIRE(trace.cues.size() == s.cues.size());
  for (std::size_t i = 0; i < s.cues.size(); ++i) {
    CHECK(trace.cues[i].command == s.cues[i].command);
    CHECK(trace.cues[i].t >= *s.cues[i].at - 1e-9);
    CHECK(trace.cues[i].t < *s.cues[i].at + kSimDt);
  }
  // command events arrive in cue order, each after its cue
  std::vector<std::string> kinds;
  for (const auto& e : trace.events) {
    if (e.kind == "launch" || e.kind == "switch" || e.kind == "stop" || e.kind == "marker") {
      if (kinds.empty() || kinds.back() != e.kind) kinds.push_back(e.kind);
    }
  }
  CHECK(kinds == std::vector<std::string>{"launch", "switch", "marker", "stop"});

  // robots are idle before launch and nothing runs the switched program early
  for (const auto& p : trace.phases) {
    if (p.mode == RobotMode::Active) CHECK(p.t > 20.0);
    if (p.program == "murmuration") CHECK(p.t >= 110.0);
  }
}

TEST_CASE("behavior inputs carry the fused taint") {
  Simulation sim(firework(6.0));
  int calls = 0, differs = 0;
  sim.set_behavior_probe([&](const SelfState& self, const NeighborView& view) {
    ++calls;
    CHECK(self.source == PoseSource::Fused);
    for (const auto& n : view.neighbors) CHECK(n.source == PoseSource::Fused);
    const auto snap = sim.robot(self.id);
    REQUIRE(snap.has_value());
    CHECK(self.pose.x == snap->fused.x);
    CHECK(self.pose.y == snap->fused.y);
    if (self.pose.x != snap->truth.x || self.pose.y != snap->truth.y) ++differs;
  });
  sim.run_until(6.0);
  CHECK(calls > 100);
  CHECK(differs == calls);  // fused estimates never coincide with truth
}

TEST_CASE("use_truth switches the taint") {
  auto s = firework(4.0);
  s.loc.use_truth = true;
  Simulation sim(s);
  int calls = 0;
  sim.set_behavior_probe([&](const SelfState& self, const NeighborView& view) {
    ++calls;
    CHECK(self.source == PoseSource::Truth);
    for (const auto& n : view.neighbors) CHECK(n.source == PoseSource::Truth);
    CHECK(self.pose.x == sim.robot(self.id)->truth.x);
  });
  sim.run_until(4.0);
  CHECK(calls > 0);
}

TEST_CASE("one program file drives all three classes") {
  const auto s = load_script("scenarios/agnostic.script");
  const auto trace = run(s);
  std::set<std::string> classes;
  std::set<std::uint64_t> prints;
  std::set<std::string> origins;
  for (const auto& p : trace.programs) {
    if (p.program != "ripple") continue;
    classes.insert(p.robot_class);
    prints.insert(p.fingerprint);
    origins.insert(p.origin);
  }
  CHECK(classes == std::set<std::string>{"Tabletop", "Aerial", "HumanScale"});
  CHECK(prints.size() == 1);
  CHECK(origins.size() == 1);
  CHECK(*prints.begin() == program_fingerprint(s.programs.at(0)));
}

TEST_CASE("marker moves reach robots within the latency bound") {
  auto s = load_script("scenarios/standard.script");
  s.cues.clear();
  Simulation sim(s);
  sim.apply_cue({std::nullopt, CueCommand::Launch});
  sim.run_until(8.0);
  Cue move{std::nullopt, CueCommand::Marker};
  move.x = 1.5;
  move.y = 9.0;
  const double t0 = sim.time();
  sim.apply_cue(move);
  // one-way delay is bounded by mean + jitter, observed on the next step grid
  const double bound = (s.net.latency_mean_ms + s.net.latency_jitter_ms) / 1000.0 + kSimDt;
  while (sim.time() < t0 + bound + 1e-9) sim.step();
  for (const auto& r : sim.robots()) {
    CAPTURE(r.id);
    REQUIRE(r.marker.has_value());
    CHECK(r.marker->x == doctest::Approx(1.5));
    CHECK(r.marker->y == doctest::Approx(9.0));
  }
  CHECK(sim.marker_position()->x == 1.5);
}

TEST_CASE("manual cue errors") {
  auto s = firework(1.0);
  Simulation sim(s);
  Cue bad{std::nullopt, CueCommand::Switch};
  bad.program = "nope";
  CHECK_THROWS_AS(sim.apply_cue(bad), Error);
  s.marker.reset();
  s.cues.clear();
  Simulation no_marker(s);
  CHECK_THROWS_AS(no_marker.apply_cue({std::nullopt, CueCommand::Marker}), Error);
}

TEST_CASE("trace files round trip and figures export") {
  auto s = load_script("scenarios/pursuit.script");
  s.duration = 8.0;
  const auto trace = run(s);
  const auto dir = scratch("rt");
  write_trace(trace, dir.string());
  const auto back = load_trace(dir.string());
  CHECK(back.trajectories.size() == trace.trajectories.size());
  CHECK(back.bandwidth.size() == trace.bandwidth.size());
  CHECK(back.events.size() == trace.events.size());
  CHECK(back.cues.size() == trace.cues.size());
  CHECK(back.phases.size() == trace.phases.size());
  CHECK(back.programs.size() == trace.programs.size());
  const auto dir2 = scratch("rt2");
  write_trace(back, dir2.string());
  for (const char* f : {"trace.json", "trajectories.csv", "bandwidth.csv", "events.csv", "cues.csv", "phases.csv"}) {
    CAPTURE(f);
    CHECK(slurp(dir / f) == slurp(dir2 / f));
  }

  const auto bw = replay_figure(back, Figure::Bandwidth, (dir / "fig").string());
  CHECK(bw.paths.size() == 3);
  // one event row per cue
  std::ifstream ev(dir / "fig" / "bandwidth_events.csv");
  std::string line;
  int rows = -1;
  while (std::getline(ev, line)) ++rows;
  CHECK(rows == static_cast<int>(trace.cues.size()));

  replay_figure(back, Figure::UwbVsTruth, (dir / "fig").string());
  std::ifstream uwb(dir / "fig" / "uwb_vs_truth.csv");
  std::getline(uwb, line);
  int n = 0;
  while (std::getline(uwb, line)) {
    ++n;
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
  }
  CHECK(n > 0);

  fs::remove(dir / "bandwidth.csv");
  const auto stripped = load_trace(dir.string());
  try {
    replay_figure(stripped, Figure::Bandwidth, (dir / "fig2").string());
    FAIL("expected MissingChannel");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingChannel);
    CHECK(std::string(e.what()).find("bandwidth") != std::string::npos);
  }
  CHECK_THROWS_AS(load_trace((dir / "nowhere").string()), Error);
  CHECK(figure_from_string("uwb") == Figure::UwbVsTruth);
  CHECK(figure_from_string("bandwidth") == Figure::Bandwidth);
  CHECK_THROWS_AS(figure_from_string("radar"), Error);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
