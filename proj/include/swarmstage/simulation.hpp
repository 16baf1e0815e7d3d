#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swarmstage/behavior.hpp"
#include "swarmstage/bus.hpp"
#include "swarmstage/fusion.hpp"
#include "swarmstage/script.hpp"
#include "swarmstage/uwb.hpp"

namespace swarmstage {

inline constexpr std::uint16_t kFirstRobotId = 1;
inline constexpr std::uint16_t kMarkerId = 1000;
inline constexpr std::uint16_t kFirstStationId = 2000;
inline constexpr double kNeighborStaleness = 1.0;  // s

enum class RobotMode : std::uint8_t { Idle, Launching, Active, Stopped };
std::string_view to_string(RobotMode mode) noexcept;

enum class TraceSource : std::uint8_t { Truth, UwbRaw, Fused };
std::string_view to_string(TraceSource source) noexcept;

struct TrajectoryRow {
  double t = 0.0;
  std::uint16_t id = 0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double yaw = 0.0;
  TraceSource source = TraceSource::Truth;
};

struct PhaseRow {
  double t = 0.0;
  std::uint16_t id = 0;
  std::string program;
  int phase = 0;
  RobotMode mode = RobotMode::Idle;
};

struct TraceEvent {
  double t = 0.0;
  std::string kind;  // launch, switch, stop, marker, joined, transfer_complete, cue_error, warning, ...
  std::uint16_t node = 0;
  std::string detail;
};

/// A cue as it was applied, in application order.
struct AppliedCue {
  double t = 0.0;
  CueCommand command = CueCommand::Stop;
  std::string detail;
};

struct RosterEntry {
  std::uint16_t id = 0;
  NodeRole role = NodeRole::Robot;
  int swarm = -1;  // index into script.swarms, robots only
  std::string swarm_name;
  std::string robot_class;
};

/// Program actually installed on a swarm, recorded when it changes.
struct ProgramRecord {
  double t = 0.0;
  std::string swarm;
  std::string robot_class;
  std::string program;
  std::uint64_t fingerprint = 0;
  std::string origin;  // "library" or the program file path
};

struct RunTrace {
  std::uint64_t seed = 0;
  double dt = kSimDt;
  double duration = 0.0;
  nlohmann::json config;
  std::vector<RosterEntry> roster;
  std::vector<ProgramRecord> programs;
  std::vector<TrajectoryRow> trajectories;
  std::vector<BandwidthSample> bandwidth;
  bool has_bandwidth = true;
  std::vector<TraceEvent> events;
  std::vector<AppliedCue> cues;
  std::vector<PhaseRow> phases;
};

/// Per-robot view exposed to tests and snapshots.
struct RobotSnapshot {
  std::uint16_t id = 0;
  int swarm = 0;
  RobotKind kind = RobotKind::HumanScale;
  RobotMode mode = RobotMode::Idle;
  Pose truth;
  Pose fused;
  Vec2 fused_velocity;
  VelocityCommand command;
  std::string program;
  int phase = 0;
  std::optional<Vec2> marker;  // as known by the robot
  MarkerMode marker_mode = MarkerMode::Attractor;
  std::size_t neighbors = 0;
};

/// Called with every behavior input right before step_behavior runs.
using BehaviorProbe = std::function<void(const SelfState&, const NeighborView&)>;

/// Fixed-step closed loop: sense, gossip in, behavior, clamp, kinematics,
/// gossip out. The only owner of simulation state; not thread-safe.
class Simulation {
 public:
  explicit Simulation(PerformanceScript script);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const PerformanceScript& script() const noexcept { return script_; }
  double time() const noexcept { return us_to_seconds(now_); }
  std::int64_t step_count() const noexcept { return steps_; }

  /// Applies a command at the current time, taking the same path over the bus
  /// as a timed cue.
  void apply_cue(const Cue& cue);

  /// Advances one fixed step. Timed cues due at the current time fire first.
  void step();
  void run_until(double t);

  void set_behavior_probe(BehaviorProbe probe) { probe_ = std::move(probe); }

  std::vector<RobotSnapshot> robots() const;
  std::optional<RobotSnapshot> robot(std::uint16_t id) const;
  std::optional<Vec2> marker_position() const;

  const GossipBus& bus() const noexcept { return *bus_; }
  const AnchorConstellation& anchors() const noexcept { return anchors_; }
  const std::vector<BehaviorProgram>& programs() const noexcept { return programs_; }
  /// Program id for a name; files listed in the script shadow library names.
  std::optional<std::size_t> program_id(const std::string& name) const;

  /// Bytes/s on the wire over the trailing window (live telemetry).
  double recent_bandwidth(double window_s = 1.0) const;

  const std::vector<TraceEvent>& events() const noexcept { return trace_.events; }
  /// Trace so far with bandwidth samples filled in.
  RunTrace trace() const;

  /// Socket API snapshot document; events are those at index >= first_event.
  nlohmann::json snapshot(std::size_t first_event = 0) const;

  struct Robot;

 private:
  void setup();
  void fire_due_cues();
  void process_bus_events();
  void sense(Robot& r);
  void gossip_in(Robot& r);
  void act(Robot& r);
  void gossip_out(Robot& r);
  void marker_out();
  void start_program(Robot& r, std::size_t program, SimTime t);
  void record_program(const Robot& r, SimTime t);
  void record_phase(Robot& r);
  void add_event(SimTime t, std::string kind, std::uint16_t node, std::string detail);

  PerformanceScript script_;
  std::unique_ptr<GossipBus> bus_;
  AnchorConstellation anchors_;
  std::vector<BehaviorProgram> programs_;
  std::vector<std::string> program_origin_;
  std::vector<std::unique_ptr<Robot>> robots_;
  std::map<std::uint16_t, std::size_t> robot_index_;
  std::vector<std::uint16_t> stations_;

  struct MarkerState {
    Vec2 position;
    MarkerMode mode = MarkerMode::Attractor;
    std::uint32_t seq = 0;
    SimTime next_broadcast = 0;
    bool moved = false;
  };
  std::optional<MarkerState> marker_;

  SimTime now_ = 0;
  std::int64_t steps_ = 0;
  std::size_t next_cue_ = 0;
  std::uint32_t command_seq_ = 0;
  std::vector<std::pair<SimTime, std::uint64_t>> wire_history_;
  std::map<std::string, ProgramRecord> last_program_record_;
  BehaviorProbe probe_;
  RunTrace trace_;
};

/// Runs a script to its duration.
RunTrace run(const PerformanceScript& script);

// --- trace files ---------------------------------------------------------------

/// Writes trace.json, trajectories.csv, bandwidth.csv, events.csv, cues.csv
/// and phases.csv. Output is byte-identical for identical traces.
void write_trace(const RunTrace& trace, const std::string& dir);
RunTrace load_trace(const std::string& dir);

enum class Figure { Bandwidth, UwbVsTruth };
Figure figure_from_string(std::string_view name);

struct FigureFiles {
  std::vector<std::string> paths;
};

/// Plot-ready CSV series plus a declarative plot description. Throws
/// Errc::MissingChannel naming an absent series.
FigureFiles replay_figure(const RunTrace& trace, Figure which, const std::string& out_dir);

}  // namespace swarmstage
