#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swarmstage/behavior.hpp"
#include "swarmstage/bus.hpp"
#include "swarmstage/fusion.hpp"
#include "swarmstage/kinematics.hpp"
#include "swarmstage/uwb.hpp"

namespace swarmstage {

struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const noexcept { return x1 - x0; }
  double depth() const noexcept { return y1 - y0; }
  bool contains(Vec2 p) const noexcept { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

/// Spawn on a circle instead of the spawn rectangle; ids run clockwise so a
/// pursuit ring with a tangential term starts on its circular orbit.
struct RingFormation {
  double cx = 3.0;
  double cy = 6.0;
  double radius = 2.0;
};

struct SwarmSpec {
  std::string name;
  RobotClass cls;
  int count = 1;
  Rect spawn;
  /// Motion is confined to the arena; for tabletop swarms it is also the
  /// projector coverage.
  Rect arena;
  std::optional<RingFormation> ring;
  double altitude = 1.0;  // aerial hover height, m
  double tag_height = 0.0;
};

enum class CueCommand { Launch, Switch, Stop, Marker };

struct Cue {
  std::optional<double> at;  // nullopt = manual
  CueCommand command = CueCommand::Stop;
  std::string swarm;    // Launch target; empty = every swarm
  std::string program;  // Switch target
  double x = 0.0;       // Marker
  double y = 0.0;
  MarkerMode marker_mode = MarkerMode::Attractor;
};

struct MarkerSpec {
  double x = 3.0;
  double y = 6.0;
  MarkerMode mode = MarkerMode::Attractor;
};

struct LocalizationConfig {
  double sigma_tdoa = 0.15;
  double uwb_rate_hz = 10.0;
  double lidar_sigma = 0.02;
  double initial_yaw_sigma = 0.05;
  int gray_width_bits = 10;
  double photodiode_baseline = 0.02;  // m between the two tabletop photodiodes
  FusionNoise noise;
  std::optional<std::string> anchors_file;
  /// Debug A/B switch: feed behaviors ground truth instead of fused estimates.
  bool use_truth = false;
};

struct PerformanceScript {
  std::string name = "performance";
  double duration = 60.0;
  std::uint64_t seed = 1;
  bool manual = false;
  std::string program = "firework";
  std::vector<BehaviorProgram> programs;  // loaded from program_files
  std::vector<std::string> program_files;
  Venue venue;
  std::vector<SwarmSpec> swarms;
  std::optional<MarkerSpec> marker;
  int ground_stations = 1;
  std::vector<Cue> cues;
  NetConfig net;
  LocalizationConfig loc;
  std::size_t launch_blob_bytes = 2'000'000;
  int max_nodes = 32;
  double bandwidth_window = 1.0;

  int node_count() const noexcept;
  /// Throws Errc::ConfigInvalid with the offending field path.
  void validate() const;
};

/// Parses a script document; relative program_files resolve against base_dir.
PerformanceScript script_from_json(const nlohmann::json& doc, const std::string& base_dir = ".");
PerformanceScript load_script(const std::string& path);
nlohmann::json script_to_json(const PerformanceScript& script);

}  // namespace swarmstage
