#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "swarmstage/kinematics.hpp"
#include "swarmstage/vec2.hpp"

namespace swarmstage {

/// Where a pose value came from. The closed loop must only ever feed Fused
/// values into behaviors; Truth exists for A/B debugging.
enum class PoseSource : std::uint8_t { Fused, Truth };

struct NeighborInfo {
  std::uint16_t id = 0;
  Vec2 rel_pos;   // self -> neighbor, m
  Vec2 velocity;  // m/s
  int behavior_phase = 0;
  PoseSource source = PoseSource::Fused;
};

enum class MarkerMode : std::uint8_t { Attractor = 0, Repulsor = 1 };

struct NeighborView {
  std::vector<NeighborInfo> neighbors;  // never contains self
  std::optional<Vec2> marker;           // absolute position
  MarkerMode marker_mode = MarkerMode::Attractor;
  /// Sorted member ids of the swarm, used for the pursuit ring. When empty the
  /// ring is formed from self plus the visible neighbors.
  std::vector<std::uint16_t> roster;
};

struct SelfState {
  std::uint16_t id = 0;
  Pose pose;
  Vec2 velocity;
  PoseSource source = PoseSource::Fused;
};

enum class Primitive : std::uint8_t { Aggregate, Diffuse, Flock, LennardJones, Pursuit, Still };

std::string_view to_string(Primitive p) noexcept;
Primitive primitive_from_string(std::string_view name);

struct AggregateParams {
  double gain = 0.5;         // 1/s
  double stop_radius = 0.1;  // m
  double max_speed = 0.0;    // m/s cap on the intent, 0 = uncapped
  bool require_marker = false;
};

struct DiffuseParams {
  double gain = 1.0;
  double radius = 2.0;  // m
  /// When positive the phase ignores neighbors and moves radially away from
  /// the marker at this speed (firework burst).
  double radial_speed = 0.0;
  /// Radial speed decays linearly to zero over the phase duration.
  bool fade = false;
};

struct FlockParams {
  double w_sep = 1.0;
  double w_ali = 0.5;
  double w_coh = 0.05;
  double r_sep = 0.5;                                    // m
  double radius = std::numeric_limits<double>::infinity();  // interaction radius
};

struct LennardJonesParams {
  double delta = 1.0;  // equilibrium distance, m
  double eps = 1.0;
};

struct PursuitParams {
  double gain = 1.0;
  double tangential = 0.0;
};

struct StillParams {};

using PhaseParams =
    std::variant<AggregateParams, DiffuseParams, FlockParams, LennardJonesParams, PursuitParams, StillParams>;

struct BehaviorPhase {
  PhaseParams params;
  double duration = std::numeric_limits<double>::infinity();  // s

  Primitive primitive() const noexcept { return static_cast<Primitive>(params.index()); }
  void validate() const;
};

struct BehaviorProgram {
  std::string name;
  std::vector<BehaviorPhase> phases;
  bool loop = false;

  void validate() const;
  double total_duration() const noexcept;
};

// --- primitives -----------------------------------------------------------
// Each returns the unclamped intent; callers clamp with clamp_command.

VelocityCommand aggregate_velocity(const Pose& self, const NeighborView& view, const AggregateParams& p);
VelocityCommand diffuse_velocity(const Pose& self, const NeighborView& view, const DiffuseParams& p);
VelocityCommand flock_velocity(const Pose& self, Vec2 self_velocity, const NeighborView& view,
                               const FlockParams& p);
/// Signed 4-2 virtual force magnitude; positive attracts toward the neighbor.
double lennard_jones_magnitude(double d, double delta, double eps);
VelocityCommand lj_velocity(const Pose& self, const NeighborView& view, const LennardJonesParams& p);
VelocityCommand pursuit_velocity(std::uint16_t self_id, const Pose& self, const NeighborView& view,
                                 const PursuitParams& p);

/// Deterministic unit vector for degenerate geometry (robot exactly at the
/// attractor or burst center).
Vec2 tie_break_direction(std::uint16_t id) noexcept;

struct FireworkParams {
  double v_in = 0.3;
  double v_out = 0.8;
  double t_gather = 8.0;
  double t_hold = 2.0;
  double t_burst = 3.0;
  double t_fade = 3.0;
  double gather_gain = 1.0;
  double stop_radius = 0.05;
};

BehaviorProgram firework_program(const FireworkParams& params = {});

struct BehaviorOutput {
  VelocityCommand command;
  std::size_t phase_index = 0;
  /// The active phase needed the marker and none was known.
  bool cue_error = false;
};

/// Active phase for an elapsed program time; loops when the program loops,
/// otherwise holds the final phase. Returns the phase index and the time since
/// that phase started.
std::pair<std::size_t, double> active_phase(const BehaviorProgram& program, double t_in_program);

BehaviorOutput step_behavior(const BehaviorProgram& program, double t_in_program, const SelfState& self,
                             const NeighborView& view);

/// The shipped library of twelve named programs. Index order is stable and is
/// the program id carried in gossip.
const std::vector<BehaviorProgram>& behavior_library();

// --- serialization ----------------------------------------------------------

nlohmann::json program_to_json(const BehaviorProgram& program);
BehaviorProgram program_from_json(const nlohmann::json& doc);
BehaviorProgram load_program_file(const std::string& path);
void save_program_file(const BehaviorProgram& program, const std::string& path);
/// FNV-1a over the canonical JSON dump; identical programs hash identically.
std::uint64_t program_fingerprint(const BehaviorProgram& program);

}  // namespace swarmstage
