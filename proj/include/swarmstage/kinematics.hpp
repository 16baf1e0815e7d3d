#pragma once

#include <string_view>

#include "swarmstage/vec2.hpp"

namespace swarmstage {

enum class RobotKind { Tabletop, Aerial, HumanScale };

std::string_view to_string(RobotKind kind) noexcept;
/// Accepts the canonical names ("Tabletop", "Aerial", "HumanScale") case-insensitively.
RobotKind robot_kind_from_string(std::string_view name);

/// Dynamic envelope of one swarm platform.
struct RobotClass {
  RobotKind kind = RobotKind::HumanScale;
  double max_speed = 1.0;    // m/s
  double max_accel = 1.0;    // m/s^2
  double wheel_track = 0.4;  // m, ground classes only
  bool has_altitude = false;

  static RobotClass tabletop();
  static RobotClass aerial();
  static RobotClass human_scale();
  static RobotClass defaults_for(RobotKind kind);

  bool is_ground() const noexcept { return kind != RobotKind::Aerial; }
  /// Throws Errc::InvalidInput when the envelope is inconsistent.
  void validate() const;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double yaw = 0.0;  // rad, (-pi, pi]

  Vec2 position() const noexcept { return {x, y}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

struct VelocityCommand {
  double vx = 0.0;
  double vy = 0.0;
  double vz = 0.0;

  Vec2 planar() const noexcept { return {vx, vy}; }
  friend bool operator==(const VelocityCommand&, const VelocityCommand&) = default;
};

struct WheelSpeeds {
  double left = 0.0;   // m/s
  double right = 0.0;  // m/s
};

/// Velocity-tracking state of a holonomic aerial robot.
struct AerialState {
  Pose pose;
  VelocityCommand velocity;  // attained velocity
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double angle) noexcept;

/// Scales the planar part of cmd so its norm does not exceed max_speed; vz is
/// clamped to the same bound independently.
VelocityCommand clamp_command(VelocityCommand cmd, double max_speed) noexcept;

/// Exact arc integration of a differential-drive base over dt.
Pose diffdrive_step(const Pose& pose, WheelSpeeds wheels, double track, double dt);

struct HeadingController {
  double k_yaw = 2.0;  // 1/s
};

/// Converts a holonomic velocity intent into wheel speeds for a ground class.
/// Throws Errc::WrongClass for aerial classes.
WheelSpeeds velocity_to_wheels(const VelocityCommand& cmd, const Pose& pose, const RobotClass& cls,
                               HeadingController ctrl = {});

/// Velocity tracking with an acceleration clamp followed by an Euler position
/// update. Yaw follows the course while the robot moves. Throws Errc::WrongClass
/// for ground classes.
AerialState aerial_step(const AerialState& state, const VelocityCommand& cmd, const RobotClass& cls,
                        double dt);

/// Fixed simulation step used everywhere (20 Hz).
inline constexpr double kSimDt = 0.05;

}  // namespace swarmstage
