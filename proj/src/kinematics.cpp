#include "swarmstage/kinematics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <string>

#include "swarmstage/error.hpp"

namespace swarmstage {

namespace {

constexpr double kStraightLineOmega = 1e-9;
constexpr double kCourseSpeed = 1e-3;

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char l, char r) {
           return std::tolower(static_cast<unsigned char>(l)) == std::tolower(static_cast<unsigned char>(r));
         });
}

void require_finite(std::initializer_list<double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidInput, std::string(what) + ": non-finite input");
  }
}

}  // namespace

std::string_view to_string(RobotKind kind) noexcept {
  switch (kind) {
    case RobotKind::Tabletop: return "Tabletop";
    case RobotKind::Aerial: return "Aerial";
    case RobotKind::HumanScale: return "HumanScale";
  }
  return "?";
}

RobotKind robot_kind_from_string(std::string_view name) {
  // "HumanScale", "human_scale" and "human-scale" all name the same class.
  std::string bare;
  for (char c : name) {
    if (c != '_' && c != '-') bare += c;
  }
  for (auto k : {RobotKind::Tabletop, RobotKind::Aerial, RobotKind::HumanScale}) {
    if (iequals(bare, to_string(k))) return k;
  }
  throw Error(Errc::ConfigInvalid, "unknown robot class '" + std::string(name) + "'");
}

RobotClass RobotClass::tabletop() { return {RobotKind::Tabletop, 0.5, 1.0, 0.02, false}; }
RobotClass RobotClass::aerial() { return {RobotKind::Aerial, 1.5, 2.0, 0.0, true}; }
RobotClass RobotClass::human_scale() { return {RobotKind::HumanScale, 1.0, 1.0, 0.4, false}; }

RobotClass RobotClass::defaults_for(RobotKind kind) {
  switch (kind) {
    case RobotKind::Tabletop: return tabletop();
    case RobotKind::Aerial: return aerial();
    case RobotKind::HumanScale: return human_scale();
  }
  return human_scale();
}

void RobotClass::validate() const {
  if (!(max_speed > 0.0) || !(max_accel > 0.0)) {
    throw Error(Errc::InvalidInput, "robot class: max_speed and max_accel must be positive");
  }
  if (is_ground() && !(wheel_track > 0.0)) {
    throw Error(Errc::InvalidInput, "robot class: ground classes need wheel_track > 0");
  }
  if (has_altitude != (kind == RobotKind::Aerial)) {
    throw Error(Errc::InvalidInput, "robot class: has_altitude must be set iff the class is Aerial");
  }
}

double normalize_angle(double angle) noexcept {
  double a = std::remainder(angle, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

VelocityCommand clamp_command(VelocityCommand cmd, double max_speed) noexcept {
  const double n = std::hypot(cmd.vx, cmd.vy);
  if (n > max_speed && n > 0.0) {
    const double s = max_speed / n;
    cmd.vx *= s;
    cmd.vy *= s;
  }
  cmd.vz = std::clamp(cmd.vz, -max_speed, max_speed);
  return cmd;
}

Pose diffdrive_step(const Pose& pose, WheelSpeeds wheels, double track, double dt) {
  require_finite({pose.x, pose.y, pose.z, pose.yaw, wheels.left, wheels.right, track, dt}, "diffdrive_step");
  if (!(dt > 0.0) || !(track > 0.0)) throw Error(Errc::InvalidInput, "diffdrive_step: dt and track must be positive");

  const double v = 0.5 * (wheels.left + wheels.right);
  const double omega = (wheels.right - wheels.left) / track;

  Pose out = pose;
  if (std::abs(omega) < kStraightLineOmega) {
    out.x += v * dt * std::cos(pose.yaw);
    out.y += v * dt * std::sin(pose.yaw);
    out.yaw = normalize_angle(pose.yaw);
    return out;
  }
  const double yaw1 = pose.yaw + omega * dt;
  const double radius = v / omega;
  out.x += radius * (std::sin(yaw1) - std::sin(pose.yaw));
  out.y -= radius * (std::cos(yaw1) - std::cos(pose.yaw));
  out.yaw = normalize_angle(yaw1);
  return out;
}

WheelSpeeds velocity_to_wheels(const VelocityCommand& cmd, const Pose& pose, const RobotClass& cls,
                               HeadingController ctrl) {
  if (!cls.is_ground()) throw Error(Errc::WrongClass, "velocity_to_wheels: aerial class has no wheels");
  require_finite({cmd.vx, cmd.vy, pose.yaw}, "velocity_to_wheels");

  const double speed = std::hypot(cmd.vx, cmd.vy);
  if (speed == 0.0) return {};

  const double heading_error = normalize_angle(std::atan2(cmd.vy, cmd.vx) - pose.yaw);
  const double omega = ctrl.k_yaw * heading_error;
  const double v = speed * std::max(0.0, std::cos(heading_error));
  const double half = 0.5 * omega * cls.wheel_track;
  WheelSpeeds w{v - half, v + half};

  // Scale both wheels together so the turning curvature survives the clamp.
  const double peak = std::max(std::abs(w.left), std::abs(w.right));
  if (peak > cls.max_speed) {
    const double s = cls.max_speed / peak;
    w.left *= s;
    w.right *= s;
  }
  return w;
}

AerialState aerial_step(const AerialState& state, const VelocityCommand& cmd, const RobotClass& cls,
                        double dt) {
  if (cls.kind != RobotKind::Aerial) throw Error(Errc::WrongClass, "aerial_step: ground class");
  require_finite({state.pose.x, state.pose.y, state.pose.z, state.pose.yaw, state.velocity.vx,
                  state.velocity.vy, state.velocity.vz, cmd.vx, cmd.vy, cmd.vz, dt},
                 "aerial_step");
  if (!(dt > 0.0)) throw Error(Errc::InvalidInput, "aerial_step: dt must be positive");

  const VelocityCommand target = clamp_command(cmd, cls.max_speed);
  double dvx = target.vx - state.velocity.vx;
  double dvy = target.vy - state.velocity.vy;
  double dvz = target.vz - state.velocity.vz;
  const double dv = std::sqrt(dvx * dvx + dvy * dvy + dvz * dvz);
  const double dv_max = cls.max_accel * dt;
  if (dv > dv_max) {
    const double s = dv_max / dv;
    dvx *= s;
    dvy *= s;
    dvz *= s;
  }

  AerialState out = state;
  out.velocity = clamp_command({state.velocity.vx + dvx, state.velocity.vy + dvy, state.velocity.vz + dvz},
                               cls.max_speed);
  out.pose.x += out.velocity.vx * dt;
  out.pose.y += out.velocity.vy * dt;
  out.pose.z += out.velocity.vz * dt;
  if (out.pose.z <= 0.0) {
    out.pose.z = 0.0;
    // Floor contact bleeds off descent speed with whatever acceleration budget
    // the tracking step left, so the accel bound also holds across contact.
    if (out.velocity.vz < 0.0) {
      const double dxy2 = std::pow(out.velocity.vx - state.velocity.vx, 2) +
                          std::pow(out.velocity.vy - state.velocity.vy, 2);
      const double dz_max = std::sqrt(std::max(0.0, dv_max * dv_max - dxy2));
      out.velocity.vz = std::min(0.0, state.velocity.vz + dz_max);
    }
  }
  if (std::hypot(out.velocity.vx, out.velocity.vy) > kCourseSpeed) {
    out.pose.yaw = normalize_angle(std::atan2(out.velocity.vy, out.velocity.vx));
  } else {
    out.pose.yaw = normalize_angle(out.pose.yaw);
  }
  return out;
}

}  // namespace swarmstage
