#include <cmath>
#include <limits>
#include <numbers>

#include <doctest.h>

#include "swarmstage/error.hpp"
#include "swarmstage/kinematics.hpp"
#include "swarmstage/rng.hpp"

using namespace swarmstage;

namespace {

// Independent integrator: n substeps, each moving along the heading at the
// middle of the substep. Plain forward Euler carries an O(v*w*dt^2/n)
// truncation error (about 1e-5 m at 1e4 substeps for the fastest turns we
// sweep), which would swamp the 1e-6 comparison.
Pose substep_oracle(Pose p, WheelSpeeds w, double track, double dt, int n = 10000) {
  const double v = (w.left + w.right) / 2.0;
  const double omega = (w.right - w.left) / track;
  const double h = dt / n;
  double yaw = p.yaw;
  for (int i = 0; i < n; ++i) {
    const double mid = yaw + 0.5 * omega * h;
    p.x += v * std::cos(mid) * h;
    p.y += v * std::sin(mid) * h;
    yaw += omega * h;
  }
  p.yaw = std::remainder(yaw, 2.0 * std::numbers::pi);
  if (p.yaw <= -std::numbers::pi) p.yaw += 2.0 * std::numbers::pi;
  return p;
}

bool yaw_in_range(double yaw) { return yaw > -std::numbers::pi && yaw <= std::numbers::pi; }

}  // namespace

TEST_CASE("diffdrive_step: equal wheels drive straight") {
  const Pose p = diffdrive_step({0, 0, 0, 0}, {1, 1}, 0.1, 1.0);
  CHECK(p.x == doctest::Approx(1.0));
  CHECK(p.y == 0.0);
  CHECK(p.yaw == 0.0);
}

TEST_CASE("diffdrive_step: opposite wheels spin in place") {
  const Pose p = diffdrive_step({0, 0, 0, 0}, {-0.5, 0.5}, 0.1, 1.0);
  CHECK(p.x == 0.0);
  CHECK(p.y == 0.0);
  CHECK(p.yaw == doctest::Approx(10.0 - 4.0 * std::numbers::pi).epsilon(1e-12));
  CHECK(p.yaw == doctest::Approx(-2.566).epsilon(1e-3));
  const Pose o = substep_oracle({0, 0, 0, 0}, {-0.5, 0.5}, 0.1, 1.0);
  CHECK(std::hypot(p.x - o.x, p.y - o.y) < 1e-6);
}

TEST_CASE("diffdrive_step: arc matches closed form and the substep oracle") {
  const Pose p = diffdrive_step({0, 0, 0, 0}, {0.1, 0.2}, 0.1, 1.0);
  CHECK(p.x == doctest::Approx(0.15 * std::sin(1.0)).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(0.15 * (1.0 - std::cos(1.0))).epsilon(1e-12));
  CHECK(p.yaw == doctest::Approx(1.0));
  CHECK(p.x == doctest::Approx(0.1262).epsilon(1e-3));
  CHECK(p.y == doctest::Approx(0.0690).epsilon(1e-3));
  const Pose o = substep_oracle({0, 0, 0, 0}, {0.1, 0.2}, 0.1, 1.0);
  CHECK(std::hypot(p.x - o.x, p.y - o.y) < 1e-6);
}

TEST_CASE("diffdrive_step: property sweep against the substep oracle") {
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    const Pose start{rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0, rng.uniform(-3.14, 3.14)};
    const WheelSpeeds w{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double track = rng.uniform(0.02, 0.5);
    const double dt = rng.uniform(1e-3, 0.1);
    const Pose p = diffdrive_step(start, w, track, dt);
    const Pose o = substep_oracle(start, w, track, dt);
    CHECK(std::hypot(p.x - o.x, p.y - o.y) < 1e-6);
    CHECK(yaw_in_range(p.yaw));
  }
}

TEST_CASE("diffdrive_step: exact invariants") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Pose start{rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0, normalize_angle(rng.uniform(-4, 4))};
    const double s = rng.uniform(-1, 1);
    const Pose straight = diffdrive_step(start, {s, s}, 0.2, 0.05);
    CHECK(straight.yaw == start.yaw);
    const Pose spin = diffdrive_step(start, {-s, s}, 0.2, 0.05);
    CHECK(spin.x == start.x);
    CHECK(spin.y == start.y);
  }
}

TEST_CASE("diffdrive_step: rejects bad input") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(diffdrive_step({nan, 0, 0, 0}, {1, 1}, 0.1, 0.1), Error);
  CHECK_THROWS_AS(diffdrive_step({0, 0, 0, 0}, {1, nan}, 0.1, 0.1), Error);
  CHECK_THROWS_AS(diffdrive_step({0, 0, 0, 0}, {1, 1}, 0.0, 0.1), Error);
  CHECK_THROWS_AS(diffdrive_step({0, 0, 0, 0}, {1, 1}, 0.1, 0.0), Error);
  try {
    diffdrive_step({0, 0, 0, 0}, {1, 1}, 0.1, -1.0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidInput);
  }
}

TEST_CASE("normalize_angle maps into (-pi, pi]") {
  CHECK(normalize_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(normalize_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(normalize_angle(3 * std::numbers::pi) == doctest::Approx(std::numbers::pi));
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(yaw_in_range(normalize_angle(rng.uniform(-100, 100))));
}

TEST_CASE("velocity_to_wheels") {
  RobotClass cls = RobotClass::tabletop();
  cls.wheel_track = 0.1;
  cls.max_speed = 2.0;

  SUBCASE("zero command") {
    const auto w = velocity_to_wheels({0, 0, 0}, {0, 0, 0, 0.7}, cls);
    CHECK(w.left == 0.0);
    CHECK(w.right == 0.0);
  }
  SUBCASE("aligned heading") {
    const auto w = velocity_to_wheels({1, 0, 0}, {0, 0, 0, 0}, cls);
    CHECK(w.left == doctest::Approx(1.0));
    CHECK(w.right == doctest::Approx(1.0));
  }
  SUBCASE("perpendicular command turns in place") {
    // v = 1 * cos(pi/2) = 0, w = 2 * pi/2 = pi, wheels = -/+ w * track / 2
    const auto w = velocity_to_wheels({0, 1, 0}, {0, 0, 0, 0}, cls);
    CHECK(w.left == doctest::Approx(-std::numbers::pi * 0.05));
    CHECK(w.right == doctest::Approx(std::numbers::pi * 0.05));
    CHECK(w.right == doctest::Approx(0.157).epsilon(1e-2));
  }
  SUBCASE("outputs respect max_speed") {
    RobotClass slow = RobotClass::human_scale();
    Rng rng(9);
    for (int i = 0; i < 500; ++i) {
      const VelocityCommand c{rng.uniform(-5, 5), rng.uniform(-5, 5), 0};
      const auto w = velocity_to_wheels(c, {0, 0, 0, rng.uniform(-3, 3)}, slow);
      CHECK(std::abs(w.left) <= slow.max_speed + 1e-12);
      CHECK(std::abs(w.right) <= slow.max_speed + 1e-12);
    }
  }
  SUBCASE("aerial class is rejected") {
    try {
      velocity_to_wheels({1, 0, 0}, {}, RobotClass::aerial());
      FAIL("expected WrongClass");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::WrongClass);
    }
  }
}

TEST_CASE("aerial_step") {
  RobotClass cls = RobotClass::aerial();

  SUBCASE("hover stays put") {
    const AerialState s{{1, 2, 1, 0.3}, {}};
    const auto n = aerial_step(s, {0, 0, 0}, cls, 0.05);
    CHECK(n.pose == s.pose);
  }
  SUBCASE("acceleration clamp from rest") {
    cls.max_accel = 0.5;
    const auto n = aerial_step({}, {1, 0, 0}, cls, 1.0);
    CHECK(n.velocity.vx == doctest::Approx(0.5));
    CHECK(n.pose.x == doctest::Approx(0.5));
  }
  SUBCASE("descent stops at the floor") {
    const AerialState s{{0, 0, 0.02, 0}, {0, 0, -1}};
    const auto n = aerial_step(s, {0, 0, -1.5}, cls, 0.1);
    CHECK(n.pose.z == 0.0);
    // contact uses the full 0.2 m/s budget to slow the descent
    CHECK(n.velocity.vz == doctest::Approx(-0.8));
    AerialState s2 = n;
    for (int i = 0; i < 10; ++i) s2 = aerial_step(s2, {0, 0, -1.5}, cls, 0.1);
    CHECK(s2.pose.z == 0.0);
    CHECK(s2.velocity.vz == 0.0);
  }
  SUBCASE("speed and acceleration bounds over random command sequences") {
    Rng rng(21);
    AerialState s;
    for (int i = 0; i < 2000; ++i) {
      const VelocityCommand c{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-2, 2)};
      const auto n = aerial_step(s, clamp_command(c, cls.max_speed), cls, kSimDt);
      CHECK(std::hypot(n.velocity.vx, n.velocity.vy) <= cls.max_speed + 1e-9);
      const double dv = std::sqrt(std::pow(n.velocity.vx - s.velocity.vx, 2) +
                                  std::pow(n.velocity.vy - s.velocity.vy, 2) +
                                  std::pow(n.velocity.vz - s.velocity.vz, 2));
      CHECK(dv / kSimDt <= cls.max_accel + 1e-9);
      CHECK(n.pose.z >= 0.0);
      CHECK(yaw_in_range(n.pose.yaw));
      s = n;
    }
  }
  SUBCASE("ground class is rejected") {
    CHECK_THROWS_AS(aerial_step({}, {1, 0, 0}, RobotClass::human_scale(), 0.05), Error);
  }
}

TEST_CASE("clamp_command keeps direction") {
  const auto c = clamp_command({3, 4, 0}, 1.0);
  CHECK(std::hypot(c.vx, c.vy) == doctest::Approx(1.0));
  CHECK(c.vx / c.vy == doctest::Approx(0.75));
  const auto u = clamp_command({0.3, 0.4, 0}, 1.0);
  CHECK(u.vx == 0.3);
}

TEST_CASE("class defaults validate") {
  for (auto k : {RobotKind::Tabletop, RobotKind::Aerial, RobotKind::HumanScale}) {
    const auto c = RobotClass::defaults_for(k);
    CHECK_NOTHROW(c.validate());
    CHECK(c.has_altitude == (k == RobotKind::Aerial));
  }
  RobotClass bad = RobotClass::tabletop();
  bad.wheel_track = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(robot_kind_from_string("human_scale") == RobotKind::HumanScale);
  CHECK(robot_kind_from_string("AERIAL") == RobotKind::Aerial);
  CHECK_THROWS_AS(robot_kind_from_string("boat"), Error);
}
