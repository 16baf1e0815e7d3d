#include "swarmstage/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "swarmstage/error.hpp"
#include "swarmstage/kinematics.hpp"

namespace swarmstage {

namespace {

constexpr double kCovTol = 1e-9;

void symmetrize(StateCovariance& p) { p = 0.5 * (p + p.transpose()).eval(); }

}  // namespace

std::pair<double, double> blend_yaw_rate(double odom_rate, double imu_rate, const FusionNoise& noise) {
  const double wo = 1.0 / (noise.odom_yaw_rate * noise.odom_yaw_rate);
  const double wi = 1.0 / (noise.imu_yaw_rate * noise.imu_yaw_rate);
  return {(wo * odom_rate + wi * imu_rate) / (wo + wi), 1.0 / (wo + wi)};
}

void check_covariance(const StateCovariance& p) {
  if (!p.allFinite()) throw Error(Errc::ContractViolation, "covariance has non-finite entries");
  if ((p - p.transpose()).cwiseAbs().maxCoeff() >= kCovTol) {
    throw Error(Errc::ContractViolation, "covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<StateCovariance> eig(p, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()(0) <= -kCovTol) throw Error(Errc::ContractViolation, "covariance is not positive semidefinite");
}

FusedEstimate kf_predict(const FusedEstimate& est, OdometryInput odom, double imu_yaw_rate, double dt,
                         const FusionNoise& noise) {
  if (!(dt > 0.0)) throw Error(Errc::InvalidInput, "kf_predict: dt must be positive");
  if (!std::isfinite(odom.v) || !std::isfinite(odom.omega) || !std::isfinite(imu_yaw_rate)) {
    throw Error(Errc::InvalidInput, "kf_predict: non-finite input");
  }
  check_covariance(est.covariance);

  const auto [omega, omega_var] = blend_yaw_rate(odom.omega, imu_yaw_rate, noise);
  const StateVector& s = est.state;
  const double yaw = s(kYaw);
  const double c = std::cos(yaw);
  const double sn = std::sin(yaw);
  const double turn = omega * dt;
  const double ct = std::cos(turn);
  const double st = std::sin(turn);

  FusedEstimate out = est;
  out.t = est.t + dt;
  out.state(kX) = s(kX) + odom.v * c * dt;
  out.state(kY) = s(kY) + odom.v * sn * dt;
  out.state(kVx) = ct * s(kVx) - st * s(kVy);
  out.state(kVy) = st * s(kVx) + ct * s(kVy);
  out.state(kYaw) = normalize_angle(yaw + turn);

  StateCovariance f = StateCovariance::Identity();
  f(kX, kYaw) = -odom.v * sn * dt;
  f(kY, kYaw) = odom.v * c * dt;
  f(kVx, kVx) = ct;
  f(kVx, kVy) = -st;
  f(kVy, kVx) = st;
  f(kVy, kVy) = ct;

  // Input Jacobian with respect to (v, omega).
  Eigen::Matrix<double, 5, 2> g = Eigen::Matrix<double, 5, 2>::Zero();
  g(kX, 0) = c * dt;
  g(kY, 0) = sn * dt;
  g(kVx, 1) = dt * (-st * s(kVx) - ct * s(kVy));
  g(kVy, 1) = dt * (ct * s(kVx) - st * s(kVy));
  g(kYaw, 1) = dt;
  const double sigma_v = std::max(noise.odom_speed_frac * std::abs(odom.v), noise.odom_speed_floor);
  const Eigen::Vector2d u(sigma_v * sigma_v, omega_var);

  StateVector qc;
  qc << noise.q_position, noise.q_position, noise.q_velocity, noise.q_velocity, noise.q_yaw;

  out.covariance = f * est.covariance * f.transpose() + g * u.asDiagonal() * g.transpose();
  out.covariance.diagonal() += qc * dt;
  symmetrize(out.covariance);
  return out;
}

FusedEstimate kf_update_velocity(const FusedEstimate& est, double v, const FusionNoise& noise) {
  check_covariance(est.covariance);
  const double yaw = est.state(kYaw);
  const Eigen::Vector2d z(v * std::cos(yaw), v * std::sin(yaw));
  const double r = noise.velocity_sigma * noise.velocity_sigma;

  const Eigen::Matrix2d s = est.covariance.block<2, 2>(kVx, kVx) + r * Eigen::Matrix2d::Identity();
  const Eigen::Matrix<double, 5, 2> pht = est.covariance.block<5, 2>(0, kVx);
  const Eigen::Matrix<double, 5, 2> k = pht * s.inverse();
  const Eigen::Vector2d innov = z - est.state.segment<2>(kVx);

  FusedEstimate out = est;
  out.state += k * innov;
  out.state(kYaw) = normalize_angle(out.state(kYaw));
  Eigen::Matrix<double, 2, 5> h = Eigen::Matrix<double, 2, 5>::Zero();
  h(0, kVx) = 1.0;
  h(1, kVy) = 1.0;
  const StateCovariance ikh = StateCovariance::Identity() - k * h;
  out.covariance = ikh * est.covariance * ikh.transpose() + r * k * k.transpose();
  symmetrize(out.covariance);
  return out;
}

UwbUpdateResult kf_update_uwb(const FusedEstimate& est, const Eigen::Vector2d& meas_xy, const Eigen::Matrix2d& r,
                              const FusionNoise& noise) {
  check_covariance(est.covariance);
  if (!r.allFinite() || std::abs(r(0, 1) - r(1, 0)) > kCovTol * std::max(1.0, r.cwiseAbs().maxCoeff())) {
    throw Error(Errc::ContractViolation, "UWB measurement covariance must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> reig(r, Eigen::EigenvaluesOnly);
  if (reig.eigenvalues()(0) < -kCovTol * std::max(1.0, reig.eigenvalues()(1))) {
    throw Error(Errc::ContractViolation, "UWB measurement covariance must be positive semidefinite");
  }

  UwbUpdateResult out{est, UpdateStatus::Applied};
  const Eigen::Matrix2d s = est.covariance.block<2, 2>(kX, kX) + r;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> seig(s, Eigen::EigenvaluesOnly);
  const double smin = seig.eigenvalues()(0);
  const double smax = seig.eigenvalues()(1);
  if (!(smin > 1e-15 * std::max(1.0, smax))) {
    spdlog::warn("UWB update skipped: singular innovation covariance");
    out.status = UpdateStatus::Singular;
    return out;
  }
  const Eigen::Matrix2d s_inv = s.inverse();
  const Eigen::Vector2d innov = meas_xy - est.state.head<2>();
  const double nis = innov.dot(s_inv * innov);
  out.estimate.last_innovation = innov;
  out.estimate.last_nis = nis;
  if (nis > noise.gate_sigma * noise.gate_sigma) {
    spdlog::debug("UWB update gated (NIS {:.2f})", nis);
    out.status = UpdateStatus::Gated;
    return out;
  }

  const Eigen::Matrix<double, 5, 2> k = est.covariance.block<5, 2>(0, kX) * s_inv;
  out.estimate.state += k * innov;
  out.estimate.state(kYaw) = normalize_angle(out.estimate.state(kYaw));
  Eigen::Matrix<double, 2, 5> h = Eigen::Matrix<double, 2, 5>::Zero();
  h(0, kX) = 1.0;
  h(1, kY) = 1.0;
  const StateCovariance ikh = StateCovariance::Identity() - k * h;
  out.estimate.covariance = ikh * est.covariance * ikh.transpose() + k * r * k.transpose();
  symmetrize(out.estimate.covariance);
  return out;
}

std::optional<double> altitude_from_lidar(double range, double roll, double pitch, double max_range) {
  if (!(range >= 0.0) || !std::isfinite(roll) || !std::isfinite(pitch)) {
    throw Error(Errc::InvalidInput, "altitude_from_lidar: range must be >= 0 and angles finite");
  }
  if (range > max_range) return std::nullopt;
  return std::max(0.0, range * std::cos(roll) * std::cos(pitch));
}

ErrorReport error_report(const std::vector<TrackPoint>& estimated, const std::vector<TrackPoint>& truth) {
  if (truth.empty() || estimated.empty()) throw Error(Errc::NonOverlapping, "error_report: empty track");
  std::vector<TrackPoint> ref = truth;
  std::stable_sort(ref.begin(), ref.end(), [](const TrackPoint& a, const TrackPoint& b) { return a.t < b.t; });

  ErrorReport rep;
  double sx = 0, sy = 0, sz = 0;
  for (const auto& e : estimated) {
    if (e.t < ref.front().t || e.t > ref.back().t) continue;
    auto hi = std::lower_bound(ref.begin(), ref.end(), e.t, [](const TrackPoint& p, double t) { return p.t < t; });
    TrackPoint at = *hi;
    if (hi->t != e.t) {
      const auto lo = hi - 1;
      const double a = (e.t - lo->t) / (hi->t - lo->t);
      at.x = lo->x + a * (hi->x - lo->x);
      at.y = lo->y + a * (hi->y - lo->y);
      at.z = lo->z + a * (hi->z - lo->z);
    }
    Residual r{e.t, e.x - at.x, e.y - at.y, e.z - at.z};
    sx += r.dx * r.dx;
    sy += r.dy * r.dy;
    sz += r.dz * r.dz;
    rep.max_error = std::max(rep.max_error, std::hypot(r.dx, r.dy));
    rep.residuals.push_back(r);
  }
  if (rep.residuals.empty()) throw Error(Errc::NonOverlapping, "error_report: tracks do not overlap in time");
  const double n = static_cast<double>(rep.residuals.size());
  rep.rmse_x = std::sqrt(sx / n);
  rep.rmse_y = std::sqrt(sy / n);
  rep.rmse_z = std::sqrt(sz / n);
  rep.rmse = std::sqrt((sx + sy) / n);
  return rep;
}

std::string ErrorReport::to_csv() const {
  std::string out = "t_s,dx,dy,dz\n";
  char line[128];
  for (const auto& r : residuals) {
    std::snprintf(line, sizeof line, "%.3f,%.6f,%.6f,%.6f\n", r.t, r.dx, r.dy, r.dz);
    out += line;
  }
  return out;
}

}  // namespace swarmstage
