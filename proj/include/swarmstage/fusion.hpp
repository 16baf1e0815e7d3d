#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace swarmstage {

using StateVector = Eigen::Matrix<double, 5, 1>;  // x, y, vx, vy, yaw
using StateCovariance = Eigen::Matrix<double, 5, 5>;

enum StateIndex : int { kX = 0, kY = 1, kVx = 2, kVy = 3, kYaw = 4 };

struct FusedEstimate {
  StateVector state = StateVector::Zero();
  StateCovariance covariance = StateCovariance::Identity();
  double t = 0.0;

  /// Innovation bookkeeping from the latest UWB update.
  Eigen::Vector2d last_innovation = Eigen::Vector2d::Zero();
  double last_nis = 0.0;
};

struct FusionNoise {
  double odom_speed_frac = 0.02;    // sigma of wheel speed, fraction of |v|
  double odom_speed_floor = 0.005;  // m/s
  double odom_yaw_rate = 0.05;      // rad/s
  double imu_yaw_rate = 0.01;       // rad/s
  double velocity_sigma = 0.05;     // m/s, odometry velocity pseudo-measurement
  /// Continuous process noise densities (variance per second).
  double q_position = 1e-4;
  double q_velocity = 1e-2;
  double q_yaw = 1e-5;
  double gate_sigma = 5.0;  // Mahalanobis gate on UWB updates
};

struct OdometryInput {
  double v = 0.0;      // m/s along heading
  double omega = 0.0;  // rad/s
};

/// Precision-weighted blend of the odometry and IMU yaw rates, with the
/// variance of the blend.
std::pair<double, double> blend_yaw_rate(double odom_rate, double imu_rate, const FusionNoise& noise);

/// Throws Errc::ContractViolation when the covariance is not symmetric PSD
/// within 1e-9.
void check_covariance(const StateCovariance& p);

/// Unicycle prediction: position integrates the odometry speed along the
/// heading, the heading integrates the blended yaw rate, the velocity states
/// rotate with the heading.
FusedEstimate kf_predict(const FusedEstimate& est, OdometryInput odom, double imu_yaw_rate, double dt,
                         const FusionNoise& noise);

/// Odometry speed as a measurement of the velocity states (heading-projected
/// speed plus a zero lateral component).
FusedEstimate kf_update_velocity(const FusedEstimate& est, double v, const FusionNoise& noise);

enum class UpdateStatus { Applied, Gated, Singular };

struct UwbUpdateResult {
  FusedEstimate estimate;
  UpdateStatus status = UpdateStatus::Applied;
};

/// Linear position update with a 2D UWB fix. Gated (5 sigma Mahalanobis by
/// default) or singular-innovation updates leave the estimate unchanged.
UwbUpdateResult kf_update_uwb(const FusedEstimate& est, const Eigen::Vector2d& meas_xy, const Eigen::Matrix2d& r,
                              const FusionNoise& noise);

inline constexpr double kLidarMaxRange = 12.0;

/// Tilt-compensated height above the floor, or nullopt when the range is
/// beyond the sensor.
std::optional<double> altitude_from_lidar(double range, double roll, double pitch, double max_range = kLidarMaxRange);

// --- error reporting -----------------------------------------------------------

struct TrackPoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double yaw = 0.0;
};

struct Residual {
  double t = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
};

struct ErrorReport {
  double rmse = 0.0;  // planar
  double rmse_x = 0.0;
  double rmse_y = 0.0;
  double rmse_z = 0.0;
  double max_error = 0.0;  // planar
  std::vector<Residual> residuals;

  std::string to_csv() const;
};

/// Residuals at estimate timestamps against linearly interpolated truth.
/// Estimates outside the truth time range are skipped; no overlap at all
/// throws Errc::NonOverlapping.
ErrorReport error_report(const std::vector<TrackPoint>& estimated, const std::vector<TrackPoint>& truth);

}  // namespace swarmstage
