#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "swarmstage/graycode.hpp"
#include "swarmstage/rng.hpp"

namespace swarmstage {

struct Anchor {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

struct AnchorConstellation {
  std::vector<Anchor> anchors;
  Venue venue;

  /// Throws Errc::UnknownAnchor.
  const Anchor& anchor(int id) const;
  /// Fewer than four anchors or all anchors collinear in plan view throws
  /// Errc::ConfigInvalid.
  void validate() const;

  /// Eight anchors around the 6 x 12 m venue at alternating heights.
  static AnchorConstellation standard(const Venue& venue = {});
};

/// Structured text: {"venue": {"width", "depth"}, "anchors": [{"id", "x", "y", "z"}]}.
AnchorConstellation load_constellation(const std::string& path);
void save_constellation(const AnchorConstellation& c, const std::string& path);

struct TdoaMeasurement {
  int anchor_a = 0;
  int anchor_b = 0;
  double dd = 0.0;     // |tag - a| - |tag - b|, m
  double sigma = 0.1;  // m
};

/// Consecutive anchor pairs (0,1), (1,2), ... in constellation order.
std::vector<std::pair<int, int>> default_pairs(const AnchorConstellation& c);

TdoaMeasurement simulate_tdoa(const AnchorConstellation& c, std::pair<int, int> pair, const Eigen::Vector3d& tag,
                              double sigma, Rng& rng);

/// True when |dd| <= |a - b| + 5 sigma.
bool passes_gate(const AnchorConstellation& c, const TdoaMeasurement& m);

/// Noise-free range difference for a tag position.
double predicted_dd(const AnchorConstellation& c, const TdoaMeasurement& m, const Eigen::Vector3d& tag);

struct PositionFix {
  Eigen::Vector2d xy = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
  int iterations = 0;
  double residual_rms = 0.0;  // in sigma units
  std::size_t used = 0;       // measurements after gating
};

struct TdoaSolverOptions {
  int max_iterations = 25;
  double step_tolerance = 1e-6;  // m
  double max_condition = 1e8;
  /// Spacing of the coarse initialization grid used when no initial guess is supplied.
  double init_grid = 0.5;
};

/// Weighted Gauss-Newton on the range differences at a known tag height.
/// Throws Errc::NoFix (fewer than three usable measurements, an
/// ill-conditioned normal matrix, or divergence).
PositionFix solve_position_tdoa(const AnchorConstellation& c, const std::vector<TdoaMeasurement>& measurements,
                                double tag_z, std::optional<Eigen::Vector2d> initial_guess = std::nullopt,
                                const TdoaSolverOptions& options = {});

// --- anchor self-calibration ----------------------------------------------

struct CalibrationOptions {
  double range_sigma = 0.02;  // m, expected noise on inter-anchor ranges
  int max_iterations = 200;
  double rank_tolerance = 1e-6;  // relative eigenvalue threshold
  /// Starting positions for the refinement instead of the MDS solution (any
  /// frame; moved into the gauge first). Empty = MDS.
  std::vector<Eigen::Vector3d> initial;
};

struct CalibrationResult {
  AnchorConstellation constellation;
  double residual_rms = 0.0;  // m
  int iterations = 0;
  bool planar = false;
};

/// Square matrix of measured inter-anchor distances; NaN marks a missing entry.
using RangeMatrix = Eigen::MatrixXd;

/// Classical MDS initialization followed by Levenberg-Marquardt on the
/// pairwise distances, in the gauge: anchor 0 at the origin, anchor 1 on +x,
/// anchor 2 in the xy-plane with y > 0, first off-plane anchor with z > 0.
/// Throws Errc::CalibrationFailed for n < 4, rank-deficient geometry or a
/// residual RMS above 5 range sigmas.
CalibrationResult calibrate_anchors(const RangeMatrix& ranges, const CalibrationOptions& options = {});

/// Rigid transform of a point set into the calibration gauge.
std::vector<Eigen::Vector3d> to_gauge(const std::vector<Eigen::Vector3d>& points);

RangeMatrix load_range_matrix(const std::string& csv_path);
RangeMatrix pairwise_ranges(const AnchorConstellation& c);

}  // namespace swarmstage
