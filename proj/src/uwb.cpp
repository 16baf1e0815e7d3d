#include "swarmstage/uwb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "swarmstage/error.hpp"

namespace swarmstage {

// --- constellation ------------------------------------------------------------

const Anchor& AnchorConstellation::anchor(int id) const {
  for (const auto& a : anchors) {
    if (a.id == id) return a;
  }
  throw Error(Errc::UnknownAnchor, "unknown anchor id " + std::to_string(id));
}

void AnchorConstellation::validate() const {
  if (anchors.size() < 4) throw Error(Errc::ConfigInvalid, "constellation needs at least 4 anchors");
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (!anchors[i].position.allFinite()) throw Error(Errc::ConfigInvalid, "anchor position must be finite");
    for (std::size_t j = i + 1; j < anchors.size(); ++j) {
      if (anchors[i].id == anchors[j].id) throw Error(Errc::ConfigInvalid, "duplicate anchor id");
    }
  }
  const Eigen::Vector2d o = anchors[0].position.head<2>();
  double max_area = 0.0;
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    for (std::size_t j = i + 1; j < anchors.size(); ++j) {
      const Eigen::Vector2d u = anchors[i].position.head<2>() - o;
      const Eigen::Vector2d v = anchors[j].position.head<2>() - o;
      max_area = std::max(max_area, std::abs(u.x() * v.y() - u.y() * v.x()));
    }
  }
  if (max_area < 1e-6) throw Error(Errc::ConfigInvalid, "anchors are collinear in plan view");
}

AnchorConstellation AnchorConstellation::standard(const Venue& v) {
  constexpr double lo = 0.3;
  constexpr double hi = 2.5;
  AnchorConstellation c;
  c.venue = v;
  const double w = v.width;
  const double d = v.depth;
  const double pts[8][3] = {{0, 0, hi},     {w, 0, lo},         {w, d, hi}, {0, d, lo},
                            {0, d / 2, lo}, {w, d / 2, hi}, {w / 2, 0, lo}, {w / 2, d, hi}};
  for (int i = 0; i < 8; ++i) c.anchors.push_back({i, {pts[i][0], pts[i][1], pts[i][2]}});
  return c;
}

AnchorConstellation load_constellation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, path + ": no such file");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
    AnchorConstellation c;
    if (doc.contains("venue")) {
      c.venue.width = doc.at("venue").at("width").get<double>();
      c.venue.depth = doc.at("venue").at("depth").get<double>();
    }
    for (const auto& a : doc.at("anchors")) {
      c.anchors.push_back({a.at("id").get<int>(),
                           {a.at("x").get<double>(), a.at("y").get<double>(), a.value("z", 0.0)}});
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigInvalid, path + ": " + e.what());
  }
}

void save_constellation(const AnchorConstellation& c, const std::string& path) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : c.anchors) {
    anchors.push_back({{"id", a.id}, {"x", a.position.x()}, {"y", a.position.y()}, {"z", a.position.z()}});
  }
  nlohmann::json doc{{"venue", {{"width", c.venue.width}, {"depth", c.venue.depth}}}, {"anchors", anchors}};
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, path + ": cannot open for writing");
  out << doc.dump(2) << '\n';
}

// --- TDOA -------------------------------------------------------------------------

std::vector<std::pair<int, int>> default_pairs(const AnchorConstellation& c) {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i + 1 < c.anchors.size(); ++i) pairs.emplace_back(c.anchors[i].id, c.anchors[i + 1].id);
  return pairs;
}

double predicted_dd(const AnchorConstellation& c, const TdoaMeasurement& m, const Eigen::Vector3d& tag) {
  return (tag - c.anchor(m.anchor_a).position).norm() - (tag - c.anchor(m.anchor_b).position).norm();
}

TdoaMeasurement simulate_tdoa(const AnchorConstellation& c, std::pair<int, int> pair, const Eigen::Vector3d& tag,
                              double sigma, Rng& rng) {
  if (pair.first == pair.second) throw Error(Errc::InvalidInput, "simulate_tdoa: anchor pair must be distinct");
  if (!tag.allFinite()) throw Error(Errc::InvalidInput, "simulate_tdoa: non-finite tag position");
  TdoaMeasurement m{pair.first, pair.second, 0.0, sigma};
  m.dd = predicted_dd(c, m, tag);
  if (sigma > 0.0) m.dd += rng.normal(0.0, sigma);
  return m;
}

bool passes_gate(const AnchorConstellation& c, const TdoaMeasurement& m) {
  const double sep = (c.anchor(m.anchor_a).position - c.anchor(m.anchor_b).position).norm();
  return std::abs(m.dd) <= sep + 5.0 * m.sigma;
}

namespace {

struct Linearization {
  Eigen::VectorXd residual;  // whitened
  Eigen::MatrixXd jacobian;  // whitened, d(h)/d(xy)
};

Linearization linearize(const std::vector<const Anchor*>& a, const std::vector<const Anchor*>& b,
                        const std::vector<TdoaMeasurement>& ms, const Eigen::Vector2d& xy, double z) {
  const Eigen::Vector3d p(xy.x(), xy.y(), z);
  Linearization lin{Eigen::VectorXd(ms.size()), Eigen::MatrixXd(ms.size(), 2)};
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const Eigen::Vector3d da = p - a[i]->position;
    const Eigen::Vector3d db = p - b[i]->position;
    const double na = std::max(da.norm(), 1e-9);
    const double nb = std::max(db.norm(), 1e-9);
    const double w = 1.0 / ms[i].sigma;
    lin.residual(i) = (ms[i].dd - (na - nb)) * w;
    lin.jacobian.row(i) = (da.head<2>() / na - db.head<2>() / nb).transpose() * w;
  }
  return lin;
}

}  // namespace

PositionFix solve_position_tdoa(const AnchorConstellation& c, const std::vector<TdoaMeasurement>& measurements,
                                double tag_z, std::optional<Eigen::Vector2d> initial_guess,
                                const TdoaSolverOptions& opt) {
  std::vector<TdoaMeasurement> used;
  std::vector<const Anchor*> anchor_a, anchor_b;
  for (const auto& m : measurements) {
    if (!(m.sigma > 0.0) || !std::isfinite(m.dd)) throw Error(Errc::InvalidInput, "tdoa measurement needs sigma > 0");
    if (!passes_gate(c, m)) continue;
    used.push_back(m);
    anchor_a.push_back(&c.anchor(m.anchor_a));
    anchor_b.push_back(&c.anchor(m.anchor_b));
  }
  if (used.size() < 3) {
    throw Error(Errc::NoFix, "need at least 3 usable TDOA measurements, have " + std::to_string(used.size()));
  }

  auto cost = [&](const Eigen::Vector2d& xy) { return linearize(anchor_a, anchor_b, used, xy, tag_z).residual.squaredNorm(); };

  Eigen::Vector2d xy;
  if (initial_guess) {
    xy = *initial_guess;
  } else {
    double best = std::numeric_limits<double>::infinity();
    const int nx = std::max(1, static_cast<int>(std::ceil(c.venue.width / opt.init_grid)));
    const int ny = std::max(1, static_cast<int>(std::ceil(c.venue.depth / opt.init_grid)));
    for (int i = 0; i <= nx; ++i) {
      for (int j = 0; j <= ny; ++j) {
        const Eigen::Vector2d cand(c.venue.width * i / nx, c.venue.depth * j / ny);
        const double f = cost(cand);
        if (f < best) {
          best = f;
          xy = cand;
        }
      }
    }
  }

  PositionFix fix;
  double f = cost(xy);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Linearization lin = linearize(anchor_a, anchor_b, used, xy, tag_z);
    const Eigen::Matrix2d normal = lin.jacobian.transpose() * lin.jacobian;
    const Eigen::Vector2d step = normal.ldlt().solve(lin.jacobian.transpose() * lin.residual);
    fix.iterations = it + 1;
    if (!step.allFinite()) throw Error(Errc::NoFix, "Gauss-Newton step is not finite");
    // Backtrack on the full Gauss-Newton step until the cost does not grow.
    double scale = 1.0;
    Eigen::Vector2d candidate = xy + step;
    double fc = cost(candidate);
    for (int k = 0; k < 12 && fc > f; ++k) {
      scale *= 0.5;
      candidate = xy + scale * step;
      fc = cost(candidate);
    }
    const double moved = (candidate - xy).norm();
    xy = candidate;
    f = std::min(fc, f);
    if (moved < opt.step_tolerance) break;
  }

  if (!xy.allFinite() || (xy - Eigen::Vector2d(c.venue.width / 2, c.venue.depth / 2)).norm() > 1e3) {
    throw Error(Errc::NoFix, "TDOA solution diverged");
  }
  const Linearization lin = linearize(anchor_a, anchor_b, used, xy, tag_z);
  const Eigen::Matrix2d normal = lin.jacobian.transpose() * lin.jacobian;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(normal);
  const double lmin = eig.eigenvalues()(0);
  const double lmax = eig.eigenvalues()(1);
  if (!(lmin > 0.0) || lmax / lmin > opt.max_condition) {
    std::ostringstream os;
    os << "ill-conditioned geometry (eigenvalues " << lmin << ", " << lmax << ") at (" << xy.x() << ", " << xy.y()
       << ")";
    throw Error(Errc::NoFix, os.str());
  }
  fix.xy = xy;
  fix.covariance = normal.inverse();
  fix.covariance = 0.5 * (fix.covariance + fix.covariance.transpose()).eval();
  fix.residual_rms = std::sqrt(lin.residual.squaredNorm() / static_cast<double>(used.size()));
  fix.used = used.size();
  return fix;
}

// --- calibration --------------------------------------------------------------

std::vector<Eigen::Vector3d> to_gauge(const std::vector<Eigen::Vector3d>& points) {
  constexpr double tol = 1e-9;
  if (points.size() < 2) return points;
  std::vector<Eigen::Vector3d> rel;
  rel.reserve(points.size());
  for (const auto& p : points) rel.push_back(p - points[0]);

  const double n1 = rel[1].norm();
  if (n1 < tol) throw Error(Errc::CalibrationFailed, "anchors 0 and 1 coincide");
  const Eigen::Vector3d e1 = rel[1] / n1;
  Eigen::Vector3d e2 = Eigen::Vector3d::Zero();
  for (std::size_t k = 2; k < rel.size(); ++k) {
    const Eigen::Vector3d u = rel[k] - rel[k].dot(e1) * e1;
    if (u.norm() > tol * std::max(1.0, rel[k].norm())) {
      e2 = u.normalized();
      break;
    }
  }
  if (e2.isZero()) throw Error(Errc::CalibrationFailed, "all anchors are collinear");
  const Eigen::Vector3d e3 = e1.cross(e2);

  std::vector<Eigen::Vector3d> out;
  out.reserve(rel.size());
  for (const auto& r : rel) out.emplace_back(r.dot(e1), r.dot(e2), r.dot(e3));
  for (const auto& p : out) {
    if (std::abs(p.z()) > 1e-7) {
      if (p.z() < 0.0) {
        for (auto& q : out) q.z() = -q.z();
      }
      break;
    }
  }
  for (auto& p : out) {
    if (std::abs(p.z()) <= 1e-12) p.z() = 0.0;
  }
  return out;
}

RangeMatrix pairwise_ranges(const AnchorConstellation& c) {
  const auto n = static_cast<Eigen::Index>(c.anchors.size());
  RangeMatrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (c.anchors[i].position - c.anchors[j].position).norm();
  }
  return d;
}

RangeMatrix load_range_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, path + ": no such file");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t"));
      cell.erase(cell.find_last_not_of(" \t") + 1);
      if (cell.empty() || cell == "nan" || cell == "NaN" || cell == "-") {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(Errc::ConfigInvalid, path + ": cannot parse range '" + cell + "'");
      }
    }
    if (line.back() == ',') row.push_back(std::numeric_limits<double>::quiet_NaN());
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  RangeMatrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != n) {
      throw Error(Errc::ConfigInvalid, path + ": range matrix must be square");
    }
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = rows[i][j];
  }
  return d;
}

namespace {

struct ObservedPair {
  Eigen::Index i;
  Eigen::Index j;
  double range;
};

}  // namespace

CalibrationResult calibrate_anchors(const RangeMatrix& ranges, const CalibrationOptions& opt) {
  const Eigen::Index n = ranges.rows();
  if (ranges.cols() != n) throw Error(Errc::CalibrationFailed, "range matrix must be square");
  if (n < 4) throw Error(Errc::CalibrationFailed, "calibration needs at least 4 anchors, got " + std::to_string(n));

  // Symmetrize observed entries; NaN on either side of a pair means the pair
  // is taken from the other side when available.
  std::vector<ObservedPair> observed;
  Eigen::MatrixXd filled = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    filled(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double a = ranges(i, j);
      const double b = ranges(j, i);
      double r;
      if (std::isfinite(a) && std::isfinite(b)) r = 0.5 * (a + b);
      else if (std::isfinite(a)) r = a;
      else if (std::isfinite(b)) r = b;
      else continue;
      if (r < 0.0) throw Error(Errc::CalibrationFailed, "negative range");
      observed.push_back({i, j, r});
      filled(i, j) = filled(j, i) = r;
    }
  }
  // Shortest paths stand in for missing ranges during initialization only.
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) filled(i, j) = std::min(filled(i, j), filled(i, k) + filled(k, j));
    }
  }
  if (!filled.allFinite()) throw Error(Errc::CalibrationFailed, "range graph is disconnected");
  if (static_cast<Eigen::Index>(observed.size()) < 2 * n - 3) {
    throw Error(Errc::CalibrationFailed, "too few observed ranges");
  }

  // Classical MDS.
  const Eigen::MatrixXd sq = filled.array().square().matrix();
  const Eigen::MatrixXd centering =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd gram = -0.5 * centering * sq * centering;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd lambda = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
  if (!(lambda(0) > 0.0) || lambda(1) <= opt.rank_tolerance * lambda(0)) {
    throw Error(Errc::CalibrationFailed, "rank-deficient anchor geometry");
  }
  const bool planar = lambda(2) <= opt.rank_tolerance * lambda(0);

  std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(n), Eigen::Vector3d::Zero());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < (planar ? 2 : 3); ++k) pts[i](k) = vecs(i, k) * std::sqrt(std::max(0.0, lambda(k)));
  }
  if (!opt.initial.empty()) {
    if (static_cast<Eigen::Index>(opt.initial.size()) != n) {
      throw Error(Errc::CalibrationFailed, "initial guess must have one position per anchor");
    }
    pts = opt.initial;
    if (planar) {
      for (auto& p : pts) p.z() = 0.0;
    }
  }
  pts = to_gauge(pts);

  // Free coordinates under the gauge.
  struct Slot {
    Eigen::Index anchor;
    int axis;
  };
  std::vector<Slot> slots;
  for (Eigen::Index i = 1; i < n; ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      if (i == 1 && axis > 0) continue;
      if (i == 2 && axis > 1) continue;
      if (planar && axis == 2) continue;
      slots.push_back({i, axis});
    }
  }
  const auto np = static_cast<Eigen::Index>(slots.size());
  const auto nr = static_cast<Eigen::Index>(observed.size());

  auto residuals = [&](const std::vector<Eigen::Vector3d>& p) {
    Eigen::VectorXd r(nr);
    for (Eigen::Index k = 0; k < nr; ++k) {
      const auto& o = observed[k];
      r(k) = (p[o.i] - p[o.j]).norm() - o.range;
    }
    return r;
  };
  auto apply = [&](std::vector<Eigen::Vector3d> p, const Eigen::VectorXd& delta) {
    for (Eigen::Index s = 0; s < np; ++s) p[slots[s].anchor](slots[s].axis) += delta(s);
    return p;
  };

  Eigen::VectorXd r = residuals(pts);
  double f = r.squaredNorm();
  double mu = 1e-3;
  int iterations = 0;
  for (; iterations < opt.max_iterations; ++iterations) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nr, np);
    std::vector<Eigen::Index> slot_of(static_cast<std::size_t>(3 * n), -1);
    for (Eigen::Index s = 0; s < np; ++s) slot_of[3 * slots[s].anchor + slots[s].axis] = s;
    for (Eigen::Index k = 0; k < nr; ++k) {
      const auto& o = observed[k];
      const Eigen::Vector3d diff = pts[o.i] - pts[o.j];
      const double d = std::max(diff.norm(), 1e-12);
      for (int axis = 0; axis < 3; ++axis) {
        const double g = diff(axis) / d;
        if (auto s = slot_of[3 * o.i + axis]; s >= 0) jac(k, s) += g;
        if (auto s = slot_of[3 * o.j + axis]; s >= 0) jac(k, s) -= g;
      }
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;
    bool accepted = false;
    Eigen::VectorXd delta;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal().array() += mu * (jtj.diagonal().array() + 1e-9);
      delta = damped.ldlt().solve(-grad);
      const auto cand = apply(pts, delta);
      const Eigen::VectorXd rc = residuals(cand);
      const double fc = rc.squaredNorm();
      if (std::isfinite(fc) && fc <= f) {
        pts = cand;
        r = rc;
        const double prev = f;
        f = fc;
        mu = std::max(mu * 0.3, 1e-12);
        accepted = true;
        if (prev - fc <= 1e-30 + 1e-15 * prev) delta.setZero();
        break;
      }
      mu *= 10.0;
    }
    if (!accepted || delta.norm() < 1e-12) break;
  }

  CalibrationResult out;
  out.planar = planar;
  out.iterations = iterations;
  out.residual_rms = std::sqrt(f / static_cast<double>(nr));
  if (out.residual_rms > 5.0 * opt.range_sigma) {
    throw Error(Errc::CalibrationFailed, "residual RMS " + std::to_string(out.residual_rms) + " m exceeds 5 sigma");
  }
  pts = to_gauge(pts);
  double max_w = 0.0, max_d = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.constellation.anchors.push_back({static_cast<int>(i), pts[i]});
    max_w = std::max(max_w, std::abs(pts[i].x()));
    max_d = std::max(max_d, std::abs(pts[i].y()));
  }
  out.constellation.venue = {max_w, max_d};
  return out;
}

}  // namespace swarmstage
