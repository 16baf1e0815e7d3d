#include "swarmstage/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "swarmstage/error.hpp"
#include "swarmstage/rng.hpp"

namespace swarmstage {

namespace {

VelocityCommand planar(Vec2 v) { return {v.x, v.y, 0.0}; }

// Distances below this are treated as coincident robots.
constexpr double kCoincident = 1e-12;

Vec2 centroid_of(std::span<const NeighborInfo> ns) {
  Vec2 sum;
  for (const auto& n : ns) sum += n.rel_pos;
  return sum / static_cast<double>(ns.size());
}

}  // namespace

std::string_view to_string(Primitive p) noexcept {
  switch (p) {
    case Primitive::Aggregate: return "aggregate";
    case Primitive::Diffuse: return "diffuse";
    case Primitive::Flock: return "flock";
    case Primitive::LennardJones: return "lennard_jones";
    case Primitive::Pursuit: return "pursuit";
    case Primitive::Still: return "still";
  }
  return "?";
}

Primitive primitive_from_string(std::string_view name) {
  for (auto p : {Primitive::Aggregate, Primitive::Diffuse, Primitive::Flock, Primitive::LennardJones,
                 Primitive::Pursuit, Primitive::Still}) {
    if (name == to_string(p)) return p;
  }
  throw Error(Errc::ConfigInvalid, "unknown behavior primitive '" + std::string(name) + "'");
}

void BehaviorPhase::validate() const {
  if (!(duration > 0.0)) throw Error(Errc::ConfigInvalid, "phase duration must be positive");
  auto nonneg = [](double v, const char* what) {
    if (!(v >= 0.0) || std::isnan(v)) throw Error(Errc::ConfigInvalid, std::string(what) + " must be >= 0");
  };
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AggregateParams>) {
          nonneg(p.gain, "aggregate.gain");
          nonneg(p.stop_radius, "aggregate.stop_radius");
          nonneg(p.max_speed, "aggregate.max_speed");
        } else if constexpr (std::is_same_v<T, DiffuseParams>) {
          nonneg(p.gain, "diffuse.gain");
          nonneg(p.radial_speed, "diffuse.radial_speed");
          if (!(p.radius > 0.0)) throw Error(Errc::ConfigInvalid, "diffuse.radius must be > 0");
        } else if constexpr (std::is_same_v<T, FlockParams>) {
          nonneg(p.w_sep, "flock.w_sep");
          nonneg(p.w_ali, "flock.w_ali");
          nonneg(p.w_coh, "flock.w_coh");
          if (!(p.r_sep > 0.0)) throw Error(Errc::ConfigInvalid, "flock.r_sep must be > 0");
          if (!(p.radius > 0.0)) throw Error(Errc::ConfigInvalid, "flock.radius must be > 0");
        } else if constexpr (std::is_same_v<T, LennardJonesParams>) {
          if (!(p.delta > 0.0)) throw Error(Errc::ConfigInvalid, "lennard_jones.delta must be > 0");
          nonneg(p.eps, "lennard_jones.eps");
        } else if constexpr (std::is_same_v<T, PursuitParams>) {
          nonneg(p.gain, "pursuit.gain");
          nonneg(p.tangential, "pursuit.tangential");
        }
      },
      params);
}

void BehaviorProgram::validate() const {
  if (phases.empty()) throw Error(Errc::ConfigInvalid, "program '" + name + "' has no phases");
  for (const auto& ph : phases) ph.validate();
}

double BehaviorProgram::total_duration() const noexcept {
  double sum = 0.0;
  for (const auto& ph : phases) sum += ph.duration;
  return sum;
}

// --- primitives -------------------------------------------------------------

VelocityCommand aggregate_velocity(const Pose& self, const NeighborView& view, const AggregateParams& p) {
  Vec2 offset;
  if (view.marker) {
    offset = *view.marker - self.position();
  } else if (!view.neighbors.empty()) {
    offset = centroid_of(view.neighbors);
  } else {
    return {};
  }
  if (norm(offset) < p.stop_radius) return {};
  Vec2 v = p.gain * offset;
  const double speed = norm(v);
  if (p.max_speed > 0.0 && speed > p.max_speed) v *= p.max_speed / speed;
  return planar(v);
}

VelocityCommand diffuse_velocity(const Pose& self, const NeighborView& view, const DiffuseParams& p) {
  Vec2 sum;
  auto repel = [&](Vec2 rel) {
    const double d = norm(rel);
    if (d < kCoincident) {
      spdlog::debug("diffuse: skipping coincident neighbor");
      return;
    }
    if (d > p.radius) return;
    sum -= rel / (d * d);  // -unit(rel) / d
  };
  for (const auto& n : view.neighbors) repel(n.rel_pos);
  if (view.marker && view.marker_mode == MarkerMode::Repulsor) repel(*view.marker - self.position());
  return planar(p.gain * sum);
}

VelocityCommand flock_velocity(const Pose& /*self*/, Vec2 self_velocity, const NeighborView& view,
                               const FlockParams& p) {
  Vec2 separation;
  Vec2 mean_velocity;
  Vec2 centroid;
  std::size_t count = 0;
  for (const auto& n : view.neighbors) {
    const double d = norm(n.rel_pos);
    if (d > p.radius) continue;
    ++count;
    mean_velocity += n.velocity;
    centroid += n.rel_pos;
    if (d < kCoincident) {
      spdlog::debug("flock: skipping separation from coincident neighbor {}", n.id);
      continue;
    }
    if (d < p.r_sep) separation -= n.rel_pos / (d * d);
  }
  if (count == 0) return {};
  const double inv = 1.0 / static_cast<double>(count);
  const Vec2 alignment = mean_velocity * inv - self_velocity;
  const Vec2 cohesion = centroid * inv;
  return planar(p.w_sep * separation + p.w_ali * alignment + p.w_coh * cohesion);
}

double lennard_jones_magnitude(double d, double delta, double eps) {
  if (!(d > 0.0) || !std::isfinite(d)) throw Error(Errc::InvalidInput, "lennard_jones_magnitude: d must be > 0");
  if (!(delta > 0.0)) throw Error(Errc::InvalidInput, "lennard_jones_magnitude: delta must be > 0");
  const double r = delta / d;
  const double r2 = r * r;
  return -(eps / d) * (r2 * r2 - r2);
}

VelocityCommand lj_velocity(const Pose& /*self*/, const NeighborView& view, const LennardJonesParams& p) {
  Vec2 sum;
  for (const auto& n : view.neighbors) {
    const double d = norm(n.rel_pos);
    if (d < kCoincident) {
      spdlog::debug("lennard_jones: skipping coincident neighbor {}", n.id);
      continue;
    }
    sum += lennard_jones_magnitude(d, p.delta, p.eps) * (n.rel_pos / d);
  }
  return planar(sum);
}

VelocityCommand pursuit_velocity(std::uint16_t self_id, const Pose& /*self*/, const NeighborView& view,
                                 const PursuitParams& p) {
  std::vector<std::uint16_t> ring = view.roster;
  if (ring.empty()) {
    ring.push_back(self_id);
    for (const auto& n : view.neighbors) ring.push_back(n.id);
  }
  std::sort(ring.begin(), ring.end());
  ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
  if (ring.size() < 2) return {};

  auto it = std::upper_bound(ring.begin(), ring.end(), self_id);
  const std::uint16_t target = it == ring.end() ? ring.front() : *it;
  if (target == self_id) return {};

  const auto found = std::find_if(view.neighbors.begin(), view.neighbors.end(),
                                  [&](const NeighborInfo& n) { return n.id == target; });
  if (found == view.neighbors.end()) return {};
  const Vec2 chord = found->rel_pos;
  return planar(p.gain * chord + p.tangential * perp(chord));
}

Vec2 tie_break_direction(std::uint16_t id) noexcept {
  const std::uint64_t h = mix64(0x5157a9e5ULL ^ id);
  const double angle = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 * std::numbers::pi;
  return {std::cos(angle), std::sin(angle)};
}

BehaviorProgram firework_program(const FireworkParams& fp) {
  if (!(fp.v_out > fp.v_in) || !(fp.v_in > 0.0)) {
    throw Error(Errc::ConfigInvalid, "firework: need v_out > v_in > 0");
  }
  BehaviorProgram prog;
  prog.name = "firework";
  prog.loop = false;
  prog.phases.push_back({AggregateParams{fp.gather_gain, fp.stop_radius, fp.v_in, true}, fp.t_gather});
  prog.phases.push_back({StillParams{}, fp.t_hold});
  prog.phases.push_back({DiffuseParams{0.0, 1.0, fp.v_out, false}, fp.t_burst});
  prog.phases.push_back({DiffuseParams{0.0, 1.0, fp.v_out, true}, fp.t_fade});
  prog.validate();
  return prog;
}

std::pair<std::size_t, double> active_phase(const BehaviorProgram& program, double t) {
  const auto& phases = program.phases;
  if (t < 0.0) t = 0.0;
  const double total = program.total_duration();
  if (program.loop && std::isfinite(total) && total > 0.0) t = std::fmod(t, total);
  double start = 0.0;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const double end = start + phases[i].duration;
    if (t < end) return {i, t - start};
    start = end;
  }
  const std::size_t last = phases.size() - 1;
  return {last, t - (start - phases[last].duration)};
}

BehaviorOutput step_behavior(const BehaviorProgram& program, double t_in_program, const SelfState& self,
                             const NeighborView& view) {
  const auto [index, t_phase] = active_phase(program, t_in_program);
  const BehaviorPhase& phase = program.phases[index];
  BehaviorOutput out;
  out.phase_index = index;

  out.command = std::visit(
      [&](const auto& p) -> VelocityCommand {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AggregateParams>) {
          if (p.require_marker && !view.marker) {
            out.cue_error = true;
            return {};
          }
          return aggregate_velocity(self.pose, view, p);
        } else if constexpr (std::is_same_v<T, DiffuseParams>) {
          if (p.radial_speed <= 0.0) return diffuse_velocity(self.pose, view, p);
          if (!view.marker) {
            out.cue_error = true;
            return {};
          }
          double speed = p.radial_speed;
          if (p.fade && std::isfinite(phase.duration)) {
            speed *= std::max(0.0, 1.0 - t_phase / phase.duration);
          }
          const Vec2 away = self.pose.position() - *view.marker;
          const double d = norm(away);
          const Vec2 dir = d < kCoincident ? tie_break_direction(self.id) : away / d;
          return planar(speed * dir);
        } else if constexpr (std::is_same_v<T, FlockParams>) {
          // Flocking terms are steering corrections applied to the current velocity.
          const VelocityCommand steer = flock_velocity(self.pose, self.velocity, view, p);
          return {self.velocity.x + steer.vx, self.velocity.y + steer.vy, 0.0};
        } else if constexpr (std::is_same_v<T, LennardJonesParams>) {
          return lj_velocity(self.pose, view, p);
        } else if constexpr (std::is_same_v<T, PursuitParams>) {
          return pursuit_velocity(self.id, self.pose, view, p);
        } else {
          return {};
        }
      },
      phase.params);
  return out;
}

const std::vector<BehaviorProgram>& behavior_library() {
  static const std::vector<BehaviorProgram> library = [] {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<BehaviorProgram> lib;
    lib.push_back(firework_program());
    lib.push_back({"aggregate", {{AggregateParams{0.5, 0.3, 0.0, false}, inf}}, false});
    lib.push_back({"diffuse", {{DiffuseParams{0.5, 2.0, 0.0, false}, inf}}, false});
    lib.push_back({"flock", {{FlockParams{}, inf}}, false});
    lib.push_back({"lattice", {{LennardJonesParams{1.2, 1.0}, inf}}, false});
    lib.push_back({"pursuit", {{PursuitParams{0.5, 0.0}, inf}}, false});
    lib.push_back({"orbit", {{PursuitParams{0.3, 0.6}, inf}}, false});
    lib.push_back({"breathe",
                   {{AggregateParams{0.4, 0.5, 0.0, false}, 6.0}, {DiffuseParams{0.6, 3.0, 0.0, false}, 6.0}},
                   true});
    lib.push_back({"still", {{StillParams{}, inf}}, false});
    lib.push_back({"murmuration", {{FlockParams{1.0, 0.6, 0.08, 0.6}, 10.0}, {LennardJonesParams{1.0, 0.8}, 5.0}},
                   true});
    lib.push_back({"scatter", {{DiffuseParams{1.5, 4.0, 0.0, false}, 4.0}, {StillParams{}, inf}}, false});
    lib.push_back({"converge", {{AggregateParams{0.6, 0.8, 0.4, false}, 10.0}, {LennardJonesParams{0.9, 1.0}, inf}},
                   false});
    for (const auto& p : lib) p.validate();
    return lib;
  }();
  return library;
}

// --- serialization ------------------------------------------------------------

namespace {

using nlohmann::json;

json duration_to_json(double d) { return std::isfinite(d) ? json(d) : json("inf"); }

double duration_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw Error(Errc::ConfigInvalid, "phase duration must be a number or \"inf\"");
  }
  if (!j.is_number()) throw Error(Errc::ConfigInvalid, "phase duration must be a number or \"inf\"");
  return j.get<double>();
}

json params_to_json(const PhaseParams& params) {
  return std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AggregateParams>) {
          return {{"gain", p.gain}, {"stop_radius", p.stop_radius}, {"max_speed", p.max_speed},
                  {"require_marker", p.require_marker}};
        } else if constexpr (std::is_same_v<T, DiffuseParams>) {
          return {{"gain", p.gain}, {"radius", p.radius}, {"radial_speed", p.radial_speed}, {"fade", p.fade}};
        } else if constexpr (std::is_same_v<T, FlockParams>) {
          json j{{"w_sep", p.w_sep}, {"w_ali", p.w_ali}, {"w_coh", p.w_coh}, {"r_sep", p.r_sep}};
          j["radius"] = duration_to_json(p.radius);
          return j;
        } else if constexpr (std::is_same_v<T, LennardJonesParams>) {
          return {{"delta", p.delta}, {"eps", p.eps}};
        } else if constexpr (std::is_same_v<T, PursuitParams>) {
          return {{"gain", p.gain}, {"tangential", p.tangential}};
        } else {
          return json::object();
        }
      },
      params);
}

class FieldReader {
 public:
  FieldReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw Error(Errc::ConfigInvalid, where_ + ": expected an object");
  }

  void number(const char* key, double& out) {
    seen_.push_back(key);
    if (!obj_.contains(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw Error(Errc::ConfigInvalid, where_ + "." + key + ": expected a number");
    out = v.get<double>();
  }
  void maybe_inf(const char* key, double& out) {
    seen_.push_back(key);
    if (obj_.contains(key)) out = duration_from_json(obj_.at(key));
  }
  void boolean(const char* key, bool& out) {
    seen_.push_back(key);
    if (!obj_.contains(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw Error(Errc::ConfigInvalid, where_ + "." + key + ": expected a boolean");
    out = v.get<bool>();
  }
  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw Error(Errc::ConfigInvalid, where_ + ": unknown field '" + key + "'");
      }
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string> seen_;
};

PhaseParams params_from_json(Primitive prim, const json& j, const std::string& where) {
  const json empty = json::object();
  FieldReader r(j.is_null() ? empty : j, where);
  PhaseParams out;
  switch (prim) {
    case Primitive::Aggregate: {
      AggregateParams p;
      r.number("gain", p.gain);
      r.number("stop_radius", p.stop_radius);
      r.number("max_speed", p.max_speed);
      r.boolean("require_marker", p.require_marker);
      out = p;
      break;
    }
    case Primitive::Diffuse: {
      DiffuseParams p;
      r.number("gain", p.gain);
      r.number("radius", p.radius);
      r.number("radial_speed", p.radial_speed);
      r.boolean("fade", p.fade);
      out = p;
      break;
    }
    case Primitive::Flock: {
      FlockParams p;
      r.number("w_sep", p.w_sep);
      r.number("w_ali", p.w_ali);
      r.number("w_coh", p.w_coh);
      r.number("r_sep", p.r_sep);
      r.maybe_inf("radius", p.radius);
      out = p;
      break;
    }
    case Primitive::LennardJones: {
      LennardJonesParams p;
      r.number("delta", p.delta);
      r.number("eps", p.eps);
      out = p;
      break;
    }
    case Primitive::Pursuit: {
      PursuitParams p;
      r.number("gain", p.gain);
      r.number("tangential", p.tangential);
      out = p;
      break;
    }
    case Primitive::Still:
      out = StillParams{};
      break;
  }
  r.finish();
  return out;
}

}  // namespace

nlohmann::json program_to_json(const BehaviorProgram& program) {
  json phases = json::array();
  for (const auto& ph : program.phases) {
    phases.push_back({{"primitive", std::string(to_string(ph.primitive()))},
                      {"duration", duration_to_json(ph.duration)},
                      {"params", params_to_json(ph.params)}});
  }
  return {{"name", program.name}, {"loop", program.loop}, {"phases", std::move(phases)}};
}

BehaviorProgram program_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(Errc::ConfigInvalid, "program: expected an object");
  BehaviorProgram prog;
  if (!doc.contains("name") || !doc.at("name").is_string()) {
    throw Error(Errc::ConfigInvalid, "program.name: expected a string");
  }
  prog.name = doc.at("name").get<std::string>();
  if (doc.contains("loop")) {
    if (!doc.at("loop").is_boolean()) throw Error(Errc::ConfigInvalid, "program.loop: expected a boolean");
    prog.loop = doc.at("loop").get<bool>();
  }
  if (!doc.contains("phases") || !doc.at("phases").is_array()) {
    throw Error(Errc::ConfigInvalid, "program.phases: expected an array");
  }
  for (const auto& [key, _] : doc.items()) {
    if (key != "name" && key != "loop" && key != "phases") {
      throw Error(Errc::ConfigInvalid, "program: unknown field '" + key + "'");
    }
  }
  std::size_t i = 0;
  for (const auto& ph : doc.at("phases")) {
    const std::string where = "program.phases[" + std::to_string(i++) + "]";
    if (!ph.is_object() || !ph.contains("primitive") || !ph.at("primitive").is_string()) {
      throw Error(Errc::ConfigInvalid, where + ".primitive: expected a string");
    }
    const Primitive prim = primitive_from_string(ph.at("primitive").get<std::string>());
    BehaviorPhase phase;
    phase.duration = duration_from_json(ph.contains("duration") ? ph.at("duration") : json());
    phase.params = params_from_json(prim, ph.contains("params") ? ph.at("params") : json(), where + ".params");
    prog.phases.push_back(std::move(phase));
  }
  prog.validate();
  return prog;
}

BehaviorProgram load_program_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, path + ": no such file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigInvalid, path + ": " + e.what());
  }
  return program_from_json(doc);
}

void save_program_file(const BehaviorProgram& program, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, path + ": cannot open for writing");
  out << program_to_json(program).dump(2) << '\n';
}

std::uint64_t program_fingerprint(const BehaviorProgram& program) {
  const std::string canon = program_to_json(program).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace swarmstage
