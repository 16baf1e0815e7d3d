#include "swarmstage/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "swarmstage/error.hpp"
#include "swarmstage/graycode.hpp"
#include "swarmstage/kinematics.hpp"
#include "swarmstage/rng.hpp"

namespace swarmstage {

namespace {

constexpr SimTime kDtUs = 50'000;
constexpr double kAltitudeGain = 1.0;            // 1/s
constexpr double kTabletopYawBlend = 0.3;        // weight of the photodiode heading per step
constexpr std::uint64_t kSpawnStream = 0x5ba3'0001;
constexpr std::uint64_t kRobotStream = 0x5ba3'0002;

std::string_view cue_kind(CueCommand c) {
  switch (c) {
    case CueCommand::Launch: return "launch";
    case CueCommand::Switch: return "switch";
    case CueCommand::Stop: return "stop";
    case CueCommand::Marker: return "marker";
  }
  return "?";
}

Vec2 clamp_to(const Rect& r, Vec2 p) { return {std::clamp(p.x, r.x0, r.x1), std::clamp(p.y, r.y0, r.y1)}; }

std::int16_t mm(double v) {
  const double q = std::round(v * 1000.0);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

}  // namespace

std::string_view to_string(RobotMode mode) noexcept {
  switch (mode) {
    case RobotMode::Idle: return "idle";
    case RobotMode::Launching: return "launching";
    case RobotMode::Active: return "active";
    case RobotMode::Stopped: return "stopped";
  }
  return "?";
}

std::string_view to_string(TraceSource source) noexcept {
  switch (source) {
    case TraceSource::Truth: return "truth";
    case TraceSource::UwbRaw: return "uwb_raw";
    case TraceSource::Fused: return "fused";
  }
  return "?";
}

struct Simulation::Robot {
  struct Neighbor {
    Vec2 pos;
    double z = 0.0;
    Vec2 vel;
    int phase = 0;
    SimTime heard = 0;
  };

  std::uint16_t id = 0;
  int swarm = 0;
  const SwarmSpec* spec = nullptr;
  Rng rng{1};

  // ground truth
  Pose truth;
  AerialState aerial;
  double truth_speed = 0.0;  // along heading, last step
  double truth_omega = 0.0;

  // onboard estimate
  FusedEstimate est;
  double est_z = 0.0;
  Pose fused;
  Vec2 fused_velocity;
  SimTime next_uwb = 0;

  RobotMode mode = RobotMode::Idle;
  std::size_t program = 0;
  SimTime program_start = 0;
  int phase = 0;
  bool phase_recorded = false;
  bool cue_error = false;
  VelocityCommand command;

  std::uint32_t seq = 0;
  SimTime next_gossip = std::numeric_limits<SimTime>::max();
  std::map<std::uint16_t, Neighbor> neighbors;
  std::optional<Vec2> marker;
  MarkerMode marker_mode = MarkerMode::Attractor;
  std::vector<std::uint16_t> roster;
};

Simulation::Simulation(PerformanceScript script) : script_(std::move(script)) {
  script_.validate();
  script_.net.seed = script_.seed;
  setup();
}

Simulation::~Simulation() = default;

void Simulation::setup() {
  bus_ = std::make_unique<GossipBus>(script_.net);
  anchors_ = script_.loc.anchors_file ? load_constellation(*script_.loc.anchors_file)
                                      : AnchorConstellation::standard(script_.venue);
  anchors_.validate();

  for (const auto& p : behavior_library()) {
    programs_.push_back(p);
    program_origin_.emplace_back("library");
  }
  for (std::size_t i = 0; i < script_.programs.size(); ++i) {
    programs_.push_back(script_.programs[i]);
    program_origin_.push_back(i < script_.program_files.size() ? script_.program_files[i] : "script");
  }
  if (programs_.size() > 255) throw Error(Errc::ConfigInvalid, "programs: at most 255 programs fit the wire id");
  if (!program_id(script_.program)) {
    throw Error(Errc::ConfigInvalid, "program: unknown program '" + script_.program + "'");
  }
  for (std::size_t i = 0; i < script_.cues.size(); ++i) {
    const auto& c = script_.cues[i];
    if (c.command == CueCommand::Switch && !program_id(c.program)) {
      throw Error(Errc::ConfigInvalid,
                  "cues[" + std::to_string(i) + "].program: unknown program '" + c.program + "'");
    }
  }

  Rng spawn_rng(mix64(script_.seed ^ kSpawnStream));
  std::uint16_t next_id = kFirstRobotId;
  for (std::size_t s = 0; s < script_.swarms.size(); ++s) {
    const SwarmSpec& spec = script_.swarms[s];
    std::vector<std::uint16_t> roster;
    for (int k = 0; k < spec.count; ++k) roster.push_back(static_cast<std::uint16_t>(next_id + k));
    for (int k = 0; k < spec.count; ++k) {
      auto r = std::make_unique<Robot>();
      r->id = next_id++;
      r->swarm = static_cast<int>(s);
      r->spec = &script_.swarms[s];
      r->rng = Rng(mix64(script_.seed ^ mix64(kRobotStream + r->id)));
      r->truth.x = spawn_rng.uniform(spec.spawn.x0, spec.spawn.x1);
      r->truth.y = spawn_rng.uniform(spec.spawn.y0, spec.spawn.y1);
      r->truth.yaw = normalize_angle(spawn_rng.uniform(-M_PI, M_PI));
      if (spec.ring) {
        const double theta = M_PI / 2.0 - 2.0 * M_PI * k / spec.count;
        r->truth.x = spec.ring->cx + spec.ring->radius * std::cos(theta);
        r->truth.y = spec.ring->cy + spec.ring->radius * std::sin(theta);
        r->truth.yaw = normalize_angle(theta - M_PI / 2.0);
      }
      r->aerial.pose = r->truth;
      r->roster = roster;

      const auto& loc = script_.loc;
      r->est.state << r->truth.x + r->rng.normal(0.0, 0.05), r->truth.y + r->rng.normal(0.0, 0.05), 0.0, 0.0,
          normalize_angle(r->truth.yaw + r->rng.normal(0.0, loc.initial_yaw_sigma));
      r->est.covariance = StateCovariance::Zero();
      r->est.covariance.diagonal() << 0.05 * 0.05, 0.05 * 0.05, 0.01, 0.01,
          std::max(loc.initial_yaw_sigma * loc.initial_yaw_sigma, 1e-6);
      r->fused = {r->est.state(kX), r->est.state(kY), 0.0, r->est.state(kYaw)};

      robot_index_[r->id] = robots_.size();
      bus_->join({r->id, NodeRole::Robot});
      robots_.push_back(std::move(r));
    }
  }
  if (script_.marker) {
    MarkerState m;
    m.position = {script_.marker->x, script_.marker->y};
    m.mode = script_.marker->mode;
    marker_ = m;
    bus_->join({kMarkerId, NodeRole::Marker});
  }
  for (int i = 0; i < script_.ground_stations; ++i) {
    const auto id = static_cast<std::uint16_t>(kFirstStationId + i);
    stations_.push_back(id);
    bus_->join({id, NodeRole::GroundStation});
  }

  trace_.seed = script_.seed;
  trace_.dt = kSimDt;
  trace_.duration = script_.duration;
  trace_.config = script_to_json(script_);
  for (const auto& r : robots_) {
    trace_.roster.push_back({r->id, NodeRole::Robot, r->swarm, r->spec->name, std::string(to_string(r->spec->cls.kind))});
  }
  if (marker_) trace_.roster.push_back({kMarkerId, NodeRole::Marker, -1, "", ""});
  for (auto id : stations_) trace_.roster.push_back({id, NodeRole::GroundStation, -1, "", ""});
  process_bus_events();
  wire_history_.emplace_back(0, 0);
}

std::optional<std::size_t> Simulation::program_id(const std::string& name) const {
  for (std::size_t i = programs_.size(); i-- > 0;) {
    if (programs_[i].name == name) return i;
  }
  return std::nullopt;
}

void Simulation::add_event(SimTime t, std::string kind, std::uint16_t node, std::string detail) {
  trace_.events.push_back({us_to_seconds(t), std::move(kind), node, std::move(detail)});
}

void Simulation::apply_cue(const Cue& cue) {
  const std::uint16_t station = stations_.front();
  std::string detail;
  switch (cue.command) {
    case CueCommand::Launch: {
      std::uint8_t group = kAllGroups;
      if (!cue.swarm.empty()) {
        const auto it = std::find_if(script_.swarms.begin(), script_.swarms.end(),
                                     [&](const SwarmSpec& s) { return s.name == cue.swarm; });
        if (it == script_.swarms.end()) throw Error(Errc::ConfigInvalid, "launch: unknown swarm '" + cue.swarm + "'");
        group = static_cast<std::uint8_t>(it - script_.swarms.begin());
        detail = cue.swarm;
      } else {
        detail = "all";
      }
      CommandMessage cmd{CommandKind::Launch, station, ++command_seq_, group};
      bus_->publish(station, encode(cmd));
      std::size_t k = 0;
      for (auto& r : robots_) {
        if (group != kAllGroups && r->swarm != group) continue;
        r->mode = RobotMode::Launching;
        r->next_gossip = std::numeric_limits<SimTime>::max();
        bus_->launch_transfer(stations_[k++ % stations_.size()], r->id, script_.launch_blob_bytes);
      }
      break;
    }
    case CueCommand::Switch: {
      const auto pid = program_id(cue.program);
      if (!pid) throw Error(Errc::ConfigInvalid, "switch: unknown program '" + cue.program + "'");
      CommandMessage cmd{CommandKind::Switch, station, ++command_seq_};
      cmd.program_id = static_cast<std::uint8_t>(*pid);
      bus_->publish(station, encode(cmd));
      detail = cue.program;
      break;
    }
    case CueCommand::Stop: {
      bus_->publish(station, encode(CommandMessage{CommandKind::Stop, station, ++command_seq_}));
      detail = "all";
      break;
    }
    case CueCommand::Marker: {
      if (!marker_) throw Error(Errc::ConfigInvalid, "marker: this performance has no marker node");
      const Vec2 p = clamp_to({0.0, 0.0, script_.venue.width, script_.venue.depth}, {cue.x, cue.y});
      marker_->position = p;
      marker_->mode = cue.marker_mode;
      marker_->next_broadcast = now_;
      marker_->moved = true;
      marker_out();
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f,%.3f,%s", p.x, p.y,
                    cue.marker_mode == MarkerMode::Repulsor ? "repulsor" : "attractor");
      detail = buf;
      break;
    }
  }
  trace_.cues.push_back({us_to_seconds(now_), cue.command, detail});
  spdlog::info("t={:.2f}s cue {} {}", us_to_seconds(now_), cue_kind(cue.command), detail);
  process_bus_events();
}

void Simulation::fire_due_cues() {
  while (next_cue_ < script_.cues.size()) {
    const Cue& c = script_.cues[next_cue_];
    if (!c.at) {
      ++next_cue_;  // manual cues come from the operator
      continue;
    }
    if (seconds_to_us(*c.at) > now_) break;
    apply_cue(c);
    ++next_cue_;
  }
}

void Simulation::start_program(Robot& r, std::size_t program, SimTime t) {
  r.program = program;
  r.program_start = t;
  r.phase = 0;
  r.phase_recorded = false;
  r.cue_error = false;
  record_program(r, t);
}

void Simulation::record_program(const Robot& r, SimTime t) {
  const BehaviorProgram& p = programs_[r.program];
  ProgramRecord rec{us_to_seconds(t), r.spec->name, std::string(to_string(r.spec->cls.kind)), p.name,
                    program_fingerprint(p), program_origin_[r.program]};
  auto it = last_program_record_.find(rec.swarm);
  if (it != last_program_record_.end() && it->second.program == rec.program &&
      it->second.fingerprint == rec.fingerprint) {
    return;
  }
  last_program_record_[rec.swarm] = rec;
  trace_.programs.push_back(std::move(rec));
}

void Simulation::process_bus_events() {
  for (auto& ev : bus_->take_events()) {
    switch (ev.kind) {
      case BusEventKind::Command: {
        if (!ev.command) break;
        if (ev.command->kind == CommandKind::MarkerPose) {
          if (!marker_ || !marker_->moved) break;
          marker_->moved = false;
        }
        std::string detail = ev.detail;
        if (ev.command->kind == CommandKind::Switch) detail = programs_[ev.command->program_id].name;
        if (ev.command->kind == CommandKind::MarkerPose) {
          char buf[48];
          std::snprintf(buf, sizeof buf, "%.3f,%.3f", ev.command->x_mm / 1000.0, ev.command->y_mm / 1000.0);
          detail = buf;
        }
        add_event(ev.t_us, std::string(to_string(ev.command->kind)), ev.node, detail);
        break;
      }
      case BusEventKind::TransferComplete: {
        add_event(ev.t_us, "transfer_complete", ev.node, ev.detail);
        const auto it = robot_index_.find(ev.node);
        if (it == robot_index_.end()) break;
        Robot& r = *robots_[it->second];
        if (r.mode != RobotMode::Launching) break;
        r.mode = RobotMode::Active;
        start_program(r, *program_id(script_.program), ev.t_us);
        // Stagger first broadcasts over the gossip period on the step grid.
        const auto slots = std::max<SimTime>(1, seconds_to_us(script_.net.gossip_period_ms / 1000.0) / kDtUs);
        r.next_gossip = now_ + static_cast<SimTime>(mix64(r.id) % static_cast<std::uint64_t>(slots)) * kDtUs;
        break;
      }
      case BusEventKind::Joined:
      case BusEventKind::Left:
      case BusEventKind::TransferAborted:
      case BusEventKind::Warning:
        add_event(ev.t_us, std::string(to_string(ev.kind)), ev.node, ev.detail);
        break;
      case BusEventKind::TransferStarted:
        break;
    }
  }
}

void Simulation::sense(Robot& r) {
  const auto& loc = script_.loc;
  const RobotKind kind = r.spec->cls.kind;
  const double dt = kSimDt;
  const double t = us_to_seconds(now_);

  if (kind == RobotKind::Tabletop) {
    // Wheel odometry plus two photodiodes decoding the projected gray code.
    const double v_odom =
        r.truth_speed + r.rng.normal(0.0, std::max(loc.noise.odom_speed_frac * std::abs(r.truth_speed),
                                                   loc.noise.odom_speed_floor));
    const double w_odom = r.truth_omega + r.rng.normal(0.0, loc.noise.odom_yaw_rate);
    double yaw = normalize_angle(r.fused.yaw + w_odom * dt);
    Vec2 pos{r.fused.x + v_odom * std::cos(r.fused.yaw) * dt, r.fused.y + v_odom * std::sin(r.fused.yaw) * dt};
    if (steps_ == 0) {
      yaw = r.fused.yaw;
      pos = r.fused.position();
    }

    const Rect& arena = r.spec->arena;
    const Venue coverage{arena.width(), arena.depth()};
    const Vec2 half = Vec2{std::cos(r.truth.yaw), std::sin(r.truth.yaw)} * (loc.photodiode_baseline / 2.0);
    const Vec2 origin{arena.x0, arena.y0};
    const auto front = simulate_projection(r.truth.position() + half - origin, coverage, loc.gray_width_bits);
    const auto rear = simulate_projection(r.truth.position() - half - origin, coverage, loc.gray_width_bits);
    if (!front.out_of_coverage && !rear.out_of_coverage) {
      const Vec2 f = decode_projection(front.frames, coverage, loc.gray_width_bits) + origin;
      const Vec2 b = decode_projection(rear.frames, coverage, loc.gray_width_bits) + origin;
      pos = (f + b) * 0.5;
      const Vec2 axis = f - b;
      if (norm(axis) > 0.0) {
        const double measured = std::atan2(axis.y, axis.x);
        yaw = normalize_angle(yaw + kTabletopYawBlend * normalize_angle(measured - yaw));
      }
    }
    r.fused = {pos.x, pos.y, 0.0, yaw};
    r.fused_velocity = Vec2{std::cos(yaw), std::sin(yaw)} * v_odom;
  } else {
    const bool aerial = kind == RobotKind::Aerial;
    if (steps_ > 0) {
      const double sv = std::max(loc.noise.odom_speed_frac * std::abs(r.truth_speed), loc.noise.odom_speed_floor);
      const OdometryInput odom{r.truth_speed + r.rng.normal(0.0, sv),
                               r.truth_omega + r.rng.normal(0.0, loc.noise.odom_yaw_rate)};
      const double imu = r.truth_omega + r.rng.normal(0.0, loc.noise.imu_yaw_rate);
      r.est = kf_predict(r.est, odom, imu, dt, loc.noise);
      r.est = kf_update_velocity(r.est, odom.v, loc.noise);
    }
    if (aerial) {
      const double range = std::max(0.0, r.truth.z + r.rng.normal(0.0, loc.lidar_sigma));
      if (auto z = altitude_from_lidar(range, 0.0, 0.0)) r.est_z = *z;
    }
    if (now_ >= r.next_uwb) {
      r.next_uwb = now_ + seconds_to_us(1.0 / loc.uwb_rate_hz);
      const double tag_z_true = aerial ? r.truth.z : r.spec->tag_height;
      const double tag_z_est = aerial ? r.est_z : r.spec->tag_height;
      const Eigen::Vector3d tag(r.truth.x, r.truth.y, tag_z_true);
      std::vector<TdoaMeasurement> ms;
      for (const auto& pair : default_pairs(anchors_)) {
        ms.push_back(simulate_tdoa(anchors_, pair, tag, loc.sigma_tdoa, r.rng));
      }
      try {
        const Eigen::Vector2d guess(r.est.state(kX), r.est.state(kY));
        const PositionFix fix = solve_position_tdoa(anchors_, ms, tag_z_est, guess);
        trace_.trajectories.push_back(
            {t, r.id, fix.xy.x(), fix.xy.y(), aerial ? r.est_z : 0.0, r.est.state(kYaw), TraceSource::UwbRaw});
        const auto upd = kf_update_uwb(r.est, fix.xy, fix.covariance, loc.noise);
        r.est = upd.estimate;
        if (upd.status == UpdateStatus::Singular) add_event(now_, "warning", r.id, "singular UWB innovation");
      } catch (const Error& e) {
        if (e.code() != Errc::NoFix) throw;
        spdlog::debug("robot {} no UWB fix at t={:.2f}: {}", r.id, t, e.what());
      }
    }
    r.fused = {r.est.state(kX), r.est.state(kY), aerial ? r.est_z : 0.0, r.est.state(kYaw)};
    r.fused_velocity = {r.est.state(kVx), r.est.state(kVy)};
  }

  trace_.trajectories.push_back({t, r.id, r.truth.x, r.truth.y, r.truth.z, r.truth.yaw, TraceSource::Truth});
  trace_.trajectories.push_back({t, r.id, r.fused.x, r.fused.y, r.fused.z, r.fused.yaw, TraceSource::Fused});
}

void Simulation::gossip_in(Robot& r) {
  for (auto& d : bus_->drain(r.id)) {
    if (peek_header(d.bytes).type == MsgType::TransferChunk) continue;
    const Message msg = decode(d.bytes);
    if (const auto* g = std::get_if<GossipMessage>(&msg)) {
      auto& n = r.neighbors[g->sender];
      const Pose p = g->pose();
      n.pos = p.position();
      n.z = p.z;
      n.vel = g->velocity();
      n.phase = g->phase;
      n.heard = d.t_us;
    } else if (const auto* c = std::get_if<CommandMessage>(&msg)) {
      switch (c->kind) {
        case CommandKind::Launch:
          break;  // activation follows the software transfer
        case CommandKind::Switch:
          if (r.mode == RobotMode::Active && c->program_id < programs_.size()) start_program(r, c->program_id, now_);
          break;
        case CommandKind::Stop:
          if (r.mode == RobotMode::Active || r.mode == RobotMode::Launching) {
            r.mode = RobotMode::Stopped;
            r.next_gossip = now_ + seconds_to_us(script_.net.quiescent_period_ms / 1000.0 *
                                                 static_cast<double>(mix64(r.id) % 100) / 100.0);
          }
          break;
        case CommandKind::MarkerPose:
          r.marker = Vec2{c->x_mm / 1000.0, c->y_mm / 1000.0};
          r.marker_mode = c->marker_mode;
          break;
      }
    }
  }
  const SimTime stale = seconds_to_us(kNeighborStaleness);
  std::erase_if(r.neighbors, [&](const auto& kv) { return now_ - kv.second.heard > stale; });
}

void Simulation::act(Robot& r) {
  const RobotClass& cls = r.spec->cls;
  const bool truth_mode = script_.loc.use_truth;
  const Pose& believed = truth_mode ? r.truth : r.fused;
  VelocityCommand cmd;

  if (r.mode == RobotMode::Active) {
    const PoseSource source = truth_mode ? PoseSource::Truth : PoseSource::Fused;
    SelfState self{r.id, believed, truth_mode ? Vec2{r.aerial.velocity.vx, r.aerial.velocity.vy} : r.fused_velocity,
                   source};
    if (truth_mode && cls.is_ground()) self.velocity = Vec2{std::cos(r.truth.yaw), std::sin(r.truth.yaw)} * r.truth_speed;
    NeighborView view;
    for (const auto& [id, n] : r.neighbors) {
      const auto it = robot_index_.find(id);
      if (it == robot_index_.end() || robots_[it->second]->swarm != r.swarm) continue;
      Vec2 pos = n.pos;
      if (truth_mode) pos = robots_[it->second]->truth.position();
      view.neighbors.push_back({id, pos - believed.position(), n.vel, n.phase, source});
    }
    view.marker = r.marker;
    view.marker_mode = r.marker_mode;
    view.roster = r.roster;
    if (probe_) probe_(self, view);

    const BehaviorProgram& prog = programs_[r.program];
    const BehaviorOutput out = step_behavior(prog, us_to_seconds(now_ - r.program_start), self, view);
    if (out.cue_error && !r.cue_error) {
      add_event(now_, "cue_error", r.id, prog.name + ": phase " + std::to_string(out.phase_index) + " has no marker");
    }
    r.cue_error = out.cue_error;
    if (static_cast<int>(out.phase_index) != r.phase) {
      r.phase = static_cast<int>(out.phase_index);
      r.phase_recorded = false;
    }
    cmd = clamp_command(out.command, cls.max_speed);
  }
  record_phase(r);

  const double dt = kSimDt;
  const Rect& arena = r.spec->arena;
  if (cls.is_ground()) {
    cmd.vz = 0.0;
    const WheelSpeeds w = velocity_to_wheels(cmd, believed, cls);
    const Pose next = diffdrive_step(r.truth, w, cls.wheel_track, dt);
    const Vec2 clamped = clamp_to(arena, next.position());
    r.truth = {clamped.x, clamped.y, 0.0, next.yaw};
    r.truth_speed = (w.left + w.right) / 2.0;
    r.truth_omega = (w.right - w.left) / cls.wheel_track;
  } else {
    const double target_z = r.mode == RobotMode::Active ? r.spec->altitude : 0.0;
    cmd.vz = std::clamp(kAltitudeGain * (target_z - r.est_z), -cls.max_speed, cls.max_speed);
    AerialState next = aerial_step(r.aerial, cmd, cls, dt);
    const Vec2 clamped = clamp_to(arena, next.pose.position());
    if (clamped.x != next.pose.x) next.velocity.vx = 0.0;
    if (clamped.y != next.pose.y) next.velocity.vy = 0.0;
    next.pose.x = clamped.x;
    next.pose.y = clamped.y;
    r.truth_speed = std::hypot(next.velocity.vx, next.velocity.vy);
    r.truth_omega = normalize_angle(next.pose.yaw - r.aerial.pose.yaw) / dt;
    r.aerial = next;
    r.truth = next.pose;
  }
  r.command = cmd;
}

void Simulation::record_phase(Robot& r) {
  if (r.phase_recorded) return;
  trace_.phases.push_back({us_to_seconds(now_), r.id, programs_[r.program].name, r.phase, r.mode});
  r.phase_recorded = true;
}

void Simulation::gossip_out(Robot& r) {
  if (r.mode != RobotMode::Active && r.mode != RobotMode::Stopped) return;
  if (now_ < r.next_gossip) return;
  const double period_ms =
      r.mode == RobotMode::Active ? script_.net.gossip_period_ms : script_.net.quiescent_period_ms;
  const Pose& p = script_.loc.use_truth ? r.truth : r.fused;
  GossipMessage g;
  g.sender = r.id;
  g.seq = r.seq++;
  g.t_ms = static_cast<std::uint32_t>(now_ / 1000);
  g.x_mm = mm(p.x);
  g.y_mm = mm(p.y);
  g.z_mm = mm(p.z);
  g.vx_mm_s = mm(r.fused_velocity.x);
  g.vy_mm_s = mm(r.fused_velocity.y);
  g.yaw_mrad = mm(p.yaw);
  g.program_id = static_cast<std::uint8_t>(r.program);
  g.phase = static_cast<std::uint8_t>(r.phase);
  bus_->publish(r.id, encode(g));
  r.next_gossip = now_ + seconds_to_us(period_ms / 1000.0);
}

void Simulation::marker_out() {
  if (!marker_ || now_ < marker_->next_broadcast) return;
  CommandMessage cmd{CommandKind::MarkerPose, kMarkerId, marker_->seq++};
  cmd.x_mm = mm(marker_->position.x);
  cmd.y_mm = mm(marker_->position.y);
  cmd.marker_mode = marker_->mode;
  bus_->publish(kMarkerId, encode(cmd));
  marker_->next_broadcast = now_ + seconds_to_us(script_.net.gossip_period_ms / 1000.0);
}

void Simulation::step() {
  bus_->advance_to(now_);
  process_bus_events();
  fire_due_cues();
  for (auto& r : robots_) sense(*r);
  for (auto& r : robots_) gossip_in(*r);
  for (auto& r : robots_) act(*r);
  for (auto& r : robots_) gossip_out(*r);
  marker_out();
  process_bus_events();
  now_ += kDtUs;
  ++steps_;
  wire_history_.emplace_back(now_, bus_->stats().wire_bytes);
}

void Simulation::run_until(double t) {
  const SimTime end = seconds_to_us(t);
  while (now_ < end) step();
}

std::vector<RobotSnapshot> Simulation::robots() const {
  std::vector<RobotSnapshot> out;
  for (const auto& r : robots_) out.push_back(*robot(r->id));
  return out;
}

std::optional<RobotSnapshot> Simulation::robot(std::uint16_t id) const {
  const auto it = robot_index_.find(id);
  if (it == robot_index_.end()) return std::nullopt;
  const Robot& r = *robots_[it->second];
  RobotSnapshot s;
  s.id = r.id;
  s.swarm = r.swarm;
  s.kind = r.spec->cls.kind;
  s.mode = r.mode;
  s.truth = r.truth;
  s.fused = r.fused;
  s.fused_velocity = r.fused_velocity;
  s.command = r.command;
  s.program = programs_[r.program].name;
  s.phase = r.phase;
  s.marker = r.marker;
  s.marker_mode = r.marker_mode;
  s.neighbors = r.neighbors.size();
  return s;
}

std::optional<Vec2> Simulation::marker_position() const {
  if (!marker_) return std::nullopt;
  return marker_->position;
}

double Simulation::recent_bandwidth(double window_s) const {
  const SimTime from = now_ - seconds_to_us(window_s);
  const auto it = std::lower_bound(wire_history_.begin(), wire_history_.end(), from,
                                   [](const auto& e, SimTime t) { return e.first < t; });
  const auto& first = it == wire_history_.end() ? wire_history_.back() : *it;
  const double span = us_to_seconds(now_ - first.first);
  if (span <= 0.0) return 0.0;
  return static_cast<double>(wire_history_.back().second - first.second) / span;
}

RunTrace Simulation::trace() const {
  RunTrace t = trace_;
  t.bandwidth = bus_->record_bandwidth(script_.bandwidth_window);
  return t;
}

nlohmann::json Simulation::snapshot(std::size_t first_event) const {
  using nlohmann::json;
  auto pose_json = [](const Pose& p) { return json{{"x", p.x}, {"y", p.y}, {"z", p.z}, {"yaw", p.yaw}}; };
  json robots = json::array();
  for (const auto& r : robots_) {
    robots.push_back({{"id", r->id},
                      {"class", std::string(to_string(r->spec->cls.kind))},
                      {"swarm", r->spec->name},
                      {"mode", std::string(to_string(r->mode))},
                      {"pose", pose_json(r->truth)},
                      {"estimate", pose_json(r->fused)},
                      {"speed", norm(r->command.planar())},
                      {"phase", r->phase},
                      {"program", programs_[r->program].name}});
  }
  json events = json::array();
  for (std::size_t i = first_event; i < trace_.events.size(); ++i) {
    const auto& e = trace_.events[i];
    events.push_back({{"t", e.t}, {"kind", e.kind}, {"node", e.node}, {"detail", e.detail}});
  }
  json doc{{"type", "snapshot"},
           {"v", 1},
           {"t", time()},
           {"step", steps_},
           {"robots", robots},
           {"bandwidth_window", {{"window_s", 1.0}, {"total_Bps", recent_bandwidth(1.0)}}},
           {"events", events}};
  doc["marker"] = marker_ ? json{{"x", marker_->position.x},
                                 {"y", marker_->position.y},
                                 {"mode", marker_->mode == MarkerMode::Repulsor ? "repulsor" : "attractor"}}
                          : json(nullptr);
  return doc;
}

RunTrace run(const PerformanceScript& script) {
  Simulation sim(script);
  const auto steps = static_cast<std::int64_t>(std::llround(script.duration / kSimDt));
  while (sim.step_count() < steps) sim.step();
  return sim.trace();
}

}  // namespace swarmstage
