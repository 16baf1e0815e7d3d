#include "swarmstage/script.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "swarmstage/error.hpp"

namespace swarmstage {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error(Errc::ConfigInvalid, path + ": " + msg);
}

double get_number(const json& obj, const std::string& key, const std::string& path, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

int get_int(const json& obj, const std::string& key, const std::string& path, int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<int>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& path, std::string fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& obj, const std::string& key, const std::string& path, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
  return v.get<bool>();
}

void only_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      fail(path + "." + k, "unknown field");
    }
  }
}

Rect get_rect(const json& obj, const std::string& key, const std::string& path, Rect fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 4 || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
    fail(path + "." + key, "expected [x0, y0, x1, y1]");
  }
  Rect r{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  if (!(r.x1 > r.x0) || !(r.y1 > r.y0)) fail(path + "." + key, "rectangle must have x1 > x0 and y1 > y0");
  return r;
}

MarkerMode parse_marker_mode(const std::string& s, const std::string& path) {
  if (s == "attractor") return MarkerMode::Attractor;
  if (s == "repulsor") return MarkerMode::Repulsor;
  fail(path, "expected \"attractor\" or \"repulsor\"");
}

std::string marker_mode_name(MarkerMode m) { return m == MarkerMode::Repulsor ? "repulsor" : "attractor"; }

std::string cue_name(CueCommand c) {
  switch (c) {
    case CueCommand::Launch: return "launch";
    case CueCommand::Switch: return "switch";
    case CueCommand::Stop: return "stop";
    case CueCommand::Marker: return "marker";
  }
  return "?";
}

json rect_json(const Rect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }

}  // namespace

int PerformanceScript::node_count() const noexcept {
  int n = ground_stations + (marker ? 1 : 0);
  for (const auto& s : swarms) n += s.count;
  return n;
}

void PerformanceScript::validate() const {
  if (!(duration >= 0.0)) fail("duration", "must be >= 0");
  if (swarms.empty()) fail("swarms", "at least one swarm is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < swarms.size(); ++i) {
    const auto& s = swarms[i];
    const std::string path = "swarms[" + std::to_string(i) + "]";
    if (s.count < 1) fail(path + ".count", "must be >= 1");
    if (!names.insert(s.name).second) fail(path + ".name", "duplicate swarm name '" + s.name + "'");
    try {
      s.cls.validate();
    } catch (const Error& e) {
      fail(path + ".class", e.what());
    }
    if (s.spawn.x0 < s.arena.x0 || s.spawn.x1 > s.arena.x1 || s.spawn.y0 < s.arena.y0 || s.spawn.y1 > s.arena.y1) {
      fail(path + ".spawn", "must lie inside the arena");
    }
  }
  if (ground_stations < 1) fail("ground_stations", "at least one ground station issues the cues");
  if (node_count() > max_nodes) {
    fail("swarms", "total node count " + std::to_string(node_count()) + " exceeds max_nodes " +
                       std::to_string(max_nodes));
  }
  double last = 0.0;
  for (std::size_t i = 0; i < cues.size(); ++i) {
    const auto& c = cues[i];
    const std::string path = "cues[" + std::to_string(i) + "]";
    if (c.at) {
      if (!(*c.at >= 0.0)) fail(path + ".at", "must be >= 0");
      if (*c.at < last) fail(path + ".at", "cue times must be non-decreasing");
      last = *c.at;
    }
    if (c.command == CueCommand::Launch && !c.swarm.empty() && !names.contains(c.swarm)) {
      fail(path + ".swarm", "unknown swarm '" + c.swarm + "'");
    }
    if (c.command == CueCommand::Marker && !marker) fail(path, "marker cue without a marker node");
  }
  try {
    net.validate();
  } catch (const Error& e) {
    fail("net", e.what());
  }
  if (!(loc.sigma_tdoa > 0.0)) fail("loc.sigma_tdoa", "must be > 0");
  if (!(loc.uwb_rate_hz > 0.0)) fail("loc.uwb_rate_hz", "must be > 0");
  if (!(bandwidth_window > 0.0)) fail("bandwidth_window", "must be > 0");
}

PerformanceScript script_from_json(const json& doc, const std::string& base_dir) {
  only_keys(doc, "script",
            {"name", "duration", "seed", "mode", "program", "program_files", "venue", "swarms", "marker",
             "ground_stations", "cues", "net", "loc", "launch_blob_bytes", "max_nodes", "bandwidth_window"});
  PerformanceScript s;
  s.name = get_string(doc, "name", "script", s.name);
  s.duration = get_number(doc, "duration", "script", s.duration);
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) fail("seed", "expected a non-negative integer");
    s.seed = doc.at("seed").get<std::uint64_t>();
  }
  const std::string mode = get_string(doc, "mode", "script", "timed");
  if (mode != "timed" && mode != "manual") fail("mode", "expected \"timed\" or \"manual\"");
  s.manual = mode == "manual";
  s.program = get_string(doc, "program", "script", s.program);

  if (doc.contains("venue")) {
    const json& v = doc.at("venue");
    only_keys(v, "venue", {"width", "depth"});
    s.venue.width = get_number(v, "width", "venue", s.venue.width);
    s.venue.depth = get_number(v, "depth", "venue", s.venue.depth);
    if (!(s.venue.width > 0.0) || !(s.venue.depth > 0.0)) fail("venue", "width and depth must be > 0");
  }
  const Rect whole{0.0, 0.0, s.venue.width, s.venue.depth};

  if (doc.contains("program_files")) {
    const json& files = doc.at("program_files");
    if (!files.is_array()) fail("program_files", "expected an array of paths");
    for (std::size_t i = 0; i < files.size(); ++i) {
      if (!files[i].is_string()) fail("program_files[" + std::to_string(i) + "]", "expected a path");
      std::filesystem::path p = files[i].get<std::string>();
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      s.program_files.push_back(files[i].get<std::string>());
      try {
        s.programs.push_back(load_program_file(p.string()));
      } catch (const Error& e) {
        fail("program_files[" + std::to_string(i) + "]", e.what());
      }
    }
  }

  if (!doc.contains("swarms") || !doc.at("swarms").is_array()) fail("swarms", "expected an array");
  for (std::size_t i = 0; i < doc.at("swarms").size(); ++i) {
    const json& j = doc.at("swarms")[i];
    const std::string path = "swarms[" + std::to_string(i) + "]";
    only_keys(j, path,
              {"name", "class", "count", "spawn", "arena", "altitude", "tag_height", "max_speed", "max_accel",
               "wheel_track", "ring"});
    SwarmSpec sw;
    const std::string cls = get_string(j, "class", path, "");
    try {
      sw.cls = RobotClass::defaults_for(robot_kind_from_string(cls));
    } catch (const Error& e) {
      fail(path + ".class", e.what());
    }
    sw.name = get_string(j, "name", path, std::string(to_string(sw.cls.kind)) + std::to_string(i));
    sw.count = get_int(j, "count", path, 1);
    sw.cls.max_speed = get_number(j, "max_speed", path, sw.cls.max_speed);
    sw.cls.max_accel = get_number(j, "max_accel", path, sw.cls.max_accel);
    sw.cls.wheel_track = get_number(j, "wheel_track", path, sw.cls.wheel_track);
    sw.arena = get_rect(j, "arena", path, whole);
    sw.spawn = get_rect(j, "spawn", path, sw.arena);
    if (j.contains("ring")) {
      const json& rj = j.at("ring");
      only_keys(rj, path + ".ring", {"x", "y", "radius"});
      RingFormation ring;
      ring.cx = get_number(rj, "x", path + ".ring", ring.cx);
      ring.cy = get_number(rj, "y", path + ".ring", ring.cy);
      ring.radius = get_number(rj, "radius", path + ".ring", ring.radius);
      if (!(ring.radius > 0.0)) fail(path + ".ring.radius", "must be > 0");
      if (!sw.arena.contains({ring.cx - ring.radius, ring.cy - ring.radius}) ||
          !sw.arena.contains({ring.cx + ring.radius, ring.cy + ring.radius})) {
        fail(path + ".ring", "circle must lie inside the arena");
      }
      sw.ring = ring;
    }
    sw.altitude = get_number(j, "altitude", path, sw.altitude);
    const double default_tag = sw.cls.kind == RobotKind::HumanScale ? 1.2 : 0.0;
    sw.tag_height = get_number(j, "tag_height", path, default_tag);
    s.swarms.push_back(std::move(sw));
  }

  if (doc.contains("marker") && !doc.at("marker").is_null()) {
    const json& m = doc.at("marker");
    only_keys(m, "marker", {"x", "y", "mode"});
    MarkerSpec ms;
    ms.x = get_number(m, "x", "marker", ms.x);
    ms.y = get_number(m, "y", "marker", ms.y);
    ms.mode = parse_marker_mode(get_string(m, "mode", "marker", "attractor"), "marker.mode");
    s.marker = ms;
  }
  s.ground_stations = get_int(doc, "ground_stations", "script", s.ground_stations);

  if (doc.contains("cues")) {
    if (!doc.at("cues").is_array()) fail("cues", "expected an array");
    for (std::size_t i = 0; i < doc.at("cues").size(); ++i) {
      const json& j = doc.at("cues")[i];
      const std::string path = "cues[" + std::to_string(i) + "]";
      only_keys(j, path, {"at", "command", "swarm", "program", "x", "y", "mode"});
      Cue c;
      if (!j.contains("at") || (j.at("at").is_string() && j.at("at").get<std::string>() == "manual")) {
        c.at = std::nullopt;
      } else if (j.at("at").is_number()) {
        c.at = j.at("at").get<double>();
      } else {
        fail(path + ".at", "expected seconds or \"manual\"");
      }
      const std::string cmd = get_string(j, "command", path, "");
      if (cmd == "launch") c.command = CueCommand::Launch;
      else if (cmd == "switch") c.command = CueCommand::Switch;
      else if (cmd == "stop") c.command = CueCommand::Stop;
      else if (cmd == "marker") c.command = CueCommand::Marker;
      else fail(path + ".command", "expected launch, switch, stop or marker");
      c.swarm = get_string(j, "swarm", path, "");
      c.program = get_string(j, "program", path, "");
      if (c.command == CueCommand::Switch && c.program.empty()) fail(path + ".program", "switch needs a program");
      c.x = get_number(j, "x", path, 0.0);
      c.y = get_number(j, "y", path, 0.0);
      c.marker_mode = parse_marker_mode(get_string(j, "mode", path, "attractor"), path + ".mode");
      s.cues.push_back(std::move(c));
    }
  }

  if (doc.contains("net")) {
    const json& n = doc.at("net");
    only_keys(n, "net",
              {"latency_mean_ms", "latency_jitter_ms", "loss_prob", "seed", "gossip_period_ms", "quiescent_period_ms",
               "transfer_rate_Bps"});
    s.net.latency_mean_ms = get_number(n, "latency_mean_ms", "net", s.net.latency_mean_ms);
    s.net.latency_jitter_ms = get_number(n, "latency_jitter_ms", "net", s.net.latency_jitter_ms);
    s.net.loss_prob = get_number(n, "loss_prob", "net", s.net.loss_prob);
    s.net.gossip_period_ms = get_number(n, "gossip_period_ms", "net", s.net.gossip_period_ms);
    s.net.quiescent_period_ms = get_number(n, "quiescent_period_ms", "net", s.net.quiescent_period_ms);
    s.net.transfer_rate_Bps = get_number(n, "transfer_rate_Bps", "net", s.net.transfer_rate_Bps);
  }
  if (doc.contains("loc")) {
    const json& l = doc.at("loc");
    only_keys(l, "loc",
              {"sigma_tdoa", "uwb_rate_hz", "lidar_sigma", "initial_yaw_sigma", "gray_width_bits", "anchors_file",
               "use_truth", "odom_speed_frac", "imu_yaw_rate", "odom_yaw_rate"});
    s.loc.sigma_tdoa = get_number(l, "sigma_tdoa", "loc", s.loc.sigma_tdoa);
    s.loc.uwb_rate_hz = get_number(l, "uwb_rate_hz", "loc", s.loc.uwb_rate_hz);
    s.loc.lidar_sigma = get_number(l, "lidar_sigma", "loc", s.loc.lidar_sigma);
    s.loc.initial_yaw_sigma = get_number(l, "initial_yaw_sigma", "loc", s.loc.initial_yaw_sigma);
    s.loc.gray_width_bits = get_int(l, "gray_width_bits", "loc", s.loc.gray_width_bits);
    s.loc.use_truth = get_bool(l, "use_truth", "loc", s.loc.use_truth);
    s.loc.noise.odom_speed_frac = get_number(l, "odom_speed_frac", "loc", s.loc.noise.odom_speed_frac);
    s.loc.noise.imu_yaw_rate = get_number(l, "imu_yaw_rate", "loc", s.loc.noise.imu_yaw_rate);
    s.loc.noise.odom_yaw_rate = get_number(l, "odom_yaw_rate", "loc", s.loc.noise.odom_yaw_rate);
    if (l.contains("anchors_file")) {
      std::filesystem::path p = get_string(l, "anchors_file", "loc", "");
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      s.loc.anchors_file = p.string();
    }
  }
  if (doc.contains("launch_blob_bytes")) {
    if (!doc.at("launch_blob_bytes").is_number_unsigned()) fail("launch_blob_bytes", "expected a byte count");
    s.launch_blob_bytes = doc.at("launch_blob_bytes").get<std::size_t>();
  }
  s.max_nodes = get_int(doc, "max_nodes", "script", s.max_nodes);
  s.bandwidth_window = get_number(doc, "bandwidth_window", "script", s.bandwidth_window);
  s.net.seed = s.seed;
  s.validate();
  return s;
}

PerformanceScript load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, path + ": no such file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigInvalid, path + ": " + e.what());
  }
  const auto parent = std::filesystem::path(path).parent_path();
  return script_from_json(doc, parent.empty() ? "." : parent.string());
}

json script_to_json(const PerformanceScript& s) {
  json swarms = json::array();
  for (const auto& sw : s.swarms) {
    swarms.push_back({{"name", sw.name},
                      {"class", std::string(to_string(sw.cls.kind))},
                      {"count", sw.count},
                      {"spawn", rect_json(sw.spawn)},
                      {"arena", rect_json(sw.arena)},
                      {"altitude", sw.altitude},
                      {"tag_height", sw.tag_height},
                      {"max_speed", sw.cls.max_speed},
                      {"max_accel", sw.cls.max_accel},
                      {"wheel_track", sw.cls.wheel_track}});
    if (sw.ring) {
      swarms.back()["ring"] = {{"x", sw.ring->cx}, {"y", sw.ring->cy}, {"radius", sw.ring->radius}};
    }
  }
  json cues = json::array();
  for (const auto& c : s.cues) {
    json j{{"command", cue_name(c.command)}};
    j["at"] = c.at ? json(*c.at) : json("manual");
    if (c.command == CueCommand::Launch && !c.swarm.empty()) j["swarm"] = c.swarm;
    if (c.command == CueCommand::Switch) j["program"] = c.program;
    if (c.command == CueCommand::Marker) {
      j["x"] = c.x;
      j["y"] = c.y;
      j["mode"] = marker_mode_name(c.marker_mode);
    }
    cues.push_back(std::move(j));
  }
  json doc{{"name", s.name},
           {"duration", s.duration},
           {"seed", s.seed},
           {"mode", s.manual ? "manual" : "timed"},
           {"program", s.program},
           {"program_files", s.program_files},
           {"venue", {{"width", s.venue.width}, {"depth", s.venue.depth}}},
           {"swarms", swarms},
           {"ground_stations", s.ground_stations},
           {"cues", cues},
           {"net",
            {{"latency_mean_ms", s.net.latency_mean_ms},
             {"latency_jitter_ms", s.net.latency_jitter_ms},
             {"loss_prob", s.net.loss_prob},
             {"gossip_period_ms", s.net.gossip_period_ms},
             {"quiescent_period_ms", s.net.quiescent_period_ms},
             {"transfer_rate_Bps", s.net.transfer_rate_Bps}}},
           {"loc",
            {{"sigma_tdoa", s.loc.sigma_tdoa},
             {"uwb_rate_hz", s.loc.uwb_rate_hz},
             {"lidar_sigma", s.loc.lidar_sigma},
             {"initial_yaw_sigma", s.loc.initial_yaw_sigma},
             {"gray_width_bits", s.loc.gray_width_bits},
             {"use_truth", s.loc.use_truth},
             {"odom_speed_frac", s.loc.noise.odom_speed_frac},
             {"imu_yaw_rate", s.loc.noise.imu_yaw_rate},
             {"odom_yaw_rate", s.loc.noise.odom_yaw_rate}}},
           {"launch_blob_bytes", s.launch_blob_bytes},
           {"max_nodes", s.max_nodes},
           {"bandwidth_window", s.bandwidth_window}};
  doc["marker"] = s.marker ? json{{"x", s.marker->x}, {"y", s.marker->y}, {"mode", marker_mode_name(s.marker->mode)}}
                           : json(nullptr);
  if (s.loc.anchors_file) doc["loc"]["anchors_file"] = *s.loc.anchors_file;
  return doc;
}

}  // namespace swarmstage
