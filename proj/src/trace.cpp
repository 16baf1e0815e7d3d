#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "swarmstage/error.hpp"
#include "swarmstage/simulation.hpp"

namespace swarmstage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kTraceVersion = 1;

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string hex64(std::uint64_t v) { return fmt("%016" PRIx64, v); }

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::Io, p.string() + ": cannot write");
  out << content;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::Io, p.string() + ": no such file");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string csv_escape(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ',' || c == '\n') c = ';';
  }
  return out;
}

CueCommand cue_from_string(const std::string& s) {
  if (s == "launch") return CueCommand::Launch;
  if (s == "switch") return CueCommand::Switch;
  if (s == "stop") return CueCommand::Stop;
  if (s == "marker") return CueCommand::Marker;
  throw Error(Errc::MalformedPayload, "unknown cue kind '" + s + "'");
}

std::string_view cue_name(CueCommand c) {
  switch (c) {
    case CueCommand::Launch: return "launch";
    case CueCommand::Switch: return "switch";
    case CueCommand::Stop: return "stop";
    case CueCommand::Marker: return "marker";
  }
  return "?";
}

NodeRole role_from_string(const std::string& s) {
  if (s == "robot") return NodeRole::Robot;
  if (s == "marker") return NodeRole::Marker;
  if (s == "ground_station") return NodeRole::GroundStation;
  throw Error(Errc::MalformedPayload, "unknown role '" + s + "'");
}

RobotMode mode_from_string(const std::string& s) {
  for (auto m : {RobotMode::Idle, RobotMode::Launching, RobotMode::Active, RobotMode::Stopped}) {
    if (to_string(m) == s) return m;
  }
  throw Error(Errc::MalformedPayload, "unknown robot mode '" + s + "'");
}

TraceSource source_from_string(const std::string& s) {
  for (auto src : {TraceSource::Truth, TraceSource::UwbRaw, TraceSource::Fused}) {
    if (to_string(src) == s) return src;
  }
  throw Error(Errc::MalformedPayload, "unknown trajectory source '" + s + "'");
}

std::string event_color(std::string_view kind) {
  if (kind == "launch") return "red";
  if (kind == "switch") return "green";
  if (kind == "stop") return "purple";
  return "gray";
}

}  // namespace

void write_trace(const RunTrace& trace, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(Errc::Io, dir + ": " + ec.message());

  json roster = json::array();
  for (const auto& r : trace.roster) {
    json j{{"id", r.id}, {"role", std::string(to_string(r.role))}};
    if (r.role == NodeRole::Robot) {
      j["swarm"] = r.swarm_name;
      j["swarm_index"] = r.swarm;
      j["class"] = r.robot_class;
    }
    roster.push_back(std::move(j));
  }
  json programs = json::array();
  for (const auto& p : trace.programs) {
    programs.push_back({{"t", p.t},
                        {"swarm", p.swarm},
                        {"class", p.robot_class},
                        {"program", p.program},
                        {"fingerprint", hex64(p.fingerprint)},
                        {"origin", p.origin}});
  }
  json channels = json::array({"trajectories", "events", "cues", "phases"});
  if (trace.has_bandwidth) channels.push_back("bandwidth");
  const json header{{"format", "swarmstage-trace"},
                    {"version", kTraceVersion},
                    {"seed", trace.seed},
                    {"dt", trace.dt},
                    {"duration", trace.duration},
                    {"channels", channels},
                    {"roster", roster},
                    {"programs", programs},
                    {"config", trace.config}};
  write_file(root / "trace.json", header.dump(2) + "\n");

  std::string traj = "t_s,id,x,y,z,yaw,source\n";
  traj.reserve(trace.trajectories.size() * 56);
  for (const auto& r : trace.trajectories) {
    traj += fmt("%.3f,%u,%.6f,%.6f,%.6f,%.6f,", r.t, unsigned{r.id}, r.x, r.y, r.z, r.yaw);
    traj += to_string(r.source);
    traj += '\n';
  }
  write_file(root / "trajectories.csv", traj);

  if (trace.has_bandwidth) write_file(root / "bandwidth.csv", bandwidth_csv(trace.bandwidth));

  std::string events = "t_s,kind,node,detail\n";
  for (const auto& e : trace.events) {
    events += fmt("%.6f,", e.t) + e.kind + fmt(",%u,", unsigned{e.node}) + csv_escape(e.detail) + "\n";
  }
  write_file(root / "events.csv", events);

  std::string cues = "t_s,command,detail\n";
  for (const auto& c : trace.cues) {
    cues += fmt("%.6f,", c.t) + std::string(cue_name(c.command)) + "," + csv_escape(c.detail) + "\n";
  }
  write_file(root / "cues.csv", cues);

  std::string phases = "t_s,id,program,phase,mode\n";
  for (const auto& p : trace.phases) {
    phases += fmt("%.6f,%u,", p.t, unsigned{p.id}) + p.program + fmt(",%d,", p.phase) +
              std::string(to_string(p.mode)) + "\n";
  }
  write_file(root / "phases.csv", phases);
}

RunTrace load_trace(const std::string& dir) {
  const fs::path root(dir);
  const fs::path header_path = root / "trace.json";
  std::ifstream in(header_path);
  if (!in) throw Error(Errc::Io, header_path.string() + ": no such file");
  json h;
  try {
    h = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedPayload, header_path.string() + ": " + e.what());
  }
  if (h.value("format", "") != "swarmstage-trace") {
    throw Error(Errc::MalformedPayload, header_path.string() + ": not a trace header");
  }
  if (h.value("version", 0) != kTraceVersion) throw Error(Errc::BadVersion, "unsupported trace version");

  RunTrace t;
  t.seed = h.at("seed").get<std::uint64_t>();
  t.dt = h.at("dt").get<double>();
  t.duration = h.at("duration").get<double>();
  t.config = h.at("config");
  for (const auto& r : h.at("roster")) {
    RosterEntry e;
    e.id = r.at("id").get<std::uint16_t>();
    e.role = role_from_string(r.at("role").get<std::string>());
    if (e.role == NodeRole::Robot) {
      e.swarm = r.at("swarm_index").get<int>();
      e.swarm_name = r.at("swarm").get<std::string>();
      e.robot_class = r.at("class").get<std::string>();
    }
    t.roster.push_back(std::move(e));
  }
  for (const auto& p : h.at("programs")) {
    t.programs.push_back({p.at("t").get<double>(), p.at("swarm").get<std::string>(), p.at("class").get<std::string>(),
                          p.at("program").get<std::string>(),
                          std::stoull(p.at("fingerprint").get<std::string>(), nullptr, 16),
                          p.at("origin").get<std::string>()});
  }

  std::set<std::string> channels;
  for (const auto& c : h.at("channels")) channels.insert(c.get<std::string>());

  if (channels.contains("trajectories") && fs::exists(root / "trajectories.csv")) {
    for (const auto& row : read_csv(root / "trajectories.csv")) {
      if (row.size() != 7) throw Error(Errc::MalformedPayload, "trajectories.csv: expected 7 columns");
      t.trajectories.push_back({std::stod(row[0]), static_cast<std::uint16_t>(std::stoul(row[1])), std::stod(row[2]),
                                std::stod(row[3]), std::stod(row[4]), std::stod(row[5]), source_from_string(row[6])});
    }
  }
  t.has_bandwidth = channels.contains("bandwidth") && fs::exists(root / "bandwidth.csv");
  if (t.has_bandwidth) {
    for (const auto& row : read_csv(root / "bandwidth.csv")) {
      if (row.size() != 5) throw Error(Errc::MalformedPayload, "bandwidth.csv: expected 5 columns");
      BandwidthSample s;
      s.t = std::stod(row[0]);
      s.bytes_per_s = std::stod(row[1]);
      s.gossip_Bps = std::stod(row[2]);
      s.transfer_Bps = std::stod(row[3]);
      std::stringstream ss(row[4]);
      std::string kind;
      while (std::getline(ss, kind, '|')) {
        if (kind == "launch") s.events.push_back(CommandKind::Launch);
        else if (kind == "switch") s.events.push_back(CommandKind::Switch);
        else if (kind == "stop") s.events.push_back(CommandKind::Stop);
      }
      t.bandwidth.push_back(std::move(s));
    }
  }
  if (fs::exists(root / "events.csv")) {
    for (const auto& row : read_csv(root / "events.csv")) {
      if (row.size() < 4) throw Error(Errc::MalformedPayload, "events.csv: expected 4 columns");
      t.events.push_back({std::stod(row[0]), row[1], static_cast<std::uint16_t>(std::stoul(row[2])), row[3]});
    }
  }
  if (fs::exists(root / "cues.csv")) {
    for (const auto& row : read_csv(root / "cues.csv")) {
      if (row.size() < 3) throw Error(Errc::MalformedPayload, "cues.csv: expected 3 columns");
      t.cues.push_back({std::stod(row[0]), cue_from_string(row[1]), row[2]});
    }
  }
  if (fs::exists(root / "phases.csv")) {
    for (const auto& row : read_csv(root / "phases.csv")) {
      if (row.size() != 5) throw Error(Errc::MalformedPayload, "phases.csv: expected 5 columns");
      t.phases.push_back({std::stod(row[0]), static_cast<std::uint16_t>(std::stoul(row[1])), row[2],
                          std::stoi(row[3]), mode_from_string(row[4])});
    }
  }
  return t;
}

Figure figure_from_string(std::string_view name) {
  if (name == "bandwidth") return Figure::Bandwidth;
  if (name == "uwb" || name == "uwb_vs_truth") return Figure::UwbVsTruth;
  throw Error(Errc::InvalidInput, "unknown figure '" + std::string(name) + "' (expected bandwidth or uwb)");
}

FigureFiles replay_figure(const RunTrace& trace, Figure which, const std::string& out_dir) {
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(Errc::Io, out_dir + ": " + ec.message());
  FigureFiles files;

  if (which == Figure::Bandwidth) {
    if (!trace.has_bandwidth || trace.bandwidth.empty()) {
      throw Error(Errc::MissingChannel, "trace has no bandwidth channel");
    }
    const fs::path series = root / "bandwidth_series.csv";
    write_file(series, bandwidth_csv(trace.bandwidth));

    std::string ev = "t_s,kind,color,detail\n";
    for (const auto& c : trace.cues) {
      const auto kind = cue_name(c.command);
      ev += fmt("%.6f,", c.t) + std::string(kind) + "," + event_color(kind) + "," + csv_escape(c.detail) + "\n";
    }
    const fs::path events = root / "bandwidth_events.csv";
    write_file(events, ev);

    const json plot{{"title", "Swarm bandwidth"},
                    {"data", series.filename().string()},
                    {"x", {{"column", "t_s"}, {"label", "time (s)"}}},
                    {"y", {{"label", "bandwidth (B/s)"}, {"scale", "log"}}},
                    {"series", json::array({json{{"column", "total_Bps"}, {"label", "total"}},
                                            json{{"column", "gossip_Bps"}, {"label", "gossip"}},
                                            json{{"column", "transfer_Bps"}, {"label", "transfer"}}})},
                    {"event_markers",
                     {{"data", events.filename().string()},
                      {"column", "t_s"},
                      {"style", "dotted"},
                      {"colors", {{"launch", "red"}, {"switch", "green"}, {"stop", "purple"}, {"marker", "gray"}}}}}};
    const fs::path plot_path = root / "bandwidth_plot.json";
    write_file(plot_path, plot.dump(2) + "\n");
    files.paths = {series.string(), events.string(), plot_path.string()};
    return files;
  }

  // uwb_vs_truth: raw fixes with truth and fused estimate at the same instant.
  std::map<std::pair<std::uint16_t, std::int64_t>, const TrajectoryRow*> truth;
  std::map<std::pair<std::uint16_t, std::int64_t>, const TrajectoryRow*> fused;
  std::vector<const TrajectoryRow*> raw;
  for (const auto& r : trace.trajectories) {
    const auto key = std::make_pair(r.id, std::llround(r.t * 1000.0));
    if (r.source == TraceSource::Truth) truth[key] = &r;
    else if (r.source == TraceSource::Fused) fused[key] = &r;
    else raw.push_back(&r);
  }
  if (truth.empty()) throw Error(Errc::MissingChannel, "trace has no truth trajectory channel");
  if (raw.empty()) throw Error(Errc::MissingChannel, "trace has no uwb_raw trajectory channel");

  std::string csv = "t_s,id,truth_x,truth_y,uwb_x,uwb_y,fused_x,fused_y\n";
  std::map<std::uint16_t, std::pair<std::vector<TrackPoint>, std::vector<TrackPoint>>> per_robot;
  std::map<std::uint16_t, std::vector<TrackPoint>> per_robot_fused;
  for (const auto* r : raw) {
    const auto key = std::make_pair(r->id, std::llround(r->t * 1000.0));
    const auto tt = truth.find(key);
    const auto ff = fused.find(key);
    if (tt == truth.end() || ff == fused.end()) continue;
    csv += fmt("%.3f,%u,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r->t, unsigned{r->id}, tt->second->x, tt->second->y, r->x,
               r->y, ff->second->x, ff->second->y);
    per_robot[r->id].first.push_back({r->t, r->x, r->y, 0.0, 0.0});
    per_robot[r->id].second.push_back({tt->second->t, tt->second->x, tt->second->y, 0.0, 0.0});
    per_robot_fused[r->id].push_back({ff->second->t, ff->second->x, ff->second->y, 0.0, 0.0});
  }
  const fs::path series = root / "uwb_vs_truth.csv";
  write_file(series, csv);

  json summary = json::array();
  for (const auto& [id, tracks] : per_robot) {
    if (tracks.second.size() < 2) continue;
    const auto raw_report = error_report(tracks.first, tracks.second);
    const auto fused_report = error_report(per_robot_fused[id], tracks.second);
    summary.push_back({{"id", id}, {"uwb_rmse", raw_report.rmse}, {"fused_rmse", fused_report.rmse}});
  }
  const json plot{{"title", "UWB estimate vs ground truth"},
                  {"data", series.filename().string()},
                  {"aspect", "equal"},
                  {"group_by", "id"},
                  {"x", {{"label", "x (m)"}}},
                  {"y", {{"label", "y (m)"}}},
                  {"series", json::array({json{{"x", "truth_x"}, {"y", "truth_y"}, {"label", "ground truth"},
                                               {"color", "blue"}, {"style", "line"}},
                                          json{{"x", "uwb_x"}, {"y", "uwb_y"}, {"label", "UWB"}, {"color", "orange"},
                                               {"style", "markers"}},
                                          json{{"x", "fused_x"}, {"y", "fused_y"}, {"label", "fused"},
                                               {"color", "green"}, {"style", "line"}}})},
                  {"errors", summary}};
  const fs::path plot_path = root / "uwb_plot.json";
  write_file(plot_path, plot.dump(2) + "\n");
  files.paths = {series.string(), plot_path.string()};
  return files;
}

}  // namespace swarmstage
