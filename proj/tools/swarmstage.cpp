// swarmstage command line: run, serve, calibrate, export.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "swarmstage/error.hpp"
#include "swarmstage/server.hpp"
#include "swarmstage/simulation.hpp"
#include "swarmstage/uwb.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("SWARMSTAGE_LOG")) {
    spdlog::set_level(spdlog::level::from_str(lvl));
  }
}

swarmstage::PerformanceScript load(const std::string& path, std::optional<std::uint64_t> seed) {
  auto script = swarmstage::load_script(path);
  if (seed) {
    script.seed = *seed;
    script.net.seed = *seed;
  }
  return script;
}

int cmd_run(const std::string& script_path, std::optional<std::uint64_t> seed, const std::string& out) {
  const auto script = load(script_path, seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = swarmstage::run(script);
  swarmstage::write_trace(trace, out);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %d nodes, %.1f s simulated in %.2f s, seed %llu, trace in %s\n", script.name.c_str(),
              script.node_count(), script.duration, wall, static_cast<unsigned long long>(script.seed), out.c_str());
  return 0;
}

int cmd_serve(const std::string& script_path, std::uint16_t port, const std::string& address, double speed) {
  auto script = swarmstage::load_script(script_path);
  if (!script.manual) spdlog::warn("{} is a timed script; timed cues still fire while serving", script_path);
  swarmstage::LiveServer server(std::move(script), {address, port, speed});
  const auto bound = server.start();
  std::printf("serving ws://%s:%u (paused; send {\"type\":\"resume\"} to start)\n", address.c_str(),
              unsigned{bound});
  std::fflush(stdout);
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_calibrate(const std::string& ranges_path, const std::string& out, double sigma) {
  const auto ranges = swarmstage::load_range_matrix(ranges_path);
  swarmstage::CalibrationOptions opt;
  opt.range_sigma = sigma;
  const auto result = swarmstage::calibrate_anchors(ranges, opt);
  swarmstage::save_constellation(result.constellation, out);
  std::printf("calibrated %zu anchors, residual RMS %.4f m after %d iterations%s, written to %s\n",
              result.constellation.anchors.size(), result.residual_rms, result.iterations,
              result.planar ? " (planar layout)" : "", out.c_str());
  return 0;
}

int cmd_export(const std::string& trace_dir, const std::string& figure, std::string out) {
  const auto which = swarmstage::figure_from_string(figure);
  const auto trace = swarmstage::load_trace(trace_dir);
  if (out.empty()) out = (std::filesystem::path(trace_dir) / "figures").string();
  const auto files = swarmstage::replay_figure(trace, which, out);
  for (const auto& f : files.paths) std::printf("%s\n", f.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"swarmstage: multi-robot performance simulator"};
  app.require_subcommand(1);

  std::string script_path, out_dir = "trace", ranges_path, trace_dir, figure, address = "127.0.0.1";
  std::string calib_out = "anchors.json", export_out;
  std::optional<std::uint64_t> seed;
  std::uint16_t port = 8765;
  double speed = 1.0, sigma = 0.02;

  auto* run = app.add_subcommand("run", "Run a performance script to completion and write its trace");
  run->add_option("script", script_path, "Performance script")->required();
  run->add_option("--seed", seed, "Override the script seed");
  run->add_option("--out", out_dir, "Trace output directory");

  auto* serve = app.add_subcommand("serve", "Serve a live session over the websocket API");
  serve->add_option("script", script_path, "Performance script")->required();
  serve->add_option("--port", port, "TCP port (0 picks a free one)");
  serve->add_option("--address", address, "Bind address");
  serve->add_option("--speed", speed, "Simulated seconds per wall-clock second")->check(CLI::PositiveNumber);

  auto* calibrate = app.add_subcommand("calibrate", "Recover anchor positions from inter-anchor ranges");
  calibrate->add_option("ranges", ranges_path, "CSV matrix of ranges in metres (empty or nan = missing)")->required();
  calibrate->add_option("--out", calib_out, "Anchor constellation output");
  calibrate->add_option("--sigma", sigma, "Expected range noise, m")->check(CLI::PositiveNumber);

  auto* exp = app.add_subcommand("export", "Write plot data for a figure from a trace");
  exp->add_option("trace", trace_dir, "Trace directory")->required();
  exp->add_option("--figure", figure, "bandwidth or uwb")->required();
  exp->add_option("--out", export_out, "Output directory (default <trace>/figures)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "swarmstage: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*run) return cmd_run(script_path, seed, out_dir);
    if (*serve) return cmd_serve(script_path, port, address, speed);
    if (*calibrate) return cmd_calibrate(ranges_path, calib_out, sigma);
    if (*exp) return cmd_export(trace_dir, figure, export_out);
  } catch (const swarmstage::Error& e) {
    std::cerr << "swarmstage: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "swarmstage: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
