#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "swarmstage/script.hpp"

namespace swarmstage {

inline constexpr int kSocketApiVersion = 1;

struct ServeOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  /// Simulated seconds per wall-clock second.
  double speed = 1.0;
};

/// Client message after validation, ready for the simulation thread.
struct ClientRequest {
  enum class Kind { Command, Marker, Pause, Resume, SetSeed } kind = Kind::Pause;
  Cue cue;
  std::uint64_t seed = 0;
};

/// Parses one socket API message. Throws Errc::InvalidInput with a message
/// suitable for the error reply.
ClientRequest parse_client_message(const std::string& text, const std::vector<std::string>& programs,
                                   const std::vector<std::string>& swarms, bool has_marker);

/// Live session over a websocket: one simulation thread owns the loop, one
/// I/O thread serves clients, and the two only exchange messages through the
/// inbound request queue and the outbound snapshot broadcast.
class LiveServer {
 public:
  LiveServer(PerformanceScript script, ServeOptions options);
  ~LiveServer();
  LiveServer(const LiveServer&) = delete;
  LiveServer& operator=(const LiveServer&) = delete;

  /// Binds and starts both threads; the simulation starts paused. Throws
  /// Errc::Io when the port cannot be bound.
  std::uint16_t start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  std::uint16_t port() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace swarmstage
