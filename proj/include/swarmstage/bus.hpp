#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "swarmstage/codec.hpp"
#include "swarmstage/rng.hpp"

namespace swarmstage {

/// Simulation time in microseconds.
using SimTime = std::int64_t;

inline constexpr SimTime seconds_to_us(double s) { return static_cast<SimTime>(s * 1e6 + (s >= 0 ? 0.5 : -0.5)); }
inline constexpr double us_to_seconds(SimTime t) { return static_cast<double>(t) * 1e-6; }

struct NetConfig {
  double latency_mean_ms = 5.0;
  double latency_jitter_ms = 2.0;
  double loss_prob = 0.0;
  std::uint64_t seed = 1;
  double gossip_period_ms = 250.0;
  /// Robots that received Stop keep a heartbeat at this period.
  double quiescent_period_ms = 5000.0;
  /// Per-stream pacing of bulk transfers.
  double transfer_rate_Bps = 800'000.0;

  void validate() const;
};

inline constexpr std::string_view kGossipTopic = "swarm/gossip";

struct Delivery {
  SimTime t_us = 0;
  std::uint16_t from = 0;
  std::uint16_t to = 0;
  Bytes bytes;
};

enum class BusEventKind { Joined, Left, Command, TransferStarted, TransferComplete, TransferAborted, Warning };
std::string_view to_string(BusEventKind kind) noexcept;

struct BusEvent {
  SimTime t_us = 0;
  BusEventKind kind = BusEventKind::Warning;
  std::uint16_t node = 0;
  std::optional<CommandMessage> command;
  std::uint32_t transfer_id = 0;
  std::uint16_t peer = 0;
  std::string detail;
};

inline constexpr std::size_t kRoleCount = 3;

struct BandwidthSample {
  double t = 0.0;  // window start, s
  double bytes_per_s = 0.0;
  double gossip_Bps = 0.0;    // gossip + command packets on the shared topic
  double transfer_Bps = 0.0;  // bulk transfer chunks
  std::array<double, kRoleCount> by_role{};  // indexed by NodeRole
  std::vector<CommandKind> events;           // Launch / Switch / Stop issued in the window
};

struct BusStats {
  std::uint64_t packets_sent = 0;
  std::uint64_t wire_bytes = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t dropped_loss = 0;
  std::uint64_t dropped_departed = 0;
};

/// Single-topic pub/sub medium advanced by the simulation clock. Publishing
/// is accounted once per transmission; each subscriber other than the sender
/// gets an independent loss draw and latency sample, and deliveries between a
/// given sender/receiver pair never reorder.
class GossipBus {
 public:
  explicit GossipBus(NetConfig config);

  const NetConfig& config() const noexcept { return config_; }
  SimTime now() const noexcept { return now_; }

  /// Throws Errc::IdConflict for an id already present. New nodes are
  /// subscribed to the gossip topic.
  void join(NodeId node);
  /// Throws Errc::UnknownNode. Undelivered packets for the node are dropped.
  void leave(std::uint16_t id);
  void subscribe(std::uint16_t id, std::string_view topic);
  void unsubscribe(std::uint16_t id, std::string_view topic);
  bool is_member(std::uint16_t id) const;
  std::optional<NodeId> member(std::uint16_t id) const;
  std::vector<NodeId> members() const;

  /// Broadcast at the current time. A sender that is not (or no longer) a
  /// member turns this into a no-op plus a Warning event. Commands from robots
  /// and MarkerPose from non-markers throw Errc::PermissionDenied.
  void publish(std::uint16_t sender, std::string_view topic, Bytes packet);
  void publish(std::uint16_t sender, Bytes packet) { publish(sender, kGossipTopic, std::move(packet)); }

  /// Thread-safe handoff for producers outside the simulation thread; queued
  /// packets are published at the start of the next advance_to().
  void enqueue_external(std::uint16_t sender, Bytes packet);

  /// Starts a chunked unicast stream of blob_size bytes from a ground station.
  /// Returns the transfer id; a zero-byte blob completes immediately.
  std::uint32_t launch_transfer(std::uint16_t station, std::uint16_t robot, std::size_t blob_size);
  std::size_t active_transfers() const noexcept { return transfers_.size(); }
  /// Wire bytes sent so far by one transfer.
  std::uint64_t transfer_bytes(std::uint32_t transfer_id) const;

  /// Runs transmissions and deliveries up to and including t.
  void advance_to(SimTime t);

  /// Packets delivered to the node since the previous drain, in delivery order.
  std::vector<Delivery> drain(std::uint16_t id);

  /// Events since the previous call.
  std::vector<BusEvent> take_events();
  const std::vector<BusEvent>& event_log() const noexcept { return events_; }

  std::vector<BandwidthSample> record_bandwidth(double window_s) const;
  const BusStats& stats() const noexcept { return stats_; }

 private:
  struct Member {
    NodeId node;
    std::uint64_t epoch = 0;
    std::vector<std::string> topics;
    std::vector<Delivery> inbox;
  };
  struct Pending {
    SimTime t_us;
    std::uint64_t order;
    std::uint16_t from;
    std::uint16_t to;
    std::uint64_t epoch;
    std::uint32_t transfer_id;  // 0 for topic traffic
    bool last_chunk;
    Bytes bytes;
  };
  struct PendingLater {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.t_us != b.t_us ? a.t_us > b.t_us : a.order > b.order;
    }
  };
  struct Transfer {
    std::uint32_t id;
    std::uint16_t station;
    std::uint16_t robot;
    std::uint64_t epoch;
    std::size_t total;
    std::size_t sent = 0;
    std::uint64_t chunks_sent = 0;
    std::uint64_t wire_bytes = 0;
    SimTime start_us;
    double interval_us;
  };
  struct TxRecord {
    SimTime t_us;
    std::uint16_t bytes;
    MsgType type;
    NodeRole role;
  };

  void transmit(SimTime t, std::uint16_t sender, NodeRole role, MsgType type, std::size_t size);
  SimTime sample_arrival(SimTime sent, std::uint16_t from, std::uint16_t to);
  void emit_chunk(Transfer& tr, SimTime t);
  void deliver(Pending&& p);
  void log(BusEvent ev);
  void drain_external();

  NetConfig config_;
  Rng rng_;
  SimTime now_ = 0;
  std::uint64_t order_ = 0;
  std::uint64_t next_epoch_ = 1;
  std::uint32_t next_transfer_ = 1;
  std::map<std::uint16_t, Member> members_;
  std::map<std::pair<std::uint16_t, std::uint16_t>, SimTime> last_arrival_;
  std::priority_queue<Pending, std::vector<Pending>, PendingLater> pending_;
  std::map<std::uint32_t, Transfer> transfers_;
  std::map<std::uint32_t, std::uint64_t> finished_transfer_bytes_;
  std::vector<TxRecord> tx_log_;
  std::vector<BusEvent> events_;
  std::size_t events_taken_ = 0;
  BusStats stats_;

  std::mutex external_mutex_;
  std::vector<std::pair<std::uint16_t, Bytes>> external_;
};

/// CSV with columns t_s,total_Bps,gossip_Bps,transfer_Bps,event.
std::string bandwidth_csv(const std::vector<BandwidthSample>& samples);

}  // namespace swarmstage
