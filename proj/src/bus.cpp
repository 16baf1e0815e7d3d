#include "swarmstage/bus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <spdlog/spdlog.h>

#include "swarmstage/error.hpp"

namespace swarmstage {

void NetConfig::validate() const {
  if (!(loss_prob >= 0.0 && loss_prob <= 1.0)) throw Error(Errc::ConfigInvalid, "net.loss_prob must be in [0, 1]");
  if (!(latency_mean_ms >= 0.0) || !(latency_jitter_ms >= 0.0)) {
    throw Error(Errc::ConfigInvalid, "net.latency_mean_ms and net.latency_jitter_ms must be >= 0");
  }
  if (!(gossip_period_ms > 0.0)) throw Error(Errc::ConfigInvalid, "net.gossip_period_ms must be > 0");
  if (!(quiescent_period_ms > 0.0)) throw Error(Errc::ConfigInvalid, "net.quiescent_period_ms must be > 0");
  if (!(transfer_rate_Bps > 0.0)) throw Error(Errc::ConfigInvalid, "net.transfer_rate_Bps must be > 0");
}

std::string_view to_string(BusEventKind kind) noexcept {
  switch (kind) {
    case BusEventKind::Joined: return "joined";
    case BusEventKind::Left: return "left";
    case BusEventKind::Command: return "command";
    case BusEventKind::TransferStarted: return "transfer_started";
    case BusEventKind::TransferComplete: return "transfer_complete";
    case BusEventKind::TransferAborted: return "transfer_aborted";
    case BusEventKind::Warning: return "warning";
  }
  return "?";
}

GossipBus::GossipBus(NetConfig config) : config_(config), rng_(mix64(config.seed)) { config_.validate(); }

void GossipBus::log(BusEvent ev) { events_.push_back(std::move(ev)); }

void GossipBus::join(NodeId node) {
  if (members_.contains(node.id)) {
    throw Error(Errc::IdConflict, "node " + std::to_string(node.id) + " already joined");
  }
  Member m;
  m.node = node;
  m.epoch = next_epoch_++;
  m.topics.emplace_back(kGossipTopic);
  members_.emplace(node.id, std::move(m));
  log({now_, BusEventKind::Joined, node.id, {}, 0, 0, std::string(to_string(node.role))});
}

void GossipBus::leave(std::uint16_t id) {
  auto it = members_.find(id);
  if (it == members_.end()) throw Error(Errc::UnknownNode, "node " + std::to_string(id) + " is not a member");
  members_.erase(it);
  for (auto t = transfers_.begin(); t != transfers_.end();) {
    if (t->second.robot == id || t->second.station == id) {
      log({now_, BusEventKind::TransferAborted, t->second.robot, {}, t->first, t->second.station, "member left"});
      finished_transfer_bytes_[t->first] = t->second.wire_bytes;
      t = transfers_.erase(t);
    } else {
      ++t;
    }
  }
  log({now_, BusEventKind::Left, id, {}, 0, 0, {}});
}

void GossipBus::subscribe(std::uint16_t id, std::string_view topic) {
  auto it = members_.find(id);
  if (it == members_.end()) throw Error(Errc::UnknownNode, "node " + std::to_string(id) + " is not a member");
  auto& topics = it->second.topics;
  if (std::find(topics.begin(), topics.end(), topic) == topics.end()) topics.emplace_back(topic);
}

void GossipBus::unsubscribe(std::uint16_t id, std::string_view topic) {
  auto it = members_.find(id);
  if (it == members_.end()) return;
  auto& topics = it->second.topics;
  topics.erase(std::remove(topics.begin(), topics.end(), topic), topics.end());
}

bool GossipBus::is_member(std::uint16_t id) const { return members_.contains(id); }

std::optional<NodeId> GossipBus::member(std::uint16_t id) const {
  auto it = members_.find(id);
  if (it == members_.end()) return std::nullopt;
  return it->second.node;
}

std::vector<NodeId> GossipBus::members() const {
  std::vector<NodeId> out;
  out.reserve(members_.size());
  for (const auto& [_, m] : members_) out.push_back(m.node);
  return out;
}

void GossipBus::transmit(SimTime t, std::uint16_t /*sender*/, NodeRole role, MsgType type, std::size_t size) {
  tx_log_.push_back({t, static_cast<std::uint16_t>(size), type, role});
  ++stats_.packets_sent;
  stats_.wire_bytes += size;
}

SimTime GossipBus::sample_arrival(SimTime sent, std::uint16_t from, std::uint16_t to) {
  const double jitter = config_.latency_jitter_ms > 0.0
                            ? rng_.uniform(-config_.latency_jitter_ms, config_.latency_jitter_ms)
                            : 0.0;
  const double latency_ms = std::max(0.0, config_.latency_mean_ms + jitter);
  SimTime arrival = sent + static_cast<SimTime>(std::llround(latency_ms * 1000.0));
  auto& last = last_arrival_[{from, to}];
  arrival = std::max(arrival, last);
  last = arrival;
  return arrival;
}

void GossipBus::publish(std::uint16_t sender, std::string_view topic, Bytes packet) {
  auto it = members_.find(sender);
  if (it == members_.end()) {
    spdlog::warn("publish from non-member node {} ignored", sender);
    log({now_, BusEventKind::Warning, sender, {}, 0, 0, "publish from non-member ignored"});
    return;
  }
  const PacketHeader header = peek_header(packet);
  const NodeRole role = it->second.node.role;
  if (header.type == MsgType::Command) {
    const auto cmd = std::get<CommandMessage>(decode(packet));
    if (role == NodeRole::Robot) {
      throw Error(Errc::PermissionDenied, "robots may not issue commands");
    }
    if (cmd.kind == CommandKind::MarkerPose && role != NodeRole::Marker) {
      throw Error(Errc::PermissionDenied, "only the marker node may publish MarkerPose");
    }
    log({now_, BusEventKind::Command, sender, cmd, 0, 0, std::string(to_string(cmd.kind))});
  }
  transmit(now_, sender, role, header.type, packet.size());

  for (const auto& [id, m] : members_) {
    if (id == sender) continue;
    if (std::find(m.topics.begin(), m.topics.end(), topic) == m.topics.end()) continue;
    if (config_.loss_prob > 0.0 && rng_.bernoulli(config_.loss_prob)) {
      ++stats_.dropped_loss;
      continue;
    }
    const SimTime arrival = sample_arrival(now_, sender, id);
    pending_.push({arrival, order_++, sender, id, m.epoch, 0, false, packet});
  }
}

void GossipBus::enqueue_external(std::uint16_t sender, Bytes packet) {
  std::lock_guard lock(external_mutex_);
  external_.emplace_back(sender, std::move(packet));
}

void GossipBus::drain_external() {
  std::vector<std::pair<std::uint16_t, Bytes>> batch;
  {
    std::lock_guard lock(external_mutex_);
    batch.swap(external_);
  }
  for (auto& [sender, bytes] : batch) {
    try {
      publish(sender, std::move(bytes));
    } catch (const Error& e) {
      log({now_, BusEventKind::Warning, sender, {}, 0, 0, std::string("external packet rejected: ") + e.what()});
    }
  }
}

std::uint32_t GossipBus::launch_transfer(std::uint16_t station, std::uint16_t robot, std::size_t blob_size) {
  const auto st = members_.find(station);
  if (st == members_.end() || st->second.node.role != NodeRole::GroundStation) {
    throw Error(Errc::PermissionDenied, "transfers must originate from a ground station member");
  }
  const auto rb = members_.find(robot);
  if (rb == members_.end()) throw Error(Errc::UnknownNode, "transfer target " + std::to_string(robot) + " unknown");

  const std::uint32_t id = next_transfer_++;
  log({now_, BusEventKind::TransferStarted, robot, {}, id, station, std::to_string(blob_size) + " bytes"});
  if (blob_size == 0) {
    finished_transfer_bytes_[id] = 0;
    log({now_, BusEventKind::TransferComplete, robot, {}, id, station, "0 packets"});
    return id;
  }
  const double interval_us = static_cast<double>(kHeaderSize + kMaxPayload) / config_.transfer_rate_Bps * 1e6;
  transfers_.emplace(id, Transfer{id, station, robot, rb->second.epoch, blob_size, 0, 0, 0, now_, interval_us});
  return id;
}

std::uint64_t GossipBus::transfer_bytes(std::uint32_t transfer_id) const {
  if (auto it = transfers_.find(transfer_id); it != transfers_.end()) return it->second.wire_bytes;
  if (auto it = finished_transfer_bytes_.find(transfer_id); it != finished_transfer_bytes_.end()) return it->second;
  throw Error(Errc::InvalidInput, "unknown transfer " + std::to_string(transfer_id));
}

void GossipBus::emit_chunk(Transfer& tr, SimTime t) {
  const std::size_t n = std::min(kMaxPayload, tr.total - tr.sent);
  TransferChunk chunk{tr.station, Bytes(n)};
  for (std::size_t i = 0; i < n; ++i) chunk.data[i] = static_cast<std::uint8_t>((tr.sent + i) * 131u);
  Bytes packet = encode(chunk);
  transmit(t, tr.station, NodeRole::GroundStation, MsgType::TransferChunk, packet.size());
  tr.sent += n;
  ++tr.chunks_sent;
  tr.wire_bytes += packet.size();
  const bool last = tr.sent == tr.total;
  const SimTime arrival = sample_arrival(t, tr.station, tr.robot);
  pending_.push({arrival, order_++, tr.station, tr.robot, tr.epoch, tr.id, last, std::move(packet)});
}

void GossipBus::deliver(Pending&& p) {
  auto it = members_.find(p.to);
  if (it == members_.end() || it->second.epoch != p.epoch) {
    ++stats_.dropped_departed;
    return;
  }
  ++stats_.deliveries;
  if (p.last_chunk) {
    const auto tr = transfers_.find(p.transfer_id);
    if (tr != transfers_.end()) {
      finished_transfer_bytes_[p.transfer_id] = tr->second.wire_bytes;
      log({p.t_us, BusEventKind::TransferComplete, p.to, {}, p.transfer_id, p.from,
           std::to_string(tr->second.chunks_sent) + " packets"});
      transfers_.erase(tr);
    }
  }
  it->second.inbox.push_back({p.t_us, p.from, p.to, std::move(p.bytes)});
}

void GossipBus::advance_to(SimTime t) {
  if (t < now_) throw Error(Errc::InvalidInput, "bus time cannot move backwards");
  drain_external();
  while (true) {
    // Earliest pending transfer chunk.
    Transfer* next_tr = nullptr;
    SimTime next_tr_t = std::numeric_limits<SimTime>::max();
    for (auto& [_, tr] : transfers_) {
      if (tr.sent >= tr.total) continue;
      const SimTime ts =
          tr.start_us + static_cast<SimTime>(std::llround(static_cast<double>(tr.chunks_sent) * tr.interval_us));
      if (ts < next_tr_t) {
        next_tr_t = ts;
        next_tr = &tr;
      }
    }
    const SimTime next_dl = pending_.empty() ? std::numeric_limits<SimTime>::max() : pending_.top().t_us;
    const SimTime next = std::min(next_tr_t, next_dl);
    if (next > t) break;
    now_ = std::max(now_, next);
    if (next_tr != nullptr && next_tr_t <= next_dl) {
      emit_chunk(*next_tr, next_tr_t);
    } else {
      Pending p = pending_.top();
      pending_.pop();
      deliver(std::move(p));
    }
  }
  now_ = t;
}

std::vector<Delivery> GossipBus::drain(std::uint16_t id) {
  auto it = members_.find(id);
  if (it == members_.end()) return {};
  std::vector<Delivery> out;
  out.swap(it->second.inbox);
  return out;
}

std::vector<BusEvent> GossipBus::take_events() {
  std::vector<BusEvent> out(events_.begin() + static_cast<std::ptrdiff_t>(events_taken_), events_.end());
  events_taken_ = events_.size();
  return out;
}

std::vector<BandwidthSample> GossipBus::record_bandwidth(double window_s) const {
  if (!(window_s > 0.0)) throw Error(Errc::InvalidInput, "record_bandwidth: window must be > 0");
  const SimTime w = std::max<SimTime>(1, seconds_to_us(window_s));
  const auto count = static_cast<std::size_t>((now_ + w - 1) / w);
  std::vector<BandwidthSample> samples(count);
  for (std::size_t k = 0; k < count; ++k) samples[k].t = us_to_seconds(static_cast<SimTime>(k) * w);

  auto bin = [&](SimTime t) -> BandwidthSample* {
    const auto k = static_cast<std::size_t>(t / w);
    return k < samples.size() ? &samples[k] : nullptr;
  };
  for (const auto& tx : tx_log_) {
    BandwidthSample* s = bin(tx.t_us);
    if (s == nullptr) continue;
    s->bytes_per_s += tx.bytes;
    (tx.type == MsgType::TransferChunk ? s->transfer_Bps : s->gossip_Bps) += tx.bytes;
    s->by_role[static_cast<std::size_t>(tx.role)] += tx.bytes;
  }
  for (const auto& ev : events_) {
    if (ev.kind != BusEventKind::Command || !ev.command || ev.command->kind == CommandKind::MarkerPose) continue;
    if (BandwidthSample* s = bin(ev.t_us)) s->events.push_back(ev.command->kind);
  }
  for (auto& s : samples) {
    s.bytes_per_s /= window_s;
    s.gossip_Bps /= window_s;
    s.transfer_Bps /= window_s;
    for (auto& r : s.by_role) r /= window_s;
  }
  return samples;
}

std::string bandwidth_csv(const std::vector<BandwidthSample>& samples) {
  std::string out = "t_s,total_Bps,gossip_Bps,transfer_Bps,event\n";
  char line[160];
  for (const auto& s : samples) {
    std::string ev;
    for (auto k : s.events) {
      if (!ev.empty()) ev += '|';
      ev += to_string(k);
    }
    std::snprintf(line, sizeof line, "%.3f,%.3f,%.3f,%.3f,", s.t, s.bytes_per_s, s.gossip_Bps, s.transfer_Bps);
    out += line;
    out += ev;
    out += '\n';
  }
  return out;
}

}  // namespace swarmstage
