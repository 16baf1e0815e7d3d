#include "swarmstage/codec.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "swarmstage/error.hpp"

namespace swarmstage {

namespace {

constexpr std::size_t kCommandBase = 7;  // issuer:2 seq:4 kind:1

class Writer {
 public:
  explicit Writer(MsgType type, std::uint16_t sender) {
    buf_.reserve(kHeaderSize + kMaxPayload);
    buf_.push_back(kWireVersion);
    buf_.push_back(static_cast<std::uint8_t>(type));
    buf_.push_back(0);  // payload_len, patched in finish()
    u16(sender);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  Bytes finish() && {
    const std::size_t payload = buf_.size() - kHeaderSize;
    if (payload > kMaxPayload) {
      throw Error(Errc::EncodeOversize, "payload of " + std::to_string(payload) + " bytes exceeds " +
                                            std::to_string(kMaxPayload));
    }
    buf_[2] = static_cast<std::uint8_t>(payload);
    return std::move(buf_);
  }

 private:
  Bytes buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> payload) : p_(payload) {}
  std::uint8_t u8() { return p_[pos_++]; }
  std::uint16_t u16() {
    const auto v = static_cast<std::uint16_t>(p_[pos_] | (p_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

 private:
  std::span<const std::uint8_t> p_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(NodeRole role) noexcept {
  switch (role) {
    case NodeRole::Robot: return "robot";
    case NodeRole::Marker: return "marker";
    case NodeRole::GroundStation: return "ground_station";
  }
  return "?";
}

std::string_view to_string(CommandKind kind) noexcept {
  switch (kind) {
    case CommandKind::Launch: return "launch";
    case CommandKind::Switch: return "switch";
    case CommandKind::Stop: return "stop";
    case CommandKind::MarkerPose: return "marker";
  }
  return "?";
}

std::int16_t to_fixed_i16(double value, double scale, const char* field) {
  const double scaled = std::round(value * scale);
  if (!std::isfinite(scaled) || scaled < std::numeric_limits<std::int16_t>::min() ||
      scaled > std::numeric_limits<std::int16_t>::max()) {
    throw Error(Errc::EncodeOversize, std::string(field) + ": value out of fixed-point range");
  }
  return static_cast<std::int16_t>(scaled);
}

GossipMessage GossipMessage::from_state(std::uint16_t sender, std::uint32_t seq, std::uint32_t t_ms,
                                        const Pose& pose, Vec2 velocity, std::uint8_t program_id,
                                        std::uint8_t phase) {
  GossipMessage m;
  m.sender = sender;
  m.seq = seq;
  m.t_ms = t_ms;
  m.x_mm = to_fixed_i16(pose.x, 1000.0, "x");
  m.y_mm = to_fixed_i16(pose.y, 1000.0, "y");
  m.z_mm = to_fixed_i16(pose.z, 1000.0, "z");
  m.vx_mm_s = to_fixed_i16(velocity.x, 1000.0, "vx");
  m.vy_mm_s = to_fixed_i16(velocity.y, 1000.0, "vy");
  m.yaw_mrad = to_fixed_i16(pose.yaw, 1000.0, "yaw");
  m.program_id = program_id;
  m.phase = phase;
  return m;
}

Pose GossipMessage::pose() const noexcept {
  return {x_mm * 1e-3, y_mm * 1e-3, z_mm * 1e-3, yaw_mrad * 1e-3};
}

Vec2 GossipMessage::velocity() const noexcept { return {vx_mm_s * 1e-3, vy_mm_s * 1e-3}; }

std::size_t command_payload_size(CommandKind kind) noexcept {
  switch (kind) {
    case CommandKind::Launch: return kCommandBase + 1;
    case CommandKind::Switch: return kCommandBase + 1;
    case CommandKind::Stop: return kCommandBase;
    case CommandKind::MarkerPose: return kCommandBase + 5;
  }
  return 0;
}

Bytes encode(const GossipMessage& m) {
  Writer w(MsgType::Gossip, m.sender);
  w.u32(m.seq);
  w.u32(m.t_ms);
  w.i16(m.x_mm);
  w.i16(m.y_mm);
  w.i16(m.z_mm);
  w.i16(m.vx_mm_s);
  w.i16(m.vy_mm_s);
  w.i16(m.yaw_mrad);
  w.u8(m.program_id);
  w.u8(m.phase);
  return std::move(w).finish();
}

Bytes encode(const CommandMessage& m) {
  Writer w(MsgType::Command, m.issuer);
  w.u16(m.issuer);
  w.u32(m.seq);
  w.u8(static_cast<std::uint8_t>(m.kind));
  switch (m.kind) {
    case CommandKind::Launch:
      w.u8(m.group);
      break;
    case CommandKind::Switch:
      w.u8(m.program_id);
      break;
    case CommandKind::Stop:
      break;
    case CommandKind::MarkerPose:
      w.i16(m.x_mm);
      w.i16(m.y_mm);
      w.u8(static_cast<std::uint8_t>(m.marker_mode));
      break;
    default:
      throw Error(Errc::InvalidInput, "encode: unknown command kind");
  }
  return std::move(w).finish();
}

Bytes encode(const TransferChunk& m) {
  if (m.data.size() > kMaxPayload) {
    throw Error(Errc::EncodeOversize, "transfer chunk of " + std::to_string(m.data.size()) + " bytes exceeds " +
                                          std::to_string(kMaxPayload));
  }
  Writer w(MsgType::TransferChunk, m.sender);
  w.bytes(m.data);
  return std::move(w).finish();
}

Bytes encode(const Message& msg) {
  return std::visit([](const auto& m) { return encode(m); }, msg);
}

PacketHeader peek_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw Error(Errc::ShortBuffer, "packet shorter than the " + std::to_string(kHeaderSize) + "-byte header");
  }
  PacketHeader h;
  h.version = bytes[0];
  if (h.version != kWireVersion) {
    throw Error(Errc::BadVersion, "unsupported wire version " + std::to_string(h.version));
  }
  const std::uint8_t type = bytes[1];
  if (type < 1 || type > 3) throw Error(Errc::BadMsgType, "unknown msg_type " + std::to_string(type));
  h.type = static_cast<MsgType>(type);
  h.payload_len = bytes[2];
  h.sender = static_cast<std::uint16_t>(bytes[3] | (bytes[4] << 8));
  if (h.payload_len > kMaxPayload) {
    throw Error(Errc::LengthMismatch, "payload_len " + std::to_string(h.payload_len) + " exceeds limit");
  }
  if (bytes.size() < kHeaderSize + h.payload_len) {
    throw Error(Errc::ShortBuffer, "buffer ends before the declared payload");
  }
  if (bytes.size() > kHeaderSize + h.payload_len) {
    throw Error(Errc::LengthMismatch, "trailing bytes after the declared payload");
  }
  return h;
}

Message decode(std::span<const std::uint8_t> bytes) {
  const PacketHeader h = peek_header(bytes);
  const auto payload = bytes.subspan(kHeaderSize, h.payload_len);
  Reader r(payload);

  switch (h.type) {
    case MsgType::Gossip: {
      if (payload.size() != kGossipPayloadSize) {
        throw Error(Errc::LengthMismatch, "gossip payload must be " + std::to_string(kGossipPayloadSize) + " bytes");
      }
      GossipMessage m;
      m.sender = h.sender;
      m.seq = r.u32();
      m.t_ms = r.u32();
      m.x_mm = r.i16();
      m.y_mm = r.i16();
      m.z_mm = r.i16();
      m.vx_mm_s = r.i16();
      m.vy_mm_s = r.i16();
      m.yaw_mrad = r.i16();
      m.program_id = r.u8();
      m.phase = r.u8();
      return m;
    }
    case MsgType::Command: {
      if (payload.size() < kCommandBase) throw Error(Errc::LengthMismatch, "command payload too short");
      CommandMessage m;
      m.issuer = r.u16();
      m.seq = r.u32();
      const std::uint8_t kind = r.u8();
      if (kind < 1 || kind > 4) throw Error(Errc::MalformedPayload, "unknown command kind " + std::to_string(kind));
      m.kind = static_cast<CommandKind>(kind);
      if (payload.size() != command_payload_size(m.kind)) {
        throw Error(Errc::LengthMismatch, std::string(to_string(m.kind)) + " command has wrong payload size");
      }
      if (m.issuer != h.sender) throw Error(Errc::MalformedPayload, "command issuer differs from packet sender");
      switch (m.kind) {
        case CommandKind::Launch: m.group = r.u8(); break;
        case CommandKind::Switch: m.program_id = r.u8(); break;
        case CommandKind::Stop: break;
        case CommandKind::MarkerPose: {
          m.x_mm = r.i16();
          m.y_mm = r.i16();
          const std::uint8_t mode = r.u8();
          if (mode > 1) throw Error(Errc::MalformedPayload, "unknown marker mode " + std::to_string(mode));
          m.marker_mode = static_cast<MarkerMode>(mode);
          break;
        }
      }
      return m;
    }
    case MsgType::TransferChunk:
      return TransferChunk{h.sender, Bytes(payload.begin(), payload.end())};
  }
  throw Error(Errc::BadMsgType, "unknown msg_type");
}

}  // namespace swarmstage
