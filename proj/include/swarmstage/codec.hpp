#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "swarmstage/behavior.hpp"
#include "swarmstage/kinematics.hpp"

namespace swarmstage {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 5;
inline constexpr std::size_t kMaxPayload = 250;

enum class MsgType : std::uint8_t { Gossip = 1, Command = 2, TransferChunk = 3 };

enum class NodeRole : std::uint8_t { Robot, Marker, GroundStation };
std::string_view to_string(NodeRole role) noexcept;

struct NodeId {
  std::uint16_t id = 0;
  NodeRole role = NodeRole::Robot;
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// Periodic robot state broadcast. Fields are stored in their fixed-point wire
/// units so a decoded message compares equal to the one that was encoded.
struct GossipMessage {
  std::uint16_t sender = 0;
  std::uint32_t seq = 0;
  std::uint32_t t_ms = 0;
  std::int16_t x_mm = 0;
  std::int16_t y_mm = 0;
  std::int16_t z_mm = 0;
  std::int16_t vx_mm_s = 0;
  std::int16_t vy_mm_s = 0;
  std::int16_t yaw_mrad = 0;
  std::uint8_t program_id = 0;
  std::uint8_t phase = 0;

  /// Quantizes a pose and velocity; throws Errc::EncodeOversize when a value
  /// does not fit its fixed-point field.
  static GossipMessage from_state(std::uint16_t sender, std::uint32_t seq, std::uint32_t t_ms, const Pose& pose,
                                  Vec2 velocity, std::uint8_t program_id, std::uint8_t phase);
  Pose pose() const noexcept;
  Vec2 velocity() const noexcept;

  friend bool operator==(const GossipMessage&, const GossipMessage&) = default;
};

enum class CommandKind : std::uint8_t { Launch = 1, Switch = 2, Stop = 3, MarkerPose = 4 };
std::string_view to_string(CommandKind kind) noexcept;

inline constexpr std::uint8_t kAllGroups = 0xFF;

struct CommandMessage {
  CommandKind kind = CommandKind::Stop;
  std::uint16_t issuer = 0;
  std::uint32_t seq = 0;
  std::uint8_t group = kAllGroups;  // Launch only
  std::uint8_t program_id = 0;      // Switch only
  std::int16_t x_mm = 0;            // MarkerPose only
  std::int16_t y_mm = 0;
  MarkerMode marker_mode = MarkerMode::Attractor;

  friend bool operator==(const CommandMessage&, const CommandMessage&) = default;
};

/// One slice of a bulk software/config transfer; the payload is opaque.
struct TransferChunk {
  std::uint16_t sender = 0;
  Bytes data;
  friend bool operator==(const TransferChunk&, const TransferChunk&) = default;
};

using Message = std::variant<GossipMessage, CommandMessage, TransferChunk>;

/// Payload sizes of the fixed layouts.
inline constexpr std::size_t kGossipPayloadSize = 22;
std::size_t command_payload_size(CommandKind kind) noexcept;

Bytes encode(const GossipMessage& msg);
Bytes encode(const CommandMessage& msg);
Bytes encode(const TransferChunk& msg);
Bytes encode(const Message& msg);

/// Strict parse of exactly one packet. Throws Error with ShortBuffer,
/// BadVersion, BadMsgType, LengthMismatch or MalformedPayload.
Message decode(std::span<const std::uint8_t> bytes);

/// Header fields of a packet without decoding the payload.
struct PacketHeader {
  std::uint8_t version = kWireVersion;
  MsgType type = MsgType::Gossip;
  std::uint8_t payload_len = 0;
  std::uint16_t sender = 0;
};
PacketHeader peek_header(std::span<const std::uint8_t> bytes);

std::int16_t to_fixed_i16(double value, double scale, const char* field);

}  // namespace swarmstage
