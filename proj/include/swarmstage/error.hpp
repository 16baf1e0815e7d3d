#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace swarmstage {

enum class Errc {
  InvalidInput,
  WrongClass,
  EncodeOversize,
  ShortBuffer,
  BadVersion,
  BadMsgType,
  LengthMismatch,
  MalformedPayload,
  IdConflict,
  UnknownNode,
  PermissionDenied,
  UnknownAnchor,
  NoFix,
  CalibrationFailed,
  ContractViolation,
  NonOverlapping,
  MissingChannel,
  ConfigInvalid,
  Io,
};

std::string_view to_string(Errc code) noexcept;

/// Base exception for every recoverable failure in the library. The code lets
/// callers branch on the failure kind without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace swarmstage
