#include "swarmstage/error.hpp"

namespace swarmstage {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidInput: return "invalid-input";
    case Errc::WrongClass: return "wrong-class";
    case Errc::EncodeOversize: return "encode-oversize";
    case Errc::ShortBuffer: return "short-buffer";
    case Errc::BadVersion: return "bad-version";
    case Errc::BadMsgType: return "bad-msg-type";
    case Errc::LengthMismatch: return "length-mismatch";
    case Errc::MalformedPayload: return "malformed-payload";
    case Errc::IdConflict: return "id-conflict";
    case Errc::UnknownNode: return "unknown-node";
    case Errc::PermissionDenied: return "permission-denied";
    case Errc::UnknownAnchor: return "unknown-anchor";
    case Errc::NoFix: return "no-fix";
    case Errc::CalibrationFailed: return "calibration-failed";
    case Errc::ContractViolation: return "contract-violation";
    case Errc::NonOverlapping: return "non-overlapping";
    case Errc::MissingChannel: return "missing-channel";
    case Errc::ConfigInvalid: return "config-invalid";
    case Errc::Io: return "io";
  }
  return "unknown";
}

}  // namespace swarmstage
