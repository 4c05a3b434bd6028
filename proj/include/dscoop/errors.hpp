#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dscoop {

enum class Errc {
  // wire
  ArityViolation,
  Truncated,
  UnknownSubject,
  UnknownKind,
  UnknownStatus,
  MalformedValueTag,
  MalformedFrame,
  // transport and liveness
  PeerFailure,
  TransportError,
  NoRoute,
  VersionMismatch,
  NoIndex,
  // scheduling
  SubqueueClosed,
  NoSuchObject,
  NoSuchMethod,
  NoSuchProcess,
  // blocks
  BlockClosed,
  TargetNotInBlock,
  BlockOpenFailure,
  PrelockTimeout,
  ProtocolViolation,
  NoActiveLock,
  // gc
  UnderflowRelease,
  // a FAIL reply whose reason does not map to a code above
  RemoteFailure,
};

std::string_view errc_name(Errc code) noexcept;

/// Parses a FAIL reason of the form "Name" or "Name: detail"; unknown names
/// map to RemoteFailure.
Errc errc_from_name(std::string_view name) noexcept;

/// FAIL reason text for an error: the code name, plus the message if it adds anything.
std::string fail_reason(Errc code, std::string_view what);

class Error : public std::runtime_error {
 public:
  explicit Error(Errc code) : Error(code, std::string(errc_name(code))) {}
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace dscoop
