#include "dscoop/errors.hpp"

#include <array>
#include <utility>

namespace dscoop {

namespace {

constexpr std::array kNames = {
    std::pair{Errc::ArityViolation, "ArityViolation"},
    std::pair{Errc::Truncated, "Truncated"},
    std::pair{Errc::UnknownSubject, "UnknownSubject"},
    std::pair{Errc::UnknownKind, "UnknownKind"},
    std::pair{Errc::UnknownStatus, "UnknownStatus"},
    std::pair{Errc::MalformedValueTag, "MalformedValueTag"},
    std::pair{Errc::MalformedFrame, "MalformedFrame"},
    std::pair{Errc::PeerFailure, "PeerFailure"},
    std::pair{Errc::TransportError, "TransportError"},
    std::pair{Errc::NoRoute, "NoRoute"},
    std::pair{Errc::VersionMismatch, "VersionMismatch"},
    std::pair{Errc::NoIndex, "NoIndex"},
    std::pair{Errc::SubqueueClosed, "SubqueueClosed"},
    std::pair{Errc::NoSuchObject, "NoSuchObject"},
    std::pair{Errc::NoSuchMethod, "NoSuchMethod"},
    std::pair{Errc::NoSuchProcess, "NoSuchProcess"},
    std::pair{Errc::BlockClosed, "BlockClosed"},
    std::pair{Errc::TargetNotInBlock, "TargetNotInBlock"},
    std::pair{Errc::BlockOpenFailure, "BlockOpenFailure"},
    std::pair{Errc::PrelockTimeout, "PrelockTimeout"},
    std::pair{Errc::ProtocolViolation, "ProtocolViolation"},
    std::pair{Errc::NoActiveLock, "NoActiveLock"},
    std::pair{Errc::UnderflowRelease, "UnderflowRelease"},
    std::pair{Errc::RemoteFailure, "RemoteFailure"},
};

}  // namespace

std::string_view errc_name(Errc code) noexcept {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Unknown";
}

Errc errc_from_name(std::string_view name) noexcept {
  name = name.substr(0, name.find(':'));
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return Errc::RemoteFailure;
}

std::string fail_reason(Errc code, std::string_view what) {
  std::string out(errc_name(code));
  if (!what.empty() && what != out) {
    if (what.starts_with(out + ":")) return std::string(what);
    out += ": ";
    out += what;
  }
  return out;
}

}  // namespace dscoop
