#pragma once

// Framing and binary encoding of protocol messages.
//
// Frame:   u32 payload length (big-endian) ‖ payload
// Payload: kind u8 ‖ message_id u64 ‖ sender u64 ‖ destination u64 ‖ body
// Request body: subject u8 ‖ client_process u64 ‖ args ‖ targets
//               [‖ compensation, CALL/SCALL/QCALL only]
// Reply body:   status u8 ‖ results
//
// Lists carry a u16 count. Values carry a one-byte type tag; Text is a u32
// length followed by UTF-8 bytes; a Ref is three u64s (node, process, object).
// The compensation field is a flag byte, and when set: method Text ‖
// captured args ‖ target Ref. All integers are big-endian.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "dscoop/core_types.hpp"

namespace dscoop {

using Bytes = std::vector<std::uint8_t>;
using MessageId = std::uint64_t;

enum class Subject : std::uint8_t {
  Hello = 1,
  Ping = 2,
  Index = 3,
  Prelock = 4,
  Lock = 5,
  Call = 6,
  SCall = 7,
  QCall = 8,
  Unlock = 9,
  Await = 10,
  Ready = 11,
  Share = 12,
  Release = 13,
};

enum class MessageKind : std::uint8_t { Request = 0, Reply = 1 };
enum class ReplyStatus : std::uint8_t { Ok = 0, Fail = 1 };

inline constexpr std::uint64_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxPayload = 16u << 20;

std::string_view subject_name(Subject s) noexcept;
bool is_call_subject(Subject s) noexcept;

struct RequestMessage {
  Subject subject = Subject::Ping;
  ProcessId client_process;
  Values args;
  std::vector<ObjectRef> targets;
  std::optional<CapturedCall> compensation;

  friend bool operator==(const RequestMessage&, const RequestMessage&) = default;
};

struct ReplyMessage {
  ReplyStatus status = ReplyStatus::Ok;
  Values results;

  static ReplyMessage ok(Values results = {}) { return {ReplyStatus::Ok, std::move(results)}; }
  static ReplyMessage fail(std::string reason) {
    return {ReplyStatus::Fail, {Value::text(std::move(reason))}};
  }
  bool is_ok() const noexcept { return status == ReplyStatus::Ok; }
  /// The FAIL reason, or empty.
  std::string reason() const;

  friend bool operator==(const ReplyMessage&, const ReplyMessage&) = default;
};

struct Envelope {
  MessageId message_id = 0;
  NodeId sender;
  NodeId destination;
  std::variant<RequestMessage, ReplyMessage> body;

  MessageKind kind() const noexcept {
    return body.index() == 0 ? MessageKind::Request : MessageKind::Reply;
  }
  const RequestMessage& request() const { return std::get<RequestMessage>(body); }
  const ReplyMessage& reply() const { return std::get<ReplyMessage>(body); }
  RequestMessage& request() { return std::get<RequestMessage>(body); }
  ReplyMessage& reply() { return std::get<ReplyMessage>(body); }

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

/// Throws Error(ArityViolation) if the message breaks its subject's shape.
void check_arity(const RequestMessage& msg);
void check_arity(const ReplyMessage& msg);

/// Encodes one complete frame, including the length prefix.
Bytes encode(const Envelope& env);

/// Decodes exactly one complete frame (length prefix included).
Envelope decode(std::span<const std::uint8_t> frame);

/// Reads the fixed header of a frame without decoding the body. Used for
/// tracing and for relaying frames verbatim.
struct FrameHeader {
  MessageKind kind;
  MessageId message_id;
  NodeId sender;
  NodeId destination;
  std::uint8_t subject_or_status;
};
FrameHeader peek_header(std::span<const std::uint8_t> frame);

/// Accumulates stream bytes and splits them into whole frames.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Returns the next whole frame, or nullopt if more bytes are needed.
  std::optional<Bytes> next_frame();
  std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  Bytes buffer_;
  std::size_t offset_ = 0;
};

/// Blocking frame I/O on a stream file descriptor.
/// read_frame returns nullopt on a clean EOF at a frame boundary and throws
/// Error(PeerFailure) when the stream ends inside a frame.
std::optional<Bytes> read_frame(int fd);
void write_frame(int fd, std::span<const std::uint8_t> frame);

/// Per-sender message id source. Starts at 1; never reuses a value.
class MessageIdCounter {
 public:
  MessageId next() noexcept { return next_.fetch_add(1, std::memory_order_relaxed); }

 private:
  std::atomic<MessageId> next_{1};
};

}  // namespace dscoop
