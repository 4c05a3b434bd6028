#include "dscoop/wire.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <limits>

#include "dscoop/errors.hpp"

namespace dscoop {

std::string_view subject_name(Subject s) noexcept {
  switch (s) {
    case Subject::Hello: return "HELLO";
    case Subject::Ping: return "PING";
    case Subject::Index: return "INDEX";
    case Subject::Prelock: return "PRELOCK";
    case Subject::Lock: return "LOCK";
    case Subject::Call: return "CALL";
    case Subject::SCall: return "SCALL";
    case Subject::QCall: return "QCALL";
    case Subject::Unlock: return "UNLOCK";
    case Subject::Await: return "AWAIT";
    case Subject::Ready: return "READY";
    case Subject::Share: return "SHARE";
    case Subject::Release: return "RELEASE";
  }
  return "?";
}

bool is_call_subject(Subject s) noexcept {
  return s == Subject::Call || s == Subject::SCall || s == Subject::QCall;
}

std::string ReplyMessage::reason() const {
  if (status == ReplyStatus::Fail && !results.empty() && results[0].type() == Value::Type::Text) {
    return results[0].as_text();
  }
  return {};
}

namespace {

[[noreturn]] void arity(const char* what) { throw Error(Errc::ArityViolation, what); }

bool is_nat(const Value& v) { return v.type() == Value::Type::Nat; }

void check_process_targets(const RequestMessage& m) {
  if (!m.args.empty()) arity("lock-family requests carry no args");
  if (m.targets.empty()) arity("lock-family requests need at least one process");
  for (const auto& t : m.targets) {
    if (t.object != 0) arity("lock-family targets must name processes (object 0)");
  }
}

}  // namespace

void check_arity(const RequestMessage& m) {
  if (m.compensation && !is_call_subject(m.subject)) arity("compensation only rides on call requests");
  switch (m.subject) {
    case Subject::Hello:
      if (m.args.size() != 1 || !is_nat(m.args[0]) || !m.targets.empty()) arity("HELLO takes one Nat");
      return;
    case Subject::Ping:
    case Subject::Index:
    case Subject::Ready:
      if (!m.args.empty() || !m.targets.empty()) arity("request takes no fields");
      return;
    case Subject::Prelock:
    case Subject::Lock:
    case Subject::Unlock:
    case Subject::Await:
      check_process_targets(m);
      return;
    case Subject::Call:
    case Subject::SCall:
    case Subject::QCall:
      if (m.targets.size() != 1) arity("call requests take exactly one target");
      if (m.args.empty() || m.args[0].type() != Value::Type::Text) arity("call requests start with a method name");
      return;
    case Subject::Share:
    case Subject::Release:
      if (m.targets.size() != 1 || m.args.size() != 1 || !is_nat(m.args[0])) {
        arity("SHARE/RELEASE take one ref and one Nat count");
      }
      return;
  }
  throw Error(Errc::UnknownSubject);
}

void check_arity(const ReplyMessage& m) {
  if (m.status == ReplyStatus::Fail) {
    if (m.results.size() > 1) arity("FAIL carries at most one reason");
    if (m.results.size() == 1 && m.results[0].type() != Value::Type::Text) arity("FAIL reason must be Text");
  }
}

namespace {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { be(v, 2); }
  void u32(std::uint32_t v) { be(v, 4); }
  void u64(std::uint64_t v) { be(v, 8); }

  void count(std::size_t n) {
    if (n > std::numeric_limits<std::uint16_t>::max()) arity("list longer than 65535 entries");
    u16(static_cast<std::uint16_t>(n));
  }

  void text(const std::string& s) {
    if (s.size() > kMaxPayload) arity("text too long");
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }

  void ref(const ObjectRef& r) {
    u64(r.node.value);
    u64(r.process.value);
    u64(r.object);
  }

  void value(const Value& v) {
    u8(static_cast<std::uint8_t>(v.type()));
    switch (v.type()) {
      case Value::Type::Unit: break;
      case Value::Type::Bool: u8(v.as_bool() ? 1 : 0); break;
      case Value::Type::Int: u64(static_cast<std::uint64_t>(v.as_int())); break;
      case Value::Type::Nat: u64(v.as_nat()); break;
      case Value::Type::Text: text(v.as_text()); break;
      case Value::Type::Ref: ref(v.as_ref()); break;
    }
  }

  void values(const Values& vs) {
    count(vs.size());
    for (const auto& v : vs) value(v);
  }

 private:
  void be(std::uint64_t v, int width) {
    for (int i = width - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  Bytes& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(be(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(be(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(be(4)); }
  std::uint64_t u64() { return be(8); }

  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  ObjectRef ref() {
    ObjectRef r;
    r.node.value = u64();
    r.process.value = u64();
    r.object = u64();
    return r;
  }

  Value value() {
    const std::uint8_t tag = u8();
    switch (tag) {
      case 0: return Value::unit();
      case 1: {
        const std::uint8_t b = u8();
        if (b > 1) throw Error(Errc::MalformedValueTag, "bool byte out of range");
        return Value::boolean(b == 1);
      }
      case 2: return Value::integer(static_cast<std::int64_t>(u64()));
      case 3: return Value::nat(u64());
      case 4: return Value::text(text());
      case 5: return Value::ref(ref());
      default: throw Error(Errc::MalformedValueTag, "unknown value tag " + std::to_string(tag));
    }
  }

  Values values() {
    const std::uint16_t n = u16();
    Values vs;
    vs.reserve(n);
    for (std::uint16_t i = 0; i < n; ++i) vs.push_back(value());
    return vs;
  }

  bool done() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(Errc::Truncated, "payload ends early");
  }

  std::uint64_t be(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t frame_length(std::span<const std::uint8_t> frame) {
  if (frame.size() < 4) throw Error(Errc::Truncated, "frame shorter than its length prefix");
  const std::uint32_t len = (std::uint32_t{frame[0]} << 24) | (std::uint32_t{frame[1]} << 16) |
                            (std::uint32_t{frame[2]} << 8) | std::uint32_t{frame[3]};
  if (len > kMaxPayload) throw Error(Errc::MalformedFrame, "declared payload too large");
  return len;
}

std::span<const std::uint8_t> payload_of(std::span<const std::uint8_t> frame) {
  const std::uint32_t len = frame_length(frame);
  if (frame.size() - 4 < len) throw Error(Errc::Truncated, "declared length exceeds frame");
  if (frame.size() - 4 > len) throw Error(Errc::MalformedFrame, "bytes after payload");
  return frame.subspan(4, len);
}

}  // namespace

Bytes encode(const Envelope& env) {
  Bytes out(4, 0);
  Writer w(out);
  w.u8(static_cast<std::uint8_t>(env.kind()));
  w.u64(env.message_id);
  w.u64(env.sender.value);
  w.u64(env.destination.value);
  if (env.kind() == MessageKind::Request) {
    const auto& m = env.request();
    check_arity(m);
    w.u8(static_cast<std::uint8_t>(m.subject));
    w.u64(m.client_process.value);
    w.values(m.args);
    w.count(m.targets.size());
    for (const auto& t : m.targets) w.ref(t);
    if (is_call_subject(m.subject)) {
      w.u8(m.compensation ? 1 : 0);
      if (m.compensation) {
        w.text(m.compensation->method);
        w.values(m.compensation->args);
        w.ref(m.compensation->target);
      }
    }
  } else {
    const auto& m = env.reply();
    check_arity(m);
    w.u8(static_cast<std::uint8_t>(m.status));
    w.values(m.results);
  }
  const std::size_t len = out.size() - 4;
  if (len > kMaxPayload) throw Error(Errc::MalformedFrame, "payload too large");
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len >> (8 * (3 - i)));
  return out;
}

Envelope decode(std::span<const std::uint8_t> frame) {
  Reader r(payload_of(frame));
  Envelope env;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw Error(Errc::UnknownKind, "unknown message kind " + std::to_string(kind));
  env.message_id = r.u64();
  env.sender.value = r.u64();
  env.destination.value = r.u64();
  if (kind == 0) {
    RequestMessage m;
    const std::uint8_t code = r.u8();
    if (code < 1 || code > 13) throw Error(Errc::UnknownSubject, "unknown subject " + std::to_string(code));
    m.subject = static_cast<Subject>(code);
    m.client_process.value = r.u64();
    m.args = r.values();
    const std::uint16_t n = r.u16();
    m.targets.reserve(n);
    for (std::uint16_t i = 0; i < n; ++i) m.targets.push_back(r.ref());
    if (is_call_subject(m.subject)) {
      const std::uint8_t flag = r.u8();
      if (flag > 1) throw Error(Errc::MalformedFrame, "bad compensation flag");
      if (flag == 1) {
        CapturedCall c;
        c.method = r.text();
        c.args = r.values();
        c.target = r.ref();
        m.compensation = std::move(c);
      }
    }
    check_arity(m);
    env.body = std::move(m);
  } else {
    ReplyMessage m;
    const std::uint8_t status = r.u8();
    if (status > 1) throw Error(Errc::UnknownStatus, "unknown reply status " + std::to_string(status));
    m.status = static_cast<ReplyStatus>(status);
    m.results = r.values();
    check_arity(m);
    env.body = std::move(m);
  }
  if (!r.done()) throw Error(Errc::MalformedFrame, "trailing bytes in payload");
  return env;
}

FrameHeader peek_header(std::span<const std::uint8_t> frame) {
  Reader r(payload_of(frame));
  FrameHeader h{};
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw Error(Errc::UnknownKind);
  h.kind = static_cast<MessageKind>(kind);
  h.message_id = r.u64();
  h.sender.value = r.u64();
  h.destination.value = r.u64();
  h.subject_or_status = r.u8();
  return h;
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Bytes> FrameReader::next_frame() {
  const std::size_t avail = buffer_.size() - offset_;
  if (avail < 4) return std::nullopt;
  const auto len = frame_length(std::span(buffer_).subspan(offset_, 4));
  if (avail < 4 + std::size_t{len}) return std::nullopt;
  Bytes frame(buffer_.begin() + static_cast<std::ptrdiff_t>(offset_),
              buffer_.begin() + static_cast<std::ptrdiff_t>(offset_ + 4 + len));
  offset_ += 4 + len;
  if (offset_ > 4096 && offset_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  return frame;
}

namespace {

// Returns bytes read before EOF; throws on I/O errors.
std::size_t read_full(int fd, std::uint8_t* dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, dst + got, n - got);
    if (r == 0) break;
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::PeerFailure, std::string("read: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return got;
}

}  // namespace

std::optional<Bytes> read_frame(int fd) {
  Bytes frame(4);
  const std::size_t got = read_full(fd, frame.data(), 4);
  if (got == 0) return std::nullopt;
  if (got < 4) throw Error(Errc::PeerFailure, "connection closed inside a length prefix");
  const auto len = frame_length(frame);
  frame.resize(4 + std::size_t{len});
  if (read_full(fd, frame.data() + 4, len) < len) {
    throw Error(Errc::PeerFailure, "connection closed inside a frame");
  }
  return frame;
}

void write_frame(int fd, std::span<const std::uint8_t> frame) {
  std::size_t sent = 0;
  while (sent < frame.size()) {
    ssize_t w = ::send(fd, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
    if (w < 0 && errno == ENOTSOCK) w = ::write(fd, frame.data() + sent, frame.size() - sent);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::PeerFailure, std::string("write: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(w);
  }
}

}  // namespace dscoop
