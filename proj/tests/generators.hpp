#pragma once

// Random valid protocol values for property tests.

#include <random>
#include <string>

#include "dscoop/wire.hpp"

namespace dscoop::testgen {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t u64() { return rng_(); }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : rng_() % n; }
  bool coin() { return (rng_() & 1) != 0; }

  std::string text() {
    static constexpr std::string_view pool[] = {"", "balance", "set_balance", "caf\xc3\xa9", "\xe2\x88\x9a", "x y z"};
    std::string s(pool[below(std::size(pool))]);
    const auto extra = below(12);
    for (std::uint64_t i = 0; i < extra; ++i) s.push_back(static_cast<char>('a' + below(26)));
    return s;
  }

  ObjectRef ref() { return ObjectRef{NodeId{u64()}, ProcessId{u64()}, u64()}; }
  ObjectRef process_target() { return process_ref(NodeId{below(50) + 1}, ProcessId{below(50) + 1}); }

  Value value() {
    switch (below(6)) {
      case 0: return Value::unit();
      case 1: return Value::boolean(coin());
      case 2: return Value::integer(static_cast<std::int64_t>(u64()));
      case 3: return Value::nat(u64());
      case 4: return Value::text(text());
      default: return Value::ref(ref());
    }
  }

  Values values(std::uint64_t max) {
    Values v;
    const auto n = below(max + 1);
    for (std::uint64_t i = 0; i < n; ++i) v.push_back(value());
    return v;
  }

  RequestMessage request() {
    RequestMessage m;
    m.subject = static_cast<Subject>(below(13) + 1);
    m.client_process = ProcessId{u64()};
    switch (m.subject) {
      case Subject::Hello:
        m.args = {Value::nat(u64())};
        break;
      case Subject::Ping:
      case Subject::Index:
      case Subject::Ready:
        break;
      case Subject::Prelock:
      case Subject::Lock:
      case Subject::Unlock:
      case Subject::Await: {
        const auto n = below(4) + 1;
        for (std::uint64_t i = 0; i < n; ++i) m.targets.push_back(process_target());
        break;
      }
      case Subject::Call:
      case Subject::SCall:
      case Subject::QCall:
        m.args.push_back(Value::text(text()));
        for (auto& v : values(4)) m.args.push_back(std::move(v));
        m.targets.push_back(ref());
        if (coin()) m.compensation = CapturedCall{ref(), text(), values(3)};
        break;
      case Subject::Share:
      case Subject::Release:
        m.targets.push_back(ref());
        m.args = {Value::nat(below(100) + 1)};
        break;
    }
    return m;
  }

  ReplyMessage reply() {
    if (coin()) return ReplyMessage::ok(values(4));
    return coin() ? ReplyMessage::fail(text()) : ReplyMessage{ReplyStatus::Fail, {}};
  }

  Envelope envelope() {
    Envelope e;
    e.message_id = u64();
    e.sender = NodeId{u64()};
    e.destination = NodeId{u64()};
    if (coin()) {
      e.body = request();
    } else {
      e.body = reply();
    }
    return e;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace dscoop::testgen
