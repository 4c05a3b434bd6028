#include <chrono>
#include <random>

#include "doctest.h"
#include "dscoop/qoq.hpp"
#include "qoq_model.hpp"

using namespace dscoop;
using namespace dscoop::qoqmodel;

namespace {

struct Counter : Object {
  std::uint64_t n = 0;
};

std::shared_ptr<const MethodTable> counter_class() {
  static const auto table = ClassBuilder<Counter>()
                                .command("incr", [](Counter& c, const Values&, CallContext&) { ++c.n; })
                                .query("value", [](Counter& c, const Values&, CallContext&) { return Value::nat(c.n); })
                                .command("boom", [](Counter&, const Values&, CallContext&) {
                                  throw Error(Errc::RemoteFailure, "boom");
                                })
                                .build();
  return table;
}

LoggedCall call_of(std::string method, std::string tag = {}) {
  LoggedCall c;
  c.target = ObjectRef{NodeId{9}, ProcessId{7}, 1};
  c.method = std::move(method);
  if (!tag.empty()) c.args = {Value::text(tag)};
  return c;
}

}  // namespace

TEST_CASE("open empty current subqueue stalls later subqueues") {
  Harness h;
  h.apply(Ev::LockA);
  h.apply(Ev::LockB);
  h.apply(Ev::CallB);
  h.apply(Ev::UnlockB);
  CHECK_FALSE(h.can_step());
  h.apply(Ev::CallA);
  h.apply(Ev::UnlockA);
  CHECK(h.drain() == std::vector<std::string>{"a1", "U1", "b1", "U2"});
}

TEST_CASE("a second lock by the same client reuses its open subqueue") {
  QueueOfQueues q;
  const ClientId c{NodeId{1}, ProcessId{1}};
  bool created = false;
  q.ensure_subqueue(c, &created);
  CHECK(created);
  q.ensure_subqueue(c, &created);
  CHECK_FALSE(created);
  CHECK(q.subqueues().size() == 1);
  q.append_unlock(c, UnlockMarker{});
  CHECK_FALSE(q.has_open(c));
  q.ensure_subqueue(c, &created);
  CHECK(created);
  CHECK(q.subqueues().size() == 2);
}

TEST_CASE("enqueue without an open subqueue is rejected") {
  QueueOfQueues q;
  const ClientId c{NodeId{1}, ProcessId{1}};
  CHECK_THROWS_AS(q.enqueue(c, call_of("incr")), Error);
  try {
    q.enqueue(c, call_of("incr"));
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SubqueueClosed);
  }
}

TEST_CASE("drop_client returns unexecuted calls and unblocks the queue") {
  QueueOfQueues q;
  const ClientId a{NodeId{1}, ProcessId{1}}, b{NodeId{2}, ProcessId{2}};
  q.ensure_subqueue(a);
  q.enqueue(a, call_of("x"));
  q.enqueue(a, call_of("y"));
  q.ensure_subqueue(b);
  q.enqueue(b, call_of("z"));
  auto popped = q.pop_next();
  REQUIRE(popped);
  CHECK(std::get<LoggedCall>(popped->entry).method == "x");
  const auto dropped = q.drop_client(a);
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0].method == "y");
  CHECK(q.current_owner() == b);
  popped = q.pop_next();
  REQUIRE(popped);
  CHECK(std::get<LoggedCall>(popped->entry).method == "z");
}

TEST_CASE("mutating calls bump the version, queries do not") {
  HandlerProcess h{ProcessId{7}};
  h.add_object(1, ObjectSlot{std::make_unique<Counter>(), counter_class()});
  DetachedContext ctx{ObjectRef{NodeId{9}, ProcessId{7}, 1}};
  std::uint64_t last = h.version();
  for (int i = 0; i < 50; ++i) {
    const bool command = i % 3 != 0;
    h.execute(1, command ? "incr" : "value", {}, ctx);
    CHECK(h.version() >= last);
    CHECK(h.version() == last + (command ? 1 : 0));
    last = h.version();
  }
  CHECK_THROWS(h.execute(1, "boom", {}, ctx));
  CHECK(h.version() == last + 1);
  CHECK(h.execute(1, "value", {}, ctx).as_nat() == 33);
}

TEST_CASE("unknown object and method are reported") {
  HandlerProcess h{ProcessId{7}};
  h.add_object(1, ObjectSlot{std::make_unique<Counter>(), counter_class()});
  DetachedContext ctx{ObjectRef{NodeId{9}, ProcessId{7}, 1}};
  try {
    h.execute(2, "incr", {}, ctx);
    FAIL("expected NoSuchObject");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoSuchObject);
  }
  try {
    h.execute(1, "nope", {}, ctx);
    FAIL("expected NoSuchMethod");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoSuchMethod);
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
}

TEST_CASE("a failing call is reported and the handler moves on") {
  HandlerProcess h{ProcessId{7}};
  h.add_object(1, ObjectSlot{std::make_unique<Counter>(), counter_class()});
  const ClientId a{NodeId{1}, ProcessId{1}};
  h.qoq().ensure_subqueue(a);
  h.qoq().enqueue(a, call_of("boom", "x1"));
  h.qoq().enqueue(a, call_of("incr", "x2"));
  h.qoq().append_unlock(a, UnlockMarker{});
  RecordingSink sink;
  while (handler_step(h, sink) != StepOutcome::Idle) {
  }
  CHECK(sink.trace == std::vector<std::string>{"failed:boom", "x2", "U1"});
}

TEST_CASE("program order holds for every subqueue under random interleavings") {
  std::mt19937_64 rng(42);
  for (int round = 0; round < 200; ++round) {
    HandlerProcess h{ProcessId{7}};
    h.add_object(1, ObjectSlot{std::make_unique<Counter>(), counter_class()});
    RecordingSink sink;
    const int clients = 4;
    std::vector<int> logged(clients, 0);
    std::vector<bool> locked(clients, false), done(clients, false);
    std::vector<int> lock_order;
    int finished = 0;
    while (finished < clients) {
      const int c = static_cast<int>(rng() % (clients + 1));
      if (c == clients) {
        (void)handler_step(h, sink);
        continue;
      }
      if (done[c]) continue;
      const ClientId id{NodeId{static_cast<std::uint64_t>(c + 1)}, ProcessId{static_cast<std::uint64_t>(c + 1)}};
      if (!locked[c]) {
        h.qoq().ensure_subqueue(id);
        locked[c] = true;
        lock_order.push_back(c);
      } else if (logged[c] < 5 && rng() % 4 != 0) {
        h.qoq().enqueue(id, call_of("incr", std::string(1, static_cast<char>('a' + c)) + std::to_string(++logged[c])));
      } else {
        h.qoq().append_unlock(id, UnlockMarker{});
        done[c] = true;
        ++finished;
      }
    }
    while (handler_step(h, sink) != StepOutcome::Idle) {
    }
    std::vector<std::string> want;
    for (int c : lock_order) {
      for (int i = 1; i <= logged[c]; ++i) want.push_back(std::string(1, static_cast<char>('a' + c)) + std::to_string(i));
      want.push_back("U" + std::to_string(c + 1));
    }
    REQUIRE(sink.trace == want);
  }
}

TEST_CASE("exhaustive two-client interleavings match the model") {
  const auto start = std::chrono::steady_clock::now();
  const auto r = explore(3);
  const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  INFO("schedules=" << r.schedules << " first mismatch: " << r.first_mismatch);
  CHECK(r.schedules > 1000);
  CHECK(r.mismatches == 0);
  CHECK(secs < 10.0);
}
