#include "doctest.h"

#include <random>

#include "dscoop/compensation.hpp"
#include "dscoop/errors.hpp"
#include "dscoop/gc.hpp"

using namespace dscoop;

namespace {

CapturedCall undo(std::string method, std::uint64_t v) {
  return CapturedCall{ObjectRef{NodeId{1}, ProcessId{2}, 3}, std::move(method), {Value::nat(v)}};
}

const ClientId kA{NodeId{5}, ProcessId{1}};
const ClientId kB{NodeId{6}, ProcessId{1}};

}  // namespace

TEST_CASE("staged compensation is committed only when its call executes") {
  CompensationRegistry r;
  const CompensationKey k{kA, ProcessId{2}};
  r.stage(k, undo("set_balance", 100));
  CHECK(r.has_staged(k));
  CHECK(r.entries(k).empty());
  r.stage(k, undo("set_balance", 200));
  const auto ts = r.commit_staged(k);
  REQUIRE(ts);
  CHECK_FALSE(r.has_staged(k));
  REQUIRE(r.entries(k).size() == 1);
  CHECK(r.entries(k)[0].call.args[0].as_nat() == 200);
  CHECK_FALSE(r.commit_staged(k));
}

TEST_CASE("unlock clears the process set and any staged entry") {
  CompensationRegistry r;
  const CompensationKey k{kA, ProcessId{2}};
  const CompensationKey other{kA, ProcessId{3}};
  r.add(k, undo("x", 1));
  r.add(other, undo("y", 2));
  r.stage(k, undo("z", 3));
  r.clear_on_unlock(k);
  CHECK(r.entries(k).empty());
  CHECK_FALSE(r.has_staged(k));
  CHECK(r.entries(other).size() == 1);
}

TEST_CASE("replay merges a client's sets newest first and leaves others") {
  CompensationRegistry r;
  r.add({kA, ProcessId{2}}, undo("a", 1));
  r.add({kB, ProcessId{2}}, undo("b", 1));
  r.add({kA, ProcessId{3}}, undo("a", 2));
  r.add({kA, ProcessId{2}}, undo("a", 3));
  const auto replay = r.take_for_replay(kA);
  REQUIRE(replay.size() == 3);
  CHECK(replay[0].call.args[0].as_nat() == 3);
  CHECK(replay[1].call.args[0].as_nat() == 2);
  CHECK(replay[2].call.args[0].as_nat() == 1);
  CHECK(r.take_for_replay(kA).empty());
  CHECK(r.clients() == std::vector<ClientId>{kB});
}

TEST_CASE("replay timestamps strictly decrease under random registrations") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 100; ++round) {
    CompensationRegistry r;
    const int n = 1 + static_cast<int>(rng() % 40);
    int committed = 0;
    for (int i = 0; i < n; ++i) {
      const ClientId c = rng() % 2 ? kA : kB;
      const CompensationKey k{c, ProcessId{1 + rng() % 4}};
      switch (rng() % 4) {
        case 0:
          r.stage(k, undo("s", i));
          if (rng() % 2 && r.commit_staged(k) && c == kA) ++committed;
          break;
        case 1:
          r.clear_on_unlock(k);
          break;
        default:
          r.add(k, undo("a", i));
          if (c == kA) ++committed;
      }
    }
    const auto replay = r.take_for_replay(kA);
    CHECK(replay.size() <= static_cast<std::size_t>(committed));
    for (std::size_t i = 1; i < replay.size(); ++i) REQUIRE(replay[i - 1].timestamp > replay[i].timestamp);
  }
}

TEST_CASE("refcounts grant, release and underflow") {
  RefCountTable t;
  const ObjectRef o{NodeId{1}, ProcessId{1}, 1};
  t.grant(o, NodeId{2}, 2);
  t.grant(o, NodeId{3}, 1);
  CHECK(t.count(o) == 3);
  t.release(o, NodeId{2}, 2);
  CHECK(t.net(o, NodeId{2}) == 0);
  CHECK(t.collectible().empty());
  t.release(o, NodeId{3}, 1);
  CHECK(t.collectible() == std::vector<ObjectRef>{o});
  try {
    t.release(o, NodeId{3}, 1);
    FAIL("expected underflow");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnderflowRelease);
  }
  t.forget(o);
  CHECK_FALSE(t.tracked(o));
}

TEST_CASE("a forwarded reference can be released by a holder the owner never granted") {
  RefCountTable t;
  const ObjectRef o{NodeId{1}, ProcessId{1}, 1};
  t.grant(o, NodeId{2}, 1);
  t.grant(o, NodeId{2}, 1);  // SHARE from node 2 before forwarding to node 3
  t.release(o, NodeId{3}, 1);
  CHECK(t.net(o, NodeId{3}) == -1);
  CHECK(t.count(o) == 1);
}

TEST_CASE("proxy table allocates one binding per remote reference") {
  ProxyTable p;
  const ObjectRef a{NodeId{1}, ProcessId{1}, 1}, b{NodeId{1}, ProcessId{1}, 2};
  auto& ba = p.ensure(a, ProcessId{9});
  ba.held = 2;
  CHECK(p.ensure(a, ProcessId{9}).held == 2);
  auto& bb = p.ensure(b, ProcessId{9});
  CHECK(bb.proxy_object != p.find(a)->proxy_object);
  CHECK(p.size() == 2);
  const auto removed = p.remove(a);
  REQUIRE(removed);
  CHECK(removed->held == 2);
  CHECK_FALSE(p.find(a));
}
