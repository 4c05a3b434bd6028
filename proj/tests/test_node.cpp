#include "doctest.h"

#include "dscoop/apps.hpp"
#include "dscoop/bench.hpp"
#include "generators.hpp"
#include "raw_peer.hpp"

using namespace dscoop;
using namespace std::chrono_literals;
using bench::run_task;
using testpeer::fail_code;
using testpeer::RawPeer;

namespace {

ObjectRef bank_index(Node& n) { return apps::create_bank(n, 1, 100); }

Task<void> connect_job(Node& n, std::string address) { co_await n.connect(std::move(address)); }

Task<ObjectRef> fetch_account(ClientProcess& client, ObjectRef bank, std::uint64_t i) {
  auto block = co_await client.open_block({bank});
  const Value v = co_await block.query(bank, "account", make_values(Value::nat(i)));
  co_await block.close();
  co_return v.as_ref();
}

template <class F>
std::optional<Errc> error_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("connect performs the handshake once per peer") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  Node& b = c.add_node(NodeId{2});
  CHECK(run_task(c, a, a.connect("sim:2")) == NodeId{2});
  CHECK(a.is_connected(NodeId{2}));
  CHECK(b.is_connected(NodeId{1}));
  CHECK(run_task(c, a, a.connect("sim:2")) == NodeId{2});
  CHECK(a.stats().requests_sent.at(Subject::Hello) == 1);
  CHECK(a.peers() == std::vector<NodeId>{NodeId{2}});
}

TEST_CASE("dialing a missing node fails with a transport error") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  CHECK(error_of([&] { run_task(c, a, a.connect("sim:5")); }) == Errc::TransportError);
}

TEST_CASE("HELLO with a different version is refused") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  RawPeer p(c.network(), NodeId{9});
  REQUIRE(p.dial(NodeId{1}));
  CHECK_FALSE(p.hello(99));
  REQUIRE(p.last_hello());
  CHECK(fail_code(*p.last_hello()) == Errc::VersionMismatch);
  CHECK_FALSE(a.is_connected(NodeId{9}));
  CHECK(p.hello());
  CHECK(p.last_hello()->results.at(0).as_nat() == 1);
  CHECK(a.is_connected(NodeId{9}));
}

TEST_CASE("requests before HELLO are protocol violations") {
  bench::SimCluster c;
  c.add_node(NodeId{1});
  RawPeer p(c.network(), NodeId{9});
  REQUIRE(p.dial(NodeId{1}));
  const auto r = p.request(testpeer::request(Subject::Ping));
  REQUIRE(r);
  CHECK(fail_code(*r) == Errc::ProtocolViolation);
}

TEST_CASE("INDEX without an index object fails with NoIndex") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  c.add_node(NodeId{2});
  run_task(c, a, a.connect("sim:2"));
  CHECK(error_of([&] { run_task(c, a, a.request_index(NodeId{2})); }) == Errc::NoIndex);
}

TEST_CASE("the index object is cached unless fresh per request") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  c.add_node(NodeId{2}, bank_index);
  NodeConfig fresh;
  fresh.id = NodeId{3};
  fresh.index_factory = bank_index;
  fresh.fresh_index_per_request = true;
  c.add_node(fresh);
  run_task(c, a, a.connect("sim:2"));
  run_task(c, a, a.connect("sim:3"));
  const auto x1 = run_task(c, a, a.request_index(NodeId{2}));
  const auto x2 = run_task(c, a, a.request_index(NodeId{2}));
  CHECK(x1 == x2);
  const auto y1 = run_task(c, a, a.request_index(NodeId{3}));
  const auto y2 = run_task(c, a, a.request_index(NodeId{3}));
  CHECK(y1 != y2);
  CHECK(a.find_proxy(x1)->held == 2);
}

TEST_CASE("ping round-trips") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  c.add_node(NodeId{2});
  run_task(c, a, a.connect("sim:2"));
  run_task(c, a, a.ping(NodeId{2}));
  CHECK(a.stats().requests_sent.at(Subject::Ping) == 1);
}

TEST_CASE("frames for a third node are relayed") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  Node& b = c.add_node(NodeId{2});
  c.add_node(NodeId{3}, bank_index);
  run_task(c, a, a.connect("sim:2"));
  run_task(c, b, b.connect("sim:3"));
  a.add_route(NodeId{3}, NodeId{2});
  const auto bank = run_task(c, a, a.request_index(NodeId{3}));
  CHECK(bank.node == NodeId{3});
  CHECK(b.stats().frames_relayed == 2);

  auto& client = a.create_client();
  const auto acct = run_task(c, a, fetch_account(client, bank, 0));
  const auto r = run_task(c, a, apps::withdraw(client, acct, 30));
  CHECK(r.done);
  CHECK(c.node(NodeId{3}).state_of<apps::Account>(acct).balance == 70);
}

TEST_CASE("requests to an unknown node fail with NoRoute") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  CHECK(error_of([&] { run_task(c, a, a.request_index(NodeId{42})); }) == Errc::NoRoute);
  Node& b = c.add_node(NodeId{2});
  run_task(c, a, a.connect("sim:2"));
  (void)b;
  a.add_route(NodeId{42}, NodeId{2});
  CHECK(error_of([&] { run_task(c, a, a.request_index(NodeId{42})); }) == Errc::NoRoute);
}

TEST_CASE("shared references are collected once every holder releases them") {
  bench::SimCluster c;
  Node& owner = c.add_node(NodeId{1}, bank_index);
  Node& h1 = c.add_node(NodeId{2});
  Node& h2 = c.add_node(NodeId{3});
  const auto bank = run_task(c, h1, bench::connect_index(h1, "sim:1"));
  run_task(c, h2, h2.connect("sim:1"));
  auto& client = h1.create_client();
  const auto acct = run_task(c, h1, fetch_account(client, bank, 0));
  CHECK(owner.ref_counts().count(acct) == 1);
  CHECK(h1.find_proxy(acct)->held == 1);

  // h1 forwards acct to h2, sharing it with the owner first.
  run_task(c, h1, h1.share_ref(acct, 1));
  CHECK(owner.ref_counts().count(acct) == 2);
  h2.ensure_proxy(acct).held = 1;

  run_task(c, h2, h2.drop_proxy(acct));
  CHECK(owner.ref_counts().count(acct) == 1);
  CHECK(owner.collect_garbage().empty());

  run_task(c, h1, h1.drop_proxy(acct));
  CHECK(owner.ref_counts().count(acct) == 0);
  CHECK(owner.collect_garbage() == std::vector<ObjectRef>{acct});
  CHECK_THROWS(owner.state_of<apps::Account>(acct));
  CHECK(error_of([&] { run_task(c, h1, h1.release_ref(acct, 1)); }) == Errc::UnderflowRelease);

  // The index object stays alive even with no remote holders.
  run_task(c, h1, h1.drop_proxy(bank));
  CHECK(owner.collect_garbage().empty());
  CHECK_NOTHROW(owner.state_of<apps::Bank>(bank));
}

TEST_CASE("simultaneous connects settle on one link") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1}, bank_index);
  Node& b = c.add_node(NodeId{2}, bank_index);
  std::vector<bench::Cluster::Job> jobs;
  jobs.push_back({&a, connect_job(a, "sim:2")});
  jobs.push_back({&b, connect_job(b, "sim:1")});
  c.run(std::move(jobs));
  CHECK(a.is_connected(NodeId{2}));
  CHECK(b.is_connected(NodeId{1}));
  CHECK(run_task(c, a, a.request_index(NodeId{2})).node == NodeId{2});
  CHECK(run_task(c, b, b.request_index(NodeId{1})).node == NodeId{1});
  run_task(c, a, a.ping(NodeId{2}));
  run_task(c, b, b.ping(NodeId{1}));
}

TEST_CASE("a silent peer is declared failed once") {
  bench::SimCluster c;
  NodeConfig cfg;
  cfg.id = NodeId{1};
  cfg.ping_interval = 10ms;
  Node& a = c.add_node(cfg);
  c.add_node(NodeId{2}, bank_index);
  int failures = 0;
  a.set_observer([&](const NodeEvent& e) { failures += e.kind == NodeEvent::Kind::PeerFailed; });
  run_task(c, a, a.connect("sim:2"));
  c.network().run_until(c.network().now() + 100ms);
  CHECK(a.is_connected(NodeId{2}));
  CHECK(a.stats().requests_sent.at(Subject::Ping) >= 5);

  c.network().inject({Fault::at_time(c.network().now(), FaultAction::delay_link(NodeId{2}, NodeId{1}, 10s))});
  c.network().run_until(c.network().now() + 200ms);
  CHECK_FALSE(a.is_connected(NodeId{2}));
  c.network().run_until(c.network().now() + 20s);
  CHECK(failures == 1);
  CHECK(error_of([&] { run_task(c, a, a.request_index(NodeId{2})); }) == Errc::PeerFailure);
}

TEST_CASE("a disconnected peer fails pending requests") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1});
  c.add_node(NodeId{2}, bank_index);
  run_task(c, a, a.connect("sim:2"));
  c.network().inject({Fault::at_time(c.network().now() + 500us, FaultAction::disconnect(NodeId{2}))});
  CHECK(error_of([&] { run_task(c, a, a.request_index(NodeId{2})); }) == Errc::PeerFailure);
}

TEST_CASE("random and malformed frames never break a node") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1}, bank_index);
  RawPeer p(c.network(), NodeId{9});
  REQUIRE(p.dial(NodeId{1}));
  REQUIRE(p.hello());
  testgen::Gen g(99);
  for (int i = 0; i < 1000; ++i) {
    if (i % 10 == 0) {
      Bytes junk(g.below(60));
      for (auto& b : junk) b = static_cast<std::uint8_t>(g.u64());
      p.send_raw(std::move(junk));
    } else {
      auto req = g.request();
      if (req.subject == Subject::Hello) continue;
      p.send(Envelope{p.next_id(), p.id(), NodeId{1}, std::move(req)});
    }
    c.network().run_until_quiescent();
  }
  CHECK(p.reply_count() > 500);
  CHECK(a.stats().diagnostics > 0);
  const auto pong = p.request(testpeer::request(Subject::Ping), NodeId{1});
  REQUIRE(pong);
  CHECK(pong->is_ok());
}
