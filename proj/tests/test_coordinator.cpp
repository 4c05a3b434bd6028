#include "doctest.h"

#include "dscoop/coordinator.hpp"
#include "dscoop/errors.hpp"
#include "gate_model.hpp"

using namespace dscoop;

namespace {

ClientId client(std::uint64_t n) { return ClientId{NodeId{n}, ProcessId{n}}; }

std::optional<Errc> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("gate admits one holder and queues the rest in arrival order") {
  PrelockGate g;
  CHECK(g.request(client(1)) == PrelockGate::Admission::Admitted);
  CHECK(g.request(client(2)) == PrelockGate::Admission::Queued);
  CHECK(g.request(client(3)) == PrelockGate::Admission::Queued);
  CHECK(g.is_holder(client(1)));
  CHECK(g.is_waiting(client(3)));
  CHECK(g.on_lock(client(1)) == client(2));
  CHECK(g.on_lock(client(2)) == client(3));
  CHECK(g.on_lock(client(3)) == std::nullopt);
  CHECK_FALSE(g.holder());
}

TEST_CASE("gate rejects duplicate PRELOCK and LOCK from a non-holder") {
  PrelockGate g;
  g.request(client(1));
  g.request(client(2));
  CHECK(code_of([&] { g.request(client(1)); }) == Errc::ProtocolViolation);
  CHECK(code_of([&] { g.request(client(2)); }) == Errc::ProtocolViolation);
  CHECK(code_of([&] { g.on_lock(client(2)); }) == Errc::ProtocolViolation);
}

TEST_CASE("withdrawing the holder admits the next waiter; withdrawing a waiter does not") {
  PrelockGate g;
  g.request(client(1));
  g.request(client(2));
  g.request(client(3));
  CHECK(g.withdraw(client(2)) == std::nullopt);
  CHECK(g.waiters().size() == 1);
  CHECK(g.withdraw(client(1)) == client(3));
  CHECK(g.withdraw(client(9)) == std::nullopt);
  CHECK(g.is_holder(client(3)));
}

TEST_CASE("lock record pops nested frames in reverse order") {
  LockRecord r;
  CHECK(code_of([&] { r.pop(); }) == Errc::NoActiveLock);
  r.push({ProcessId{1}, ProcessId{2}});
  r.push({ProcessId{3}});
  CHECK(r.depth() == 2);
  CHECK(r.top() == std::vector<ProcessId>{ProcessId{3}});
  CHECK(r.pop() == std::vector<ProcessId>{ProcessId{3}});
  CHECK(r.pop() == std::vector<ProcessId>{ProcessId{1}, ProcessId{2}});
  CHECK(r.empty());
}

TEST_CASE("wait registry wakes once on a newer version") {
  WaitRegistry w;
  w.arm(client(1), {{ProcessId{5}, 3}, {ProcessId{6}, 0}});
  w.arm(client(2), {{ProcessId{6}, 2}});
  CHECK(w.on_version(ProcessId{5}, 3).empty());
  CHECK(w.on_version(ProcessId{6}, 2) == std::vector<ClientId>{client(1)});
  CHECK_FALSE(w.is_armed(client(1)));
  CHECK(w.on_version(ProcessId{6}, 3) == std::vector<ClientId>{client(2)});
  CHECK(w.size() == 0);
  CHECK(w.on_version(ProcessId{6}, 4).empty());
}

TEST_CASE("re-arming replaces the earlier registration") {
  WaitRegistry w;
  w.arm(client(1), {{ProcessId{5}, 0}});
  w.arm(client(1), {{ProcessId{6}, 0}});
  CHECK(w.on_version(ProcessId{5}, 1).empty());
  CHECK(w.on_version(ProcessId{6}, 1).size() == 1);
}

TEST_CASE("plan_block groups processes by node in ascending order") {
  const auto plan = plan_block({ObjectRef{NodeId{9}, ProcessId{1}, 1}, ObjectRef{NodeId{3}, ProcessId{2}, 1},
                                ObjectRef{NodeId{7}, ProcessId{4}, 2}, ObjectRef{NodeId{3}, ProcessId{2}, 5},
                                ObjectRef{NodeId{3}, ProcessId{1}, 6}});
  std::vector<NodeId> order;
  for (const auto& [n, _] : plan) order.push_back(n);
  CHECK(order == std::vector<NodeId>{NodeId{3}, NodeId{7}, NodeId{9}});
  CHECK(plan.at(NodeId{3}) == std::set<ProcessId>{ProcessId{1}, ProcessId{2}});
}

TEST_CASE("ascending gate acquisition never deadlocks: 3 nodes, 3 clients, all subsets") {
  const auto sw = gatemodel::sweep_ascending(3, 3);
  INFO(sw.first_failure);
  CHECK(sw.configurations == 343);
  CHECK(sw.failures == 0);
  MESSAGE("explored " << sw.states << " states");
}

TEST_CASE("the search finds the deadlock of opposite acquisition orders") {
  const auto r = gatemodel::Model(2, {{{0, 1}}, {{1, 0}}}).explore();
  CHECK((r.cycle || r.deadlock));
}

TEST_CASE("ascending acquisition with four clients on two nodes") {
  const auto sw = gatemodel::sweep_ascending(2, 4);
  INFO(sw.first_failure);
  CHECK(sw.failures == 0);
}
