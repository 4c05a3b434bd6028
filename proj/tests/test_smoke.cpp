#include "doctest.h"

#include "dscoop/apps.hpp"
#include "dscoop/bench.hpp"

using namespace dscoop;

TEST_CASE("transfer over simnet") {
  bench::SimCluster c;
  Node& a = c.add_node(NodeId{1}, [](Node& n) { return apps::create_bank(n, 2, 100); });
  Node& cl = c.add_node(NodeId{2});
  ObjectRef bank = bench::run_task(c, cl, bench::connect_index(cl, "sim:1"));
  ObjectRef s = a.state_of<apps::Bank>(bank).accounts[0];
  ObjectRef t = a.state_of<apps::Bank>(bank).accounts[1];
  auto& client = cl.create_client();
  auto r = bench::run_task(c, cl, apps::transfer(client, s, t, 60));
  CHECK(r.done);
  CHECK(a.state_of<apps::Account>(s).balance == 40);
  CHECK(a.state_of<apps::Account>(t).balance == 160);
}
