#include "dscoop/bench.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dscoop/apps.hpp"
#include "dscoop/block.hpp"
#include "dscoop/tcp.hpp"

namespace dscoop::bench {

std::string_view transport_name(TransportKind kind) noexcept {
  return kind == TransportKind::Simnet ? "simnet" : "socket";
}

std::optional<TransportKind> parse_transport(std::string_view name) noexcept {
  if (name == "simnet") return TransportKind::Simnet;
  if (name == "socket") return TransportKind::Socket;
  return std::nullopt;
}

// Cluster

Node& Cluster::node(NodeId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("no node " + to_string(id));
  return *it->second;
}

std::vector<Node*> Cluster::nodes() const {
  std::vector<Node*> out;
  for (const auto& [id, n] : index_) out.push_back(n);
  return out;
}

NodeStats Cluster::total_stats() {
  NodeStats total;
  for (auto* n : nodes()) {
    NodeStats s;
    on(*n, [&] { s = n->stats(); });
    for (const auto& [subject, count] : s.requests_sent) total.requests_sent[subject] += count;
    total.replies_sent += s.replies_sent;
    total.frames_received += s.frames_received;
    total.frames_relayed += s.frames_relayed;
    total.diagnostics += s.diagnostics;
  }
  return total;
}

void Cluster::reset_stats() {
  for (auto* n : nodes()) on(*n, [n] { n->reset_stats(); });
}

// SimCluster

SimCluster::SimCluster(SimNetwork::Options options) : net_(options) {}

SimCluster::~SimCluster() {
  // Nodes unbind from their endpoints, so they go before the network.
  owned_.clear();
}

Node& SimCluster::add_node(NodeId id, IndexFactory index) {
  NodeConfig config;
  config.id = id;
  if (index) {
    config.listen_address = SimNetwork::address_of(id);
    config.index_factory = std::move(index);
  }
  return add_node(std::move(config));
}

Node& SimCluster::add_node(NodeConfig config) {
  auto& ep = net_.attach(config.id);
  const NodeId id = config.id;
  owned_.push_back(std::make_unique<Node>(std::move(config), ep, ep));
  index_[id] = owned_.back().get();
  return *owned_.back();
}

void SimCluster::on(Node&, std::function<void()> fn) { fn(); }

void SimCluster::run(std::vector<Job> jobs) {
  auto remaining = std::make_shared<std::size_t>(jobs.size());
  auto first = std::make_shared<std::exception_ptr>();
  for (auto& job : jobs) {
    spawn(job.node->executor(), std::move(job.task), [remaining, first](std::exception_ptr e) {
      --*remaining;
      if (e && !*first) *first = e;
    });
  }
  net_.run_until_quiescent();
  if (*first) std::rethrow_exception(*first);
  if (*remaining != 0) {
    throw std::runtime_error(std::to_string(*remaining) + " job(s) stalled at virtual time " +
                             std::to_string(net_.now().count()) + "us");
  }
}

// SocketCluster

struct SocketCluster::Host {
  LoopExecutor loop;
  TcpTransport tcp{loop};
  std::unique_ptr<Node> node;
  std::string address;
};

SocketCluster::SocketCluster(Duration run_timeout) : run_timeout_(run_timeout) {}

SocketCluster::~SocketCluster() {
  for (auto& h : hosts_) h->loop.invoke([&h] { h->node.reset(); });
  for (auto& h : hosts_) {
    h->tcp.shutdown();
    h->loop.stop();
  }
}

Node& SocketCluster::add_node(NodeId id, IndexFactory index) {
  auto host = std::make_unique<Host>();
  host->address = host->tcp.listen("127.0.0.1:0");
  NodeConfig config;
  config.id = id;
  if (index) {
    config.listen_address = host->address;
    config.index_factory = std::move(index);
  }
  Host* h = host.get();
  h->loop.invoke([&] { h->node = std::make_unique<Node>(std::move(config), h->loop, h->tcp); });
  hosts_.push_back(std::move(host));
  index_[id] = h->node.get();
  return *h->node;
}

SocketCluster::Host& SocketCluster::host_of(const Node& node) const {
  for (const auto& h : hosts_) {
    if (h->node.get() == &node) return *h;
  }
  throw std::out_of_range("node not in cluster");
}

std::string SocketCluster::address_of(NodeId id) const { return host_of(node(id)).address; }

void SocketCluster::on(Node& node, std::function<void()> fn) { host_of(node).loop.invoke(std::move(fn)); }

void SocketCluster::run(std::vector<Job> jobs) {
  struct Shared {
    std::mutex m;
    std::condition_variable cv;
    std::size_t remaining = 0;
    std::exception_ptr first;
  };
  auto shared = std::make_shared<Shared>();
  shared->remaining = jobs.size();
  for (auto& job : jobs) {
    spawn(job.node->executor(), std::move(job.task), [shared](std::exception_ptr e) {
      std::lock_guard lock(shared->m);
      if (e && !shared->first) shared->first = e;
      if (--shared->remaining == 0) shared->cv.notify_all();
    });
  }
  std::unique_lock lock(shared->m);
  if (!shared->cv.wait_for(lock, run_timeout_, [&] { return shared->remaining == 0; })) {
    throw std::runtime_error(std::to_string(shared->remaining) + " job(s) did not finish in time");
  }
  if (shared->first) std::rethrow_exception(shared->first);
}

std::unique_ptr<Cluster> make_cluster(TransportKind kind, std::uint64_t seed) {
  if (kind == TransportKind::Simnet) {
    SimNetwork::Options options;
    options.seed = seed;
    return std::make_unique<SimCluster>(options);
  }
  return std::make_unique<SocketCluster>();
}

Task<ObjectRef> connect_index(Node& node, std::string address) {
  const NodeId peer = co_await node.connect(std::move(address));
  co_return co_await node.request_index(peer);
}

// Benchmarks

namespace {

struct Counter : Object {
  std::uint64_t value = 0;
};

std::shared_ptr<const MethodTable> counter_class() {
  static const auto table = ClassBuilder<Counter>()
                                .command("incr", [](Counter& c, const Values&, CallContext&) { ++c.value; })
                                .query("value", [](Counter& c, const Values&, CallContext&) {
                                  return Value::nat(c.value);
                                })
                                .build();
  return table;
}

ObjectRef create_counter(Node& node) {
  return node.create_object(node.create_handler(), std::make_unique<Counter>(), counter_class());
}

Task<void> fetch_index(Node& node, std::string address, ObjectRef* out) {
  *out = co_await connect_index(node, std::move(address));
}

Task<void> one_block_calls(ClientProcess& client, ObjectRef target, std::uint64_t n, bool commands) {
  if (n == 0) co_return;
  auto block = co_await client.open_block({target});
  for (std::uint64_t i = 0; i < n; ++i) {
    if (commands) {
      co_await block.command(target, "incr");
    } else {
      (void)co_await block.query(target, "value");
    }
  }
  co_await block.close();
}

Task<void> block_per_call(ClientProcess& client, ObjectRef target, std::uint64_t n, bool commands) {
  for (std::uint64_t i = 0; i < n; ++i) {
    auto block = co_await client.open_block({target});
    if (commands) {
      co_await block.command(target, "incr");
    } else {
      (void)co_await block.query(target, "value");
    }
    co_await block.close();
  }
}

class Measure {
 public:
  Measure(Cluster& cluster, BenchResult& result) : cluster_(cluster), result_(result) {
    cluster_.reset_stats();
    if (auto* sim = dynamic_cast<SimCluster*>(&cluster_)) virtual_start_ = sim->network().now();
    start_ = std::chrono::steady_clock::now();
  }

  void finish() {
    const auto end = std::chrono::steady_clock::now();
    result_.wall_time_ms = std::chrono::duration<double, std::milli>(end - start_).count();
    if (auto* sim = dynamic_cast<SimCluster*>(&cluster_)) {
      result_.virtual_time_ms = std::chrono::duration<double, std::milli>(sim->network().now() - virtual_start_).count();
    }
    const NodeStats s = cluster_.total_stats();
    result_.msgs_sent = s.frames_sent();
    result_.requests_by_subject = s.requests_sent;
    result_.requests_by_subject.erase(Subject::Ping);
    result_.msgs_sent -= s.requests_sent.contains(Subject::Ping) ? s.requests_sent.at(Subject::Ping) * 2 : 0;
    result_.requests_sent = 0;
    for (const auto& [subject, n] : result_.requests_by_subject) result_.requests_sent += n;
  }

 private:
  Cluster& cluster_;
  BenchResult& result_;
  Duration virtual_start_{0};
  std::chrono::steady_clock::time_point start_;
};

void fail_check(BenchResult& r, std::string why) {
  r.check_passed = false;
  if (!r.check_detail.empty()) r.check_detail += "; ";
  r.check_detail += std::move(why);
}

void run_micro(Cluster& cluster, const BenchSpec& spec, BenchResult& r) {
  const bool commands = spec.name == "commands" || spec.name == "control_command";
  const bool per_call = spec.name.starts_with("control_");
  Node& supplier = cluster.add_node(NodeId{1}, [](Node& n) { return create_counter(n); });

  std::vector<Node*> client_nodes;
  std::vector<ObjectRef> refs(spec.clients);
  std::vector<Cluster::Job> setup;
  for (std::uint64_t i = 0; i < spec.clients; ++i) {
    Node& n = cluster.add_node(NodeId{i + 2});
    client_nodes.push_back(&n);
    setup.push_back({&n, fetch_index(n, cluster.address_of(supplier.id()), &refs[i])});
  }
  cluster.run(std::move(setup));

  std::vector<Cluster::Job> jobs;
  for (std::uint64_t i = 0; i < spec.clients; ++i) {
    Node& n = *client_nodes[i];
    ClientProcess* client = nullptr;
    cluster.on(n, [&] { client = &n.create_client(); });
    jobs.push_back({&n, per_call ? block_per_call(*client, refs[i], spec.iterations, commands)
                                 : one_block_calls(*client, refs[i], spec.iterations, commands)});
  }
  r.blocks = per_call ? spec.clients * spec.iterations : (spec.iterations ? spec.clients : 0);

  Measure m(cluster, r);
  cluster.run(std::move(jobs));
  m.finish();

  if (commands) {
    std::uint64_t value = 0;
    cluster.on(supplier, [&] { value = supplier.invoke_direct(refs[0], "value").as_nat(); });
    if (value != spec.clients * spec.iterations) {
      fail_check(r, "counter is " + std::to_string(value) + ", expected " +
                        std::to_string(spec.clients * spec.iterations));
    }
  }
}

void run_philosophers(Cluster& cluster, const BenchSpec& spec, BenchResult& r) {
  const std::uint64_t n = spec.clients;
  if (n < 2) throw std::invalid_argument("philosophers needs at least 2 clients");
  std::vector<Node*> forks;
  for (std::uint64_t i = 0; i < n; ++i) {
    forks.push_back(&cluster.add_node(NodeId{i + 1}, [](Node& node) { return apps::create_fork(node); }));
  }
  std::vector<Node*> phils;
  std::vector<ObjectRef> left(n), right(n);
  std::vector<Cluster::Job> setup;
  for (std::uint64_t i = 0; i < n; ++i) {
    Node& p = cluster.add_node(NodeId{n + i + 1});
    phils.push_back(&p);
    setup.push_back({&p, fetch_index(p, cluster.address_of(forks[i]->id()), &left[i])});
    setup.push_back({&p, fetch_index(p, cluster.address_of(forks[(i + 1) % n]->id()), &right[i])});
  }
  cluster.run(std::move(setup));

  std::vector<Cluster::Job> jobs;
  for (std::uint64_t i = 0; i < n; ++i) {
    ClientProcess* client = nullptr;
    cluster.on(*phils[i], [&] { client = &phils[i]->create_client(); });
    jobs.push_back({phils[i], apps::philosopher(*client, left[i], right[i], spec.iterations)});
  }
  r.blocks = n * spec.iterations;

  Measure m(cluster, r);
  cluster.run(std::move(jobs));
  m.finish();

  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t uses = 0;
    cluster.on(*forks[i], [&] { uses = forks[i]->invoke_direct(left[i], "uses").as_nat(); });
    if (uses != 2 * spec.iterations) {
      fail_check(r, "fork " + std::to_string(i) + " used " + std::to_string(uses) + " times");
    }
  }
}

void run_logging(Cluster& cluster, const BenchSpec& spec, BenchResult& r) {
  constexpr std::uint64_t kServers = 2;
  std::vector<Node*> servers;
  for (std::uint64_t i = 0; i < kServers; ++i) {
    servers.push_back(&cluster.add_node(NodeId{i + 1}, [](Node& node) { return apps::create_log(node); }));
  }
  std::vector<Node*> clients;
  std::vector<std::vector<ObjectRef>> refs(spec.clients, std::vector<ObjectRef>(kServers));
  std::vector<Cluster::Job> setup;
  for (std::uint64_t c = 0; c < spec.clients; ++c) {
    Node& n = cluster.add_node(NodeId{kServers + c + 1});
    clients.push_back(&n);
    for (std::uint64_t s = 0; s < kServers; ++s) {
      setup.push_back({&n, fetch_index(n, cluster.address_of(servers[s]->id()), &refs[c][s])});
    }
  }
  cluster.run(std::move(setup));

  std::vector<Cluster::Job> jobs;
  for (std::uint64_t c = 0; c < spec.clients; ++c) {
    ClientProcess* client = nullptr;
    cluster.on(*clients[c], [&] { client = &clients[c]->create_client(); });
    jobs.push_back({clients[c], apps::log_client(*client, refs[c], spec.iterations, "client" + std::to_string(c))});
  }
  r.blocks = spec.clients * spec.iterations;

  Measure m(cluster, r);
  cluster.run(std::move(jobs));
  m.finish();

  std::vector<std::vector<std::string>> logs(kServers);
  for (std::uint64_t s = 0; s < kServers; ++s) {
    cluster.on(*servers[s], [&] { logs[s] = servers[s]->state_of<apps::Log>(refs[0][s]).entries; });
  }
  if (logs[0].size() != spec.clients * spec.iterations) {
    fail_check(r, "log has " + std::to_string(logs[0].size()) + " entries");
  }
  for (std::uint64_t s = 1; s < kServers; ++s) {
    if (logs[s] != logs[0]) fail_check(r, "replica " + std::to_string(s) + " differs");
  }
}

void run_pipeline(Cluster& cluster, const BenchSpec& spec, BenchResult& r) {
  constexpr std::uint64_t kBuffers = 5;
  std::vector<Node*> buffers;
  for (std::uint64_t i = 0; i < kBuffers; ++i) {
    buffers.push_back(&cluster.add_node(NodeId{i + 1}, [](Node& node) { return apps::create_buffer(node); }));
  }
  constexpr apps::Stage kStages[] = {apps::Stage::SquareFirst, apps::Stage::SquareSecond, apps::Stage::Add,
                                     apps::Stage::Sqrt};
  std::vector<Node*> stage_nodes;
  std::vector<ObjectRef> in(4), out(4);
  ObjectRef source_ref;
  std::vector<Cluster::Job> setup;
  for (std::uint64_t i = 0; i < 4; ++i) {
    Node& n = cluster.add_node(NodeId{kBuffers + i + 1});
    stage_nodes.push_back(&n);
    setup.push_back({&n, fetch_index(n, cluster.address_of(buffers[i]->id()), &in[i])});
    setup.push_back({&n, fetch_index(n, cluster.address_of(buffers[i + 1]->id()), &out[i])});
  }
  Node& source = cluster.add_node(NodeId{kBuffers + 5});
  setup.push_back({&source, fetch_index(source, cluster.address_of(buffers[0]->id()), &source_ref)});
  cluster.run(std::move(setup));

  std::mt19937_64 rng(spec.seed);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> inputs;
  for (std::uint64_t i = 0; i < spec.iterations; ++i) {
    if (i % 4 == 0) {
      const std::uint64_t k = rng() % 1000 + 1;
      inputs.emplace_back(3 * k, 4 * k);
    } else {
      inputs.emplace_back(rng() % (1u << 20), rng() % (1u << 20));
    }
  }

  std::vector<Cluster::Job> jobs;
  for (std::uint64_t i = 0; i < 4; ++i) {
    ClientProcess* client = nullptr;
    cluster.on(*stage_nodes[i], [&] { client = &stage_nodes[i]->create_client(); });
    jobs.push_back({stage_nodes[i], apps::pipeline_stage(*client, in[i], out[i], kStages[i], spec.iterations)});
  }
  ClientProcess* feeder = nullptr;
  cluster.on(source, [&] { feeder = &source.create_client(); });
  jobs.push_back({&source, apps::pipeline_source(*feeder, source_ref, inputs)});
  r.blocks = 5 * spec.iterations;

  Measure m(cluster, r);
  cluster.run(std::move(jobs));
  m.finish();

  std::deque<Values> results;
  cluster.on(*buffers[4], [&] { results = buffers[4]->state_of<apps::Buffer>(out[3]).items; });
  if (results.size() != inputs.size()) {
    fail_check(r, std::to_string(results.size()) + " results for " + std::to_string(inputs.size()) + " inputs");
    return;
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Value expected = apps::hypot_value(inputs[i].first, inputs[i].second);
    if (results[i].size() != 1 || results[i][0] != expected) {
      fail_check(r, "result " + std::to_string(i) + " is " + (results[i].empty() ? "empty" : to_string(results[i][0])) +
                        ", expected " + to_string(expected));
      return;
    }
  }
}

}  // namespace

BenchResult run_bench(const BenchSpec& spec) {
  if (std::find(std::begin(kBenchNames), std::end(kBenchNames), spec.name) == std::end(kBenchNames)) {
    throw std::invalid_argument("unknown benchmark '" + spec.name + "'");
  }
  if (spec.clients == 0) throw std::invalid_argument("clients must be positive");
  BenchResult r;
  r.name = spec.name;
  r.iterations = spec.iterations;
  r.clients = spec.clients;
  r.transport = spec.transport;

  auto cluster = make_cluster(spec.transport, spec.seed);
  if (spec.name == "philosophers") {
    run_philosophers(*cluster, spec, r);
  } else if (spec.name == "logging") {
    run_logging(*cluster, spec, r);
  } else if (spec.name == "pipeline") {
    run_pipeline(*cluster, spec, r);
  } else {
    run_micro(*cluster, spec, r);
  }
  return r;
}

std::string csv_header() {
  return "name,transport,iterations,clients,wall_time_ms,virtual_time_ms,msgs_sent,requests_sent,blocks,check";
}

std::string csv_row(const BenchResult& r) {
  std::ostringstream os;
  os << r.name << ',' << transport_name(r.transport) << ',' << r.iterations << ',' << r.clients << ','
     << r.wall_time_ms << ',' << r.virtual_time_ms << ',' << r.msgs_sent << ',' << r.requests_sent << ',' << r.blocks
     << ',' << (r.check_passed ? "pass" : "fail");
  return os.str();
}

}  // namespace dscoop::bench
