#pragma once

// Clusters of nodes over simnet or loopback sockets, and the benchmark
// runners built on them.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dscoop/node.hpp"
#include "dscoop/simnet.hpp"
#include "dscoop/task.hpp"

namespace dscoop::bench {

enum class TransportKind { Simnet, Socket };

std::string_view transport_name(TransportKind kind) noexcept;
std::optional<TransportKind> parse_transport(std::string_view name) noexcept;

using IndexFactory = std::function<ObjectRef(Node&)>;

class Cluster {
 public:
  struct Job {
    Node* node;
    Task<void> task;
  };

  virtual ~Cluster() = default;

  virtual TransportKind kind() const noexcept = 0;

  /// Adds a node that accepts connections. index may be empty.
  virtual Node& add_node(NodeId id, IndexFactory index = {}) = 0;
  virtual std::string address_of(NodeId id) const = 0;

  /// Runs fn on the node's executor and waits for it.
  virtual void on(Node& node, std::function<void()> fn) = 0;

  /// Runs every job on its node until all finish. Rethrows the first failure;
  /// throws if the jobs stop making progress.
  virtual void run(std::vector<Job> jobs) = 0;

  Node& node(NodeId id) const;
  std::vector<Node*> nodes() const;

  /// Sums the statistics of all nodes.
  NodeStats total_stats();
  void reset_stats();

 protected:
  std::map<NodeId, Node*> index_;
};

class SimCluster final : public Cluster {
 public:
  explicit SimCluster(SimNetwork::Options options = {});
  ~SimCluster() override;

  TransportKind kind() const noexcept override { return TransportKind::Simnet; }
  Node& add_node(NodeId id, IndexFactory index = {}) override;
  Node& add_node(NodeConfig config);
  std::string address_of(NodeId id) const override { return SimNetwork::address_of(id); }
  void on(Node& node, std::function<void()> fn) override;
  void run(std::vector<Job> jobs) override;

  SimNetwork& network() noexcept { return net_; }

 private:
  SimNetwork net_;
  std::vector<std::unique_ptr<Node>> owned_;
};

class SocketCluster final : public Cluster {
 public:
  explicit SocketCluster(Duration run_timeout = std::chrono::seconds(120));
  ~SocketCluster() override;

  TransportKind kind() const noexcept override { return TransportKind::Socket; }
  Node& add_node(NodeId id, IndexFactory index = {}) override;
  std::string address_of(NodeId id) const override;
  void on(Node& node, std::function<void()> fn) override;
  void run(std::vector<Job> jobs) override;

 private:
  struct Host;
  Host& host_of(const Node& node) const;

  Duration run_timeout_;
  std::vector<std::unique_ptr<Host>> hosts_;
};

std::unique_ptr<Cluster> make_cluster(TransportKind kind, std::uint64_t seed);

namespace detail {
template <class T>
Task<void> store_result(Task<T> task, std::optional<T>* out) {
  out->emplace(co_await std::move(task));
}
}  // namespace detail

/// Runs one value-returning task on node and returns its result.
template <class T>
T run_task(Cluster& cluster, Node& node, Task<T> task) {
  std::optional<T> out;
  std::vector<Cluster::Job> jobs;
  jobs.push_back({&node, detail::store_result(std::move(task), &out)});
  cluster.run(std::move(jobs));
  return std::move(*out);
}

inline void run_task(Cluster& cluster, Node& node, Task<void> task) {
  std::vector<Cluster::Job> jobs;
  jobs.push_back({&node, std::move(task)});
  cluster.run(std::move(jobs));
}

/// Connects to the node at address and fetches its index object.
Task<ObjectRef> connect_index(Node& node, std::string address);

// Benchmarks.

inline constexpr std::string_view kBenchNames[] = {"commands",     "queries", "control_command", "control_query",
                                                   "philosophers", "logging", "pipeline"};

struct BenchSpec {
  std::string name;
  std::uint64_t iterations = 1000;
  std::uint64_t clients = 1;
  TransportKind transport = TransportKind::Simnet;
  std::uint64_t seed = 1;
};

struct BenchResult {
  std::string name;
  std::uint64_t iterations = 0;
  std::uint64_t clients = 0;
  TransportKind transport = TransportKind::Simnet;
  /// Host time of the measured phase.
  double wall_time_ms = 0;
  /// Virtual time of the measured phase; zero over sockets.
  double virtual_time_ms = 0;
  /// Frames sent by all nodes during the measured phase, replies included.
  std::uint64_t msgs_sent = 0;
  /// Request frames during the measured phase, pings excluded.
  std::uint64_t requests_sent = 0;
  /// Blocks opened during the measured phase.
  std::uint64_t blocks = 0;
  std::map<Subject, std::uint64_t> requests_by_subject;
  /// Outcome of the benchmark's own consistency check.
  bool check_passed = true;
  std::string check_detail;
};

/// Throws std::invalid_argument for an unknown name or zero clients.
BenchResult run_bench(const BenchSpec& spec);

std::string csv_header();
std::string csv_row(const BenchResult& r);

}  // namespace dscoop::bench
