#pragma once

// A D-SCOOP node: handler processes, client processes, one connection per
// peer, and the supplier side of the locking protocol.
//
// All node state is confined to the node's Executor. Public methods must be
// called on that executor (the simulator runs everything on one thread; the
// TCP runtime offers LoopExecutor::invoke for calls from other threads).

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dscoop/compensation.hpp"
#include "dscoop/coordinator.hpp"
#include "dscoop/core_types.hpp"
#include "dscoop/gc.hpp"
#include "dscoop/qoq.hpp"
#include "dscoop/runtime.hpp"
#include "dscoop/task.hpp"
#include "dscoop/wire.hpp"

namespace dscoop {

class Node;
class ClientProcess;

namespace detail {
struct BlockState;
class NodeCallContext;
class LocalNestedBlock;
}  // namespace detail

struct NodeConfig {
  NodeId id;
  std::optional<std::string> listen_address;
  /// Builds the index object. Required for nodes that accept connections.
  std::function<ObjectRef(Node&)> index_factory;
  /// Call the factory on every INDEX request instead of caching the first object.
  bool fresh_index_per_request = false;
  Duration prelock_timeout = std::chrono::seconds(2);
  /// Zero disables liveness pings.
  Duration ping_interval{0};
  /// Missing PING reply bound. Defaults to twice the ping interval.
  std::optional<Duration> liveness_timeout;
};

struct NodeStats {
  std::map<Subject, std::uint64_t> requests_sent;
  std::uint64_t replies_sent = 0;
  std::uint64_t frames_received = 0;
  std::uint64_t frames_relayed = 0;
  std::uint64_t diagnostics = 0;

  std::uint64_t total_requests() const;
  std::uint64_t frames_sent() const { return total_requests() + replies_sent; }
};

/// Observable protocol milestones, mainly for tests and traces.
struct NodeEvent {
  enum class Kind {
    GateAdmitted,
    GateQueued,
    Locked,
    Unlocked,
    Executed,
    CompensationRegistered,
    Compensated,
    PeerFailed,
    Diagnostic,
  };

  Kind kind;
  Duration time{0};
  std::optional<ClientId> client;
  ProcessId process;
  std::uint64_t timestamp = 0;
  std::string detail;
};

std::string_view event_kind_name(NodeEvent::Kind kind) noexcept;

/// Throws the Error a FAIL reply describes; no-op for OK.
void expect_ok(const ReplyMessage& reply);

class Node final : public TransportListener, private StepSink {
 public:
  Node(NodeConfig config, Executor& executor, Transport& transport);
  ~Node() override;

  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  NodeId id() const noexcept { return config_.id; }
  const NodeConfig& config() const noexcept { return config_; }
  Executor& executor() noexcept { return ex_; }

  // Hosting.
  ProcessId create_handler();
  ObjectRef create_object(ProcessId handler, std::unique_ptr<Object> state,
                          std::shared_ptr<const MethodTable> methods);
  HandlerProcess* handler(ProcessId p);
  const HandlerProcess* handler(ProcessId p) const;
  std::vector<ProcessId> handler_ids() const;

  /// Typed access to a local object's state, for setup and inspection.
  template <class T>
  T& state_of(const ObjectRef& ref) {
    auto* h = handler(ref.process);
    ObjectSlot* slot = (h && ref.node == id()) ? h->find_object(ref.object) : nullptr;
    if (!slot) throw Error(Errc::NoSuchObject, to_string(ref));
    return dynamic_cast<T&>(*slot->state);
  }

  /// Runs a method directly on a local object, outside any block. For setup
  /// and inspection only: it bypasses the handler's queue.
  Value invoke_direct(const ObjectRef& ref, const std::string& method, const Values& args = {});

  // Clients.
  ClientProcess& create_client();

  // Connections.
  Task<NodeId> connect(std::string address);
  Task<ObjectRef> request_index(NodeId peer);
  Task<void> ping(NodeId peer);
  /// Messages for destination are forwarded through via.
  void add_route(NodeId destination, NodeId via);
  bool is_connected(NodeId peer) const { return connections_.contains(peer); }
  std::vector<NodeId> peers() const;
  /// Closes the connection; handled locally like a peer failure.
  void disconnect(NodeId peer);

  // References.
  ProxyBinding& ensure_proxy(const ObjectRef& remote);
  const ProxyBinding* find_proxy(const ObjectRef& remote) const { return proxies_.find(remote); }
  std::optional<ProcessId> proxy_process() const noexcept { return proxy_process_; }
  Task<void> share_ref(ObjectRef ref, std::uint64_t count);
  Task<void> release_ref(ObjectRef ref, std::uint64_t count);
  /// Local GC hook: releases everything the binding holds and removes it.
  Task<void> drop_proxy(ObjectRef remote);
  const RefCountTable& ref_counts() const noexcept { return refcounts_; }
  /// Removes exported objects no remote holder references. Returns them.
  std::vector<ObjectRef> collect_garbage();

  // Observation.
  const NodeStats& stats() const noexcept { return stats_; }
  void reset_stats() { stats_ = {}; }
  const PrelockGate& gate() const noexcept { return gate_; }
  const LockRecord* lock_record(ClientId c) const;
  const CompensationRegistry& compensation() const noexcept { return compensation_; }
  const WaitRegistry& waits() const noexcept { return waits_; }
  void set_observer(std::function<void(const NodeEvent&)> fn) { observer_ = std::move(fn); }
  /// True while any handler has queued work or an open subqueue.
  bool busy() const;

  // TransportListener.
  void on_link_up(LinkId link) override;
  void on_frame(LinkId link, Bytes frame) override;
  void on_link_down(LinkId link) override;

 private:
  friend class ClientProcess;
  friend class SeparateBlock;
  friend struct detail::BlockState;
  friend class detail::NodeCallContext;
  friend class detail::LocalNestedBlock;

  struct LinkState {
    bool outbound = false;
    std::optional<NodeId> peer;
    std::string address;
  };

  struct PendingReply {
    std::optional<NodeId> peer;
    std::optional<LinkId> link;
    AsyncResult<ReplyMessage> result;
    std::optional<Executor::TimerId> timer;
  };

  struct UnlockGroup {
    ClientId client;
    std::size_t remaining = 0;
    ReplyRoute route;
  };

  // Outbound requests. Local destinations are dispatched in-process.
  AsyncResult<ReplyMessage> send_request(NodeId dest, RequestMessage msg, std::optional<Duration> timeout = {},
                                         Errc timeout_code = Errc::PeerFailure, bool daemon = false);
  void send_reply(const ReplyRoute& route, ReplyMessage reply);
  void send_on_link(LinkId link, const Envelope& env);
  std::optional<LinkId> route_link(NodeId dest) const;
  void complete_pending(MessageId id, ReplyMessage reply);
  void fail_pending_if(const std::function<bool(const PendingReply&)>& pred, Errc code, const std::string& why);

  // Inbound.
  void handle_request(const Envelope& env, const ReplyRoute& route);
  void handle_hello(LinkId link, const Envelope& env);
  void handle_prelock(ClientId client, const RequestMessage& req, const ReplyRoute& route);
  void handle_lock(ClientId client, const RequestMessage& req, const ReplyRoute& route);
  void handle_call(ClientId client, const RequestMessage& req, const ReplyRoute& route);
  void handle_unlock(ClientId client, const RequestMessage& req, const ReplyRoute& route);
  void handle_await(ClientId client, const RequestMessage& req, const ReplyRoute& route);
  void handle_ready(ProcessId client_process);
  void admit(std::optional<ClientId> next);
  std::vector<ProcessId> local_processes(const RequestMessage& req) const;

  // Connections and liveness.
  void adopt_link(LinkId link, NodeId peer);
  void start_pinging(NodeId peer);
  Task<void> ping_once(NodeId peer);
  void handle_peer_failure(NodeId peer, const std::string& why);
  void release_client(ClientId client);

  // Handler scheduling.
  void schedule_pump(ProcessId p);
  void notify_version(HandlerProcess& h);
  void enqueue_local(ProcessId p, ClientId client, LoggedCall call);

  // StepSink.
  std::unique_ptr<CallContext> begin_call(HandlerProcess& h, ClientId client, const LoggedCall& call) override;
  void on_executed(HandlerProcess& h, ClientId client, const LoggedCall& call, Value result) override;
  void on_failed(HandlerProcess& h, ClientId client, const LoggedCall& call, Errc code,
                 const std::string& reason) override;
  void on_unlocked(HandlerProcess& h, ClientId client, const UnlockMarker& marker) override;

  // Reference accounting for values crossing the node boundary.
  void grant_outgoing(const Values& values, NodeId receiver);
  void ingest_incoming(const Values& values);

  void emit(NodeEvent::Kind kind, std::optional<ClientId> client = {}, ProcessId process = {},
            std::uint64_t timestamp = 0, std::string detail = {});
  void diagnostic(std::string what);
  template <class F>
  std::function<void()> guarded(F fn) {
    return [alive = std::weak_ptr<int>(alive_), fn = std::move(fn)]() mutable {
      if (!alive.expired()) fn();
    };
  }

  NodeConfig config_;
  Executor& ex_;
  Transport& transport_;
  std::shared_ptr<int> alive_ = std::make_shared<int>(0);

  std::uint64_t next_process_ = 1;
  ObjectId next_object_ = 1;
  std::map<ProcessId, std::unique_ptr<HandlerProcess>> handlers_;
  std::map<ProcessId, std::unique_ptr<ClientProcess>> clients_;
  std::optional<ObjectRef> index_;
  std::set<ProcessId> pump_scheduled_;

  MessageIdCounter ids_;
  std::map<LinkId, LinkState> links_;
  std::map<NodeId, LinkId> connections_;
  std::set<NodeId> failed_peers_;
  std::map<NodeId, NodeId> routes_;
  std::map<std::string, NodeId> address_peers_;
  std::map<MessageId, PendingReply> pending_;
  std::map<NodeId, Executor::TimerId> ping_timers_;

  PrelockGate gate_;
  std::map<ClientId, ReplyRoute> pending_prelocks_;
  std::map<ClientId, LockRecord> lock_records_;
  std::map<std::uint64_t, UnlockGroup> unlock_groups_;
  std::uint64_t next_unlock_group_ = 1;
  WaitRegistry waits_;
  CompensationRegistry compensation_;
  bool replaying_ = false;

  std::optional<ProcessId> proxy_process_;
  ProxyTable proxies_;
  RefCountTable refcounts_;

  NodeStats stats_;
  std::function<void(const NodeEvent&)> observer_;
};

}  // namespace dscoop
