#pragma once

// Deterministic in-memory network.
//
// Every attached node gets a SimEndpoint that is both its Executor and its
// Transport, so all node logic runs inside the simulator's single event loop.
// Events are ordered by (virtual time, class, sequence number); scripted
// faults use a lower class than everything else, so a fault scheduled for
// time t takes effect before any frame delivered at t. Each link is FIFO:
// jitter can delay a frame but never lets it overtake an earlier one.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dscoop/runtime.hpp"
#include "dscoop/wire.hpp"

namespace dscoop {

/// One delivered frame, recorded at the receiving end.
struct TraceRecord {
  Duration time{0};
  NodeId sender;
  NodeId dest;
  MessageKind kind = MessageKind::Request;
  /// Subject name for requests, OK or FAIL for replies.
  std::string subject;
  MessageId message_id = 0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct FaultAction {
  enum class Kind { DisconnectNode, DropNextFrame, DelayLink };

  Kind kind = Kind::DisconnectNode;
  NodeId node;
  NodeId peer;
  Duration delay{0};

  static FaultAction disconnect(NodeId n) { return {Kind::DisconnectNode, n, {}, Duration{0}}; }
  /// Drops the next frame delivered from `from` to `to`.
  static FaultAction drop_next(NodeId from, NodeId to) { return {Kind::DropNextFrame, from, to, Duration{0}}; }
  /// Adds extra latency to frames sent from `from` to `to` from now on.
  static FaultAction delay_link(NodeId from, NodeId to, Duration extra) {
    return {Kind::DelayLink, from, to, extra};
  }
};

struct Fault {
  std::optional<Duration> at;
  std::function<bool(const TraceRecord&)> after;
  FaultAction action;

  static Fault at_time(Duration t, FaultAction a) { return {t, {}, a}; }
  /// Fires right after the first delivery matching pred has been handled.
  static Fault after_delivery(std::function<bool(const TraceRecord&)> pred, FaultAction a) {
    return {std::nullopt, std::move(pred), a};
  }
};

using FaultScript = std::vector<Fault>;

class SimNetwork;

class SimEndpoint final : public Executor, public Transport {
 public:
  NodeId id() const noexcept { return id_; }
  std::string address() const;

  void post(std::function<void()> fn) override;
  TimerId schedule(Duration delay, std::function<void()> fn, bool daemon = false) override;
  void cancel(TimerId id) override;
  Duration now() const override;

  void bind(TransportListener* listener) override { listener_ = listener; }
  void dial(const std::string& address, DialCallback done) override;
  void send(LinkId link, Bytes frame) override;
  void close(LinkId link) override;

 private:
  friend class SimNetwork;
  SimEndpoint(SimNetwork& net, NodeId id) : net_(net), id_(id) {}

  SimNetwork& net_;
  NodeId id_;
  TransportListener* listener_ = nullptr;
};

class SimNetwork {
 public:
  struct Options {
    std::uint64_t seed = 1;
    Duration latency{1000};
    Duration jitter{0};
  };

  enum class StepResult { Ran, Quiescent };

  SimNetwork();
  explicit SimNetwork(Options options);
  ~SimNetwork();

  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  SimEndpoint& attach(NodeId id);
  SimEndpoint& endpoint(NodeId id);
  static std::string address_of(NodeId id);

  /// Base latency for frames from `from` to `to` (one direction).
  void set_latency(NodeId from, NodeId to, Duration latency);

  void inject(FaultScript script);

  /// Runs the earliest pending event. Quiescent when only daemon timers remain.
  StepResult step();
  const std::vector<TraceRecord>& run_until_quiescent(std::size_t max_events = 100'000'000);
  /// Runs every event (daemon timers included) up to and including time t.
  void run_until(Duration t);

  Duration now() const noexcept { return now_; }
  const std::vector<TraceRecord>& trace() const noexcept { return trace_; }
  std::string trace_csv() const;
  bool is_disconnected(NodeId id) const { return disconnected_.contains(id); }
  std::uint64_t events_processed() const noexcept { return events_processed_; }

 private:
  friend class SimEndpoint;

  struct Event {
    Duration time;
    int cls;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.cls != b.cls) return a.cls > b.cls;
      return a.seq > b.seq;
    }
  };

  struct Link {
    NodeId from;
    NodeId to;
    LinkId peer = 0;
    bool open = true;
    Duration last_arrival{0};
  };

  std::uint64_t push(Duration at, int cls, std::function<void()> fn, bool daemon);
  void run_event(Event& ev);
  Duration latency(NodeId from, NodeId to) const;
  Duration sample_jitter();
  void deliver(LinkId link, const Bytes& frame);
  void fire(const FaultAction& action);
  void disconnect(NodeId node);
  TransportListener* listener(NodeId id) const;

  Options options_;
  std::mt19937_64 rng_;
  Duration now_{0};
  std::uint64_t next_seq_ = 1;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  // Events not yet run or cancelled, with their daemon flag.
  std::unordered_map<std::uint64_t, bool> live_;
  std::uint64_t live_foreground_ = 0;
  std::uint64_t events_processed_ = 0;

  std::map<NodeId, std::unique_ptr<SimEndpoint>> endpoints_;
  std::map<LinkId, Link> links_;
  LinkId next_link_ = 1;
  std::map<std::pair<NodeId, NodeId>, Duration> latency_;
  std::map<std::pair<NodeId, NodeId>, Duration> extra_delay_;
  std::map<std::pair<NodeId, NodeId>, int> drop_next_;
  std::set<NodeId> disconnected_;

  std::vector<Fault> predicate_faults_;
  std::vector<TraceRecord> trace_;
};

}  // namespace dscoop
