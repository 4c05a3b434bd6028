#include "dscoop/simnet.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

#include "dscoop/errors.hpp"

namespace dscoop {

namespace {

constexpr int kFaultClass = 0;
constexpr int kNormalClass = 1;

std::optional<NodeId> parse_sim_address(const std::string& address) {
  constexpr std::string_view prefix = "sim:";
  if (!address.starts_with(prefix)) return std::nullopt;
  std::uint64_t v = 0;
  const char* first = address.data() + prefix.size();
  const char* last = address.data() + address.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || v == 0) return std::nullopt;
  return NodeId{v};
}

}  // namespace

std::string SimEndpoint::address() const { return SimNetwork::address_of(id_); }

void SimEndpoint::post(std::function<void()> fn) { net_.push(net_.now_, kNormalClass, std::move(fn), false); }

Executor::TimerId SimEndpoint::schedule(Duration delay, std::function<void()> fn, bool daemon) {
  return net_.push(net_.now_ + std::max(delay, Duration{0}), kNormalClass, std::move(fn), daemon);
}

void SimEndpoint::cancel(TimerId id) {
  auto it = net_.live_.find(id);
  if (it == net_.live_.end()) return;
  if (!it->second) --net_.live_foreground_;
  net_.live_.erase(it);
}

Duration SimEndpoint::now() const { return net_.now_; }

void SimEndpoint::dial(const std::string& address, DialCallback done) {
  const auto to = parse_sim_address(address);
  if (!to || !net_.endpoints_.contains(*to) || net_.is_disconnected(*to) || net_.is_disconnected(id_)) {
    post([done = std::move(done), address] { done(std::nullopt, "unreachable: " + address); });
    return;
  }
  const LinkId a = net_.next_link_++;
  const LinkId b = net_.next_link_++;
  net_.links_[a] = SimNetwork::Link{id_, *to, b, true, Duration{0}};
  net_.links_[b] = SimNetwork::Link{*to, id_, a, true, Duration{0}};
  const Duration at = net_.now_ + net_.latency(id_, *to);
  net_.links_[a].last_arrival = at;
  net_.links_[b].last_arrival = at;
  SimNetwork& net = net_;
  const NodeId target = *to;
  net_.push(at, kNormalClass, [&net, target, b] {
    if (!net.links_.at(b).open) return;
    if (auto* l = net.listener(target)) l->on_link_up(b);
  }, false);
  net_.push(at, kNormalClass, [&net, a, done = std::move(done)] {
    if (!net.links_.at(a).open) {
      done(std::nullopt, "link closed during connect");
      return;
    }
    done(a, {});
  }, false);
}

void SimEndpoint::send(LinkId link, Bytes frame) {
  auto it = net_.links_.find(link);
  if (it == net_.links_.end() || !it->second.open) return;
  auto& l = it->second;
  if (l.from != id_ || net_.is_disconnected(l.from) || net_.is_disconnected(l.to)) return;
  Duration lat = net_.latency(l.from, l.to) + net_.sample_jitter();
  if (auto d = net_.extra_delay_.find({l.from, l.to}); d != net_.extra_delay_.end()) lat += d->second;
  const Duration arrival = std::max(net_.now_ + lat, l.last_arrival);
  l.last_arrival = arrival;
  SimNetwork& net = net_;
  net_.push(arrival, kNormalClass, [&net, link, frame = std::move(frame)] { net.deliver(link, frame); }, false);
}

void SimEndpoint::close(LinkId link) {
  auto it = net_.links_.find(link);
  if (it == net_.links_.end() || !it->second.open) return;
  auto& l = it->second;
  l.open = false;
  // The peer learns about the close after every frame already in flight.
  const Duration at = std::max(net_.now_ + net_.latency(l.from, l.to), l.last_arrival);
  SimNetwork& net = net_;
  const LinkId peer_link = l.peer;
  const NodeId peer = l.to;
  net_.push(at, kNormalClass, [&net, peer_link, peer] {
    auto& pl = net.links_.at(peer_link);
    if (!pl.open) return;
    pl.open = false;
    if (auto* lst = net.listener(peer)) lst->on_link_down(peer_link);
  }, false);
}

SimNetwork::SimNetwork() : SimNetwork(Options{}) {}

SimNetwork::SimNetwork(Options options) : options_(options), rng_(options.seed) {}

SimNetwork::~SimNetwork() = default;

SimEndpoint& SimNetwork::attach(NodeId id) {
  if (id.value == 0) throw std::invalid_argument("node id 0 is reserved");
  auto [it, inserted] = endpoints_.try_emplace(id);
  if (!inserted) throw std::invalid_argument("node " + to_string(id) + " already attached");
  it->second.reset(new SimEndpoint(*this, id));
  return *it->second;
}

SimEndpoint& SimNetwork::endpoint(NodeId id) {
  auto it = endpoints_.find(id);
  if (it == endpoints_.end()) throw std::out_of_range("node " + to_string(id) + " not attached");
  return *it->second;
}

std::string SimNetwork::address_of(NodeId id) { return "sim:" + std::to_string(id.value); }

void SimNetwork::set_latency(NodeId from, NodeId to, Duration latency) { latency_[{from, to}] = latency; }

void SimNetwork::inject(FaultScript script) {
  for (auto& f : script) {
    if (f.at) {
      push(*f.at, kFaultClass, [this, action = f.action] { fire(action); }, false);
    } else if (f.after) {
      predicate_faults_.push_back(std::move(f));
    }
  }
}

std::uint64_t SimNetwork::push(Duration at, int cls, std::function<void()> fn, bool daemon) {
  const auto seq = next_seq_++;
  queue_.push(Event{std::max(at, now_), cls, seq, std::move(fn)});
  live_.emplace(seq, daemon);
  if (!daemon) ++live_foreground_;
  return seq;
}

void SimNetwork::run_event(Event& ev) {
  auto it = live_.find(ev.seq);
  if (it == live_.end()) return;  // cancelled
  if (!it->second) --live_foreground_;
  live_.erase(it);
  now_ = ev.time;
  ++events_processed_;
  ev.fn();
}

SimNetwork::StepResult SimNetwork::step() {
  while (!queue_.empty()) {
    if (live_foreground_ == 0) return StepResult::Quiescent;
    Event ev = queue_.top();
    queue_.pop();
    if (!live_.contains(ev.seq)) continue;
    run_event(ev);
    return StepResult::Ran;
  }
  return StepResult::Quiescent;
}

const std::vector<TraceRecord>& SimNetwork::run_until_quiescent(std::size_t max_events) {
  for (std::size_t i = 0; i < max_events; ++i) {
    if (step() == StepResult::Quiescent) return trace_;
  }
  throw std::runtime_error("simulation did not quiesce within " + std::to_string(max_events) + " events");
}

void SimNetwork::run_until(Duration t) {
  while (!queue_.empty() && queue_.top().time <= t) {
    Event ev = queue_.top();
    queue_.pop();
    run_event(ev);
  }
  now_ = std::max(now_, t);
}

Duration SimNetwork::latency(NodeId from, NodeId to) const {
  auto it = latency_.find({from, to});
  return it == latency_.end() ? options_.latency : it->second;
}

Duration SimNetwork::sample_jitter() {
  const auto j = static_cast<std::uint64_t>(options_.jitter.count());
  if (j == 0) return Duration{0};
  return Duration{static_cast<Duration::rep>(rng_() % (j + 1))};
}

TransportListener* SimNetwork::listener(NodeId id) const {
  auto it = endpoints_.find(id);
  return it == endpoints_.end() ? nullptr : it->second->listener_;
}

void SimNetwork::deliver(LinkId link, const Bytes& frame) {
  const auto& l = links_.at(link);
  if (!links_.at(l.peer).open) return;
  if (is_disconnected(l.from) || is_disconnected(l.to)) return;
  if (auto d = drop_next_.find({l.from, l.to}); d != drop_next_.end() && d->second > 0) {
    if (--d->second == 0) drop_next_.erase(d);
    return;
  }

  TraceRecord rec{now_, l.from, l.to, MessageKind::Request, "?", 0};
  try {
    const auto hdr = peek_header(frame);
    rec.kind = hdr.kind;
    rec.message_id = hdr.message_id;
    if (hdr.kind == MessageKind::Request) {
      rec.subject = std::string(subject_name(static_cast<Subject>(hdr.subject_or_status)));
    } else {
      rec.subject = hdr.subject_or_status == 0 ? "OK" : "FAIL";
    }
  } catch (const Error&) {
  }
  trace_.push_back(rec);

  if (auto* lst = listener(l.to)) lst->on_frame(l.peer, frame);

  for (auto& f : predicate_faults_) {
    if (f.after && f.after(rec)) {
      f.after = nullptr;
      fire(f.action);
    }
  }
  std::erase_if(predicate_faults_, [](const Fault& f) { return !f.after; });
}

void SimNetwork::fire(const FaultAction& action) {
  switch (action.kind) {
    case FaultAction::Kind::DisconnectNode:
      disconnect(action.node);
      break;
    case FaultAction::Kind::DropNextFrame:
      ++drop_next_[{action.node, action.peer}];
      break;
    case FaultAction::Kind::DelayLink:
      extra_delay_[{action.node, action.peer}] += action.delay;
      break;
  }
}

void SimNetwork::disconnect(NodeId node) {
  if (!disconnected_.insert(node).second) return;
  for (auto& [id, l] : links_) {
    if (!l.open || (l.from != node && l.to != node)) continue;
    l.open = false;
    const NodeId owner = l.from;
    const LinkId lid = id;
    push(now_, kNormalClass, [this, owner, lid] {
      if (auto* lst = listener(owner)) lst->on_link_down(lid);
    }, false);
  }
}

std::string SimNetwork::trace_csv() const {
  std::ostringstream os;
  os << "time,sender,dest,kind,subject,message_id\n";
  for (const auto& r : trace_) {
    os << r.time.count() << ',' << r.sender.value << ',' << r.dest.value << ','
       << (r.kind == MessageKind::Request ? "REQ" : "REP") << ',' << r.subject << ',' << r.message_id << '\n';
  }
  return os.str();
}

}  // namespace dscoop
