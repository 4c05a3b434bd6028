#include "dscoop/node.hpp"

#include <algorithm>
#include <stdexcept>

#include "dscoop/block.hpp"

namespace dscoop {

std::uint64_t NodeStats::total_requests() const {
  std::uint64_t n = 0;
  for (const auto& [subject, count] : requests_sent) n += count;
  return n;
}

std::string_view event_kind_name(NodeEvent::Kind kind) noexcept {
  switch (kind) {
    case NodeEvent::Kind::GateAdmitted: return "gate-admitted";
    case NodeEvent::Kind::GateQueued: return "gate-queued";
    case NodeEvent::Kind::Locked: return "locked";
    case NodeEvent::Kind::Unlocked: return "unlocked";
    case NodeEvent::Kind::Executed: return "executed";
    case NodeEvent::Kind::CompensationRegistered: return "compensation-registered";
    case NodeEvent::Kind::Compensated: return "compensated";
    case NodeEvent::Kind::PeerFailed: return "peer-failed";
    case NodeEvent::Kind::Diagnostic: return "diagnostic";
  }
  return "unknown";
}

void expect_ok(const ReplyMessage& reply) {
  if (reply.is_ok()) return;
  const std::string reason = reply.reason();
  throw Error(errc_from_name(reason), reason.empty() ? std::string("FAIL") : reason);
}

namespace detail {

// Context for a method executing on a handler of this node.
class NodeCallContext final : public CallContext {
 public:
  NodeCallContext(Node& node, HandlerProcess& h, std::optional<ClientId> client, ObjectRef self, bool replay)
      : node_(node), h_(h), client_(client), self_(self), replay_(replay) {}

  ObjectRef self() const override { return self_; }
  std::optional<ClientId> client() const override { return client_; }

  using CallContext::compensate;
  void compensate(CapturedCall undo) override {
    // Only remote clients can vanish mid-block; replays never register.
    if (replay_ || !client_ || client_->node == node_.id()) return;
    if (undo.target.node != node_.id() || undo.target.process != h_.id()) {
      throw Error(Errc::ProtocolViolation, "compensation must target the executing process");
    }
    const auto ts = node_.compensation_.add({*client_, h_.id()}, std::move(undo));
    node_.emit(NodeEvent::Kind::CompensationRegistered, client_, h_.id(), ts);
  }

  Value call(const ObjectRef& target, const std::string& method, Values args) override {
    if (target.node != node_.id() || target.process != h_.id()) {
      throw Error(Errc::ProtocolViolation, "direct calls must stay on the executing process");
    }
    NodeCallContext inner(node_, h_, client_, target, replay_);
    return h_.execute(target.object, method, args, inner);
  }

  std::unique_ptr<NestedBlock> open_block(const std::vector<ObjectRef>& targets) override;

 private:
  Node& node_;
  HandlerProcess& h_;
  std::optional<ClientId> client_;
  ObjectRef self_;
  bool replay_;
};

// Block opened from a method body over other processes of the same node.
// Its subqueues are reserved at once: the body never waits, so it cannot
// take part in a wait cycle.
class LocalNestedBlock final : public CallContext::NestedBlock {
 public:
  LocalNestedBlock(Node& node, ClientId client, std::set<ProcessId> processes)
      : node_(node), client_(client), processes_(std::move(processes)) {}

  ~LocalNestedBlock() override {
    if (!closed_) close();
  }

  void command(const ObjectRef& target, const std::string& method, Values args) override {
    if (closed_) throw Error(Errc::BlockClosed);
    if (target.node != node_.id() || !processes_.contains(target.process)) {
      throw Error(Errc::TargetNotInBlock, to_string(target));
    }
    node_.enqueue_local(target.process, client_,
                        LoggedCall{target, method, std::move(args), CallKind::AsyncCommand, std::nullopt, std::nullopt});
  }

  void close() override {
    if (closed_) throw Error(Errc::BlockClosed);
    closed_ = true;
    for (auto p : processes_) {
      auto* h = node_.handler(p);
      if (h && h->qoq().has_open(client_)) {
        h->qoq().append_unlock(client_, UnlockMarker{0});
        node_.schedule_pump(p);
      }
    }
  }

 private:
  Node& node_;
  ClientId client_;
  std::set<ProcessId> processes_;
  bool closed_ = false;
};

std::unique_ptr<CallContext::NestedBlock> NodeCallContext::open_block(const std::vector<ObjectRef>& targets) {
  const ClientId nested{node_.id(), h_.id()};
  std::set<ProcessId> processes;
  for (const auto& t : targets) {
    if (t.node != node_.id()) throw Error(Errc::ProtocolViolation, "blocks inside methods are node-local");
    if (t.process == h_.id()) throw Error(Errc::ProtocolViolation, "block over the executing process");
    if (!node_.handler(t.process)) throw Error(Errc::NoSuchProcess, to_string(t));
    processes.insert(t.process);
  }
  for (auto p : processes) node_.handler(p)->qoq().ensure_subqueue(nested);
  return std::make_unique<LocalNestedBlock>(node_, nested, std::move(processes));
}

}  // namespace detail

namespace {

RequestMessage simple_request(Subject subject, ProcessId client_process = {}) {
  RequestMessage m;
  m.subject = subject;
  m.client_process = client_process;
  return m;
}

ReplyMessage fail_with(Errc code, std::string_view what) { return ReplyMessage::fail(fail_reason(code, what)); }

}  // namespace

Node::Node(NodeConfig config, Executor& executor, Transport& transport)
    : config_(std::move(config)), ex_(executor), transport_(transport) {
  if (config_.id.value == 0) throw std::invalid_argument("node id 0 is reserved");
  if (config_.listen_address && !config_.index_factory) {
    throw std::invalid_argument("a listening node must provide an index factory");
  }
  transport_.bind(this);
}

Node::~Node() {
  alive_.reset();
  for (auto& [peer, timer] : ping_timers_) ex_.cancel(timer);
  for (auto& [id, p] : pending_) {
    if (p.timer) ex_.cancel(*p.timer);
  }
  transport_.bind(nullptr);
}

ProcessId Node::create_handler() {
  const ProcessId p{next_process_++};
  handlers_.emplace(p, std::make_unique<HandlerProcess>(p));
  return p;
}

ObjectRef Node::create_object(ProcessId handler_id, std::unique_ptr<Object> state,
                              std::shared_ptr<const MethodTable> methods) {
  auto* h = handler(handler_id);
  if (!h) throw Error(Errc::NoSuchProcess, "no handler " + std::to_string(handler_id.value));
  const ObjectId oid = next_object_++;
  h->add_object(oid, ObjectSlot{std::move(state), std::move(methods)});
  return ObjectRef{id(), handler_id, oid};
}

HandlerProcess* Node::handler(ProcessId p) {
  auto it = handlers_.find(p);
  return it == handlers_.end() ? nullptr : it->second.get();
}

const HandlerProcess* Node::handler(ProcessId p) const {
  auto it = handlers_.find(p);
  return it == handlers_.end() ? nullptr : it->second.get();
}

std::vector<ProcessId> Node::handler_ids() const {
  std::vector<ProcessId> out;
  for (const auto& [p, h] : handlers_) out.push_back(p);
  return out;
}

Value Node::invoke_direct(const ObjectRef& ref, const std::string& method, const Values& args) {
  auto* h = ref.node == id() ? handler(ref.process) : nullptr;
  if (!h) throw Error(Errc::NoSuchObject, to_string(ref));
  detail::NodeCallContext ctx(*this, *h, std::nullopt, ref, false);
  Value v = h->execute(ref.object, method, args, ctx);
  notify_version(*h);
  return v;
}

ClientProcess& Node::create_client() {
  const ProcessId p{next_process_++};
  auto [it, _] = clients_.emplace(p, std::make_unique<ClientProcess>(*this, p));
  return *it->second;
}

std::vector<NodeId> Node::peers() const {
  std::vector<NodeId> out;
  for (const auto& [peer, link] : connections_) out.push_back(peer);
  return out;
}

void Node::add_route(NodeId destination, NodeId via) { routes_[destination] = via; }

void Node::disconnect(NodeId peer) { handle_peer_failure(peer, "closed locally"); }

const LockRecord* Node::lock_record(ClientId c) const {
  auto it = lock_records_.find(c);
  return it == lock_records_.end() ? nullptr : &it->second;
}

bool Node::busy() const {
  return std::any_of(handlers_.begin(), handlers_.end(), [](const auto& kv) { return !kv.second->qoq().empty(); });
}

// ---------------------------------------------------------------------------
// Outbound

AsyncResult<ReplyMessage> Node::send_request(NodeId dest, RequestMessage msg, std::optional<Duration> timeout,
                                             Errc timeout_code, bool daemon) {
  AsyncResult<ReplyMessage> result(ex_);
  const MessageId mid = ids_.next();

  if (dest == id()) {
    pending_.emplace(mid, PendingReply{dest, std::nullopt, result, std::nullopt});
    handle_request(Envelope{mid, id(), id(), std::move(msg)}, ReplyRoute{id(), mid});
    return result;
  }

  const auto link = route_link(dest);
  if (!link) {
    const bool failed = failed_peers_.contains(dest) ||
                        (routes_.contains(dest) && failed_peers_.contains(routes_.at(dest)));
    result.set_error(std::make_exception_ptr(
        Error(failed ? Errc::PeerFailure : Errc::NoRoute, "no connection to " + to_string(dest))));
    return result;
  }

  const Subject subject = msg.subject;
  if (is_call_subject(subject)) grant_outgoing(msg.args, dest);
  PendingReply pending{dest, *link, result, std::nullopt};
  if (timeout) {
    pending.timer = ex_.schedule(
        *timeout,
        guarded([this, mid, timeout_code] {
          auto it = pending_.find(mid);
          if (it == pending_.end()) return;
          auto r = it->second.result;
          pending_.erase(it);
          r.set_error(std::make_exception_ptr(Error(timeout_code, "no reply within timeout")));
        }),
        daemon);
  }
  pending_.emplace(mid, std::move(pending));
  ++stats_.requests_sent[subject];
  send_on_link(*link, Envelope{mid, id(), dest, std::move(msg)});
  return result;
}

void Node::send_reply(const ReplyRoute& route, ReplyMessage reply) {
  if (route.client_node == id()) {
    complete_pending(route.message_id, std::move(reply));
    return;
  }
  const auto link = route_link(route.client_node);
  if (!link) {
    diagnostic("reply to unreachable node " + to_string(route.client_node));
    return;
  }
  if (reply.is_ok()) grant_outgoing(reply.results, route.client_node);
  ++stats_.replies_sent;
  send_on_link(*link, Envelope{route.message_id, id(), route.client_node, std::move(reply)});
}

void Node::send_on_link(LinkId link, const Envelope& env) { transport_.send(link, encode(env)); }

std::optional<LinkId> Node::route_link(NodeId dest) const {
  if (auto it = connections_.find(dest); it != connections_.end()) return it->second;
  if (auto r = routes_.find(dest); r != routes_.end()) {
    if (auto it = connections_.find(r->second); it != connections_.end()) return it->second;
  }
  return std::nullopt;
}

void Node::complete_pending(MessageId mid, ReplyMessage reply) {
  auto it = pending_.find(mid);
  if (it == pending_.end()) {
    diagnostic("reply for unknown message id " + std::to_string(mid));
    return;
  }
  if (it->second.timer) ex_.cancel(*it->second.timer);
  auto r = it->second.result;
  pending_.erase(it);
  r.set_value(std::move(reply));
}

void Node::fail_pending_if(const std::function<bool(const PendingReply&)>& pred, Errc code, const std::string& why) {
  std::vector<AsyncResult<ReplyMessage>> failed;
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (pred(it->second)) {
      if (it->second.timer) ex_.cancel(*it->second.timer);
      failed.push_back(it->second.result);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto& r : failed) r.set_error(std::make_exception_ptr(Error(code, why)));
}

// ---------------------------------------------------------------------------
// Inbound

void Node::on_link_up(LinkId link) { links_[link] = LinkState{}; }

void Node::on_link_down(LinkId link) {
  auto it = links_.find(link);
  if (it == links_.end()) return;
  const auto peer = it->second.peer;
  links_.erase(it);
  fail_pending_if([link](const PendingReply& p) { return p.link == link; }, Errc::PeerFailure, "link closed");
  if (peer) {
    auto c = connections_.find(*peer);
    if (c != connections_.end() && c->second == link) handle_peer_failure(*peer, "connection closed");
  }
}

void Node::on_frame(LinkId link, Bytes frame) {
  ++stats_.frames_received;
  FrameHeader hdr{};
  try {
    hdr = peek_header(frame);
  } catch (const Error& e) {
    diagnostic(std::string("undecodable frame: ") + e.what());
    return;
  }

  const auto reply_on_link = [&](ReplyMessage reply) {
    ++stats_.replies_sent;
    send_on_link(link, Envelope{hdr.message_id, id(), hdr.sender, std::move(reply)});
  };

  if (hdr.destination != id() && hdr.destination.value != 0) {
    const auto out = route_link(hdr.destination);
    if (out && *out != link) {
      ++stats_.frames_relayed;
      if (auto ls = links_.find(link); ls != links_.end() && ls->second.peer && hdr.sender != *ls->second.peer &&
                                       !connections_.contains(hdr.sender)) {
        routes_[hdr.sender] = *ls->second.peer;
      }
      transport_.send(*out, std::move(frame));
    } else if (hdr.kind == MessageKind::Request) {
      reply_on_link(fail_with(Errc::NoRoute, "no route to " + to_string(hdr.destination)));
    } else {
      diagnostic("dropping reply for unreachable " + to_string(hdr.destination));
    }
    return;
  }

  Envelope env;
  try {
    env = decode(frame);
  } catch (const Error& e) {
    diagnostic(std::string("malformed frame: ") + e.what());
    if (hdr.kind == MessageKind::Request) reply_on_link(fail_with(e.code(), e.what()));
    return;
  }

  auto ls = links_.find(link);
  if (ls == links_.end()) return;

  if (env.kind() == MessageKind::Request && env.request().subject == Subject::Hello) {
    handle_hello(link, env);
    return;
  }

  if (!ls->second.peer) {
    // Before the handshake completes only the reply to our HELLO is legal.
    if (env.kind() == MessageKind::Reply) {
      auto it = pending_.find(env.message_id);
      if (it != pending_.end() && it->second.link == link) {
        complete_pending(env.message_id, std::move(env.reply()));
        return;
      }
    }
    diagnostic("frame before HELLO on link " + std::to_string(link));
    if (env.kind() == MessageKind::Request) reply_on_link(fail_with(Errc::ProtocolViolation, "HELLO first"));
    return;
  }

  const NodeId via = *ls->second.peer;
  if (env.sender != via && !connections_.contains(env.sender)) routes_[env.sender] = via;

  if (env.kind() == MessageKind::Reply) {
    if (env.reply().is_ok()) ingest_incoming(env.reply().results);
    complete_pending(env.message_id, std::move(env.reply()));
    return;
  }
  if (is_call_subject(env.request().subject)) ingest_incoming(env.request().args);
  handle_request(env, ReplyRoute{env.sender, env.message_id});
}

void Node::handle_hello(LinkId link, const Envelope& env) {
  const auto version = env.request().args.at(0).as_nat();
  ++stats_.replies_sent;
  if (version != kProtocolVersion) {
    send_on_link(link, Envelope{env.message_id, id(), env.sender,
                                fail_with(Errc::VersionMismatch, "VersionMismatch: peer speaks " +
                                                                     std::to_string(version) + ", expected " +
                                                                     std::to_string(kProtocolVersion))});
    return;
  }
  adopt_link(link, env.sender);
  send_on_link(link, Envelope{env.message_id, id(), env.sender, ReplyMessage::ok({Value::nat(id().value)})});
}

void Node::handle_request(const Envelope& env, const ReplyRoute& route) {
  const auto& req = env.request();
  const ClientId client{env.sender, req.client_process};
  try {
    switch (req.subject) {
      case Subject::Hello:
        send_reply(route, fail_with(Errc::ProtocolViolation, "HELLO outside a handshake"));
        break;
      case Subject::Ping:
        send_reply(route, ReplyMessage::ok());
        break;
      case Subject::Index:
        if (!config_.index_factory) throw Error(Errc::NoIndex);
        if (!index_ || config_.fresh_index_per_request) index_ = config_.index_factory(*this);
        send_reply(route, ReplyMessage::ok({Value::ref(*index_)}));
        break;
      case Subject::Prelock:
        handle_prelock(client, req, route);
        break;
      case Subject::Lock:
        handle_lock(client, req, route);
        break;
      case Subject::Call:
      case Subject::SCall:
      case Subject::QCall:
        handle_call(client, req, route);
        break;
      case Subject::Unlock:
        handle_unlock(client, req, route);
        break;
      case Subject::Await:
        handle_await(client, req, route);
        break;
      case Subject::Ready:
        handle_ready(req.client_process);
        send_reply(route, ReplyMessage::ok());
        break;
      case Subject::Share:
      case Subject::Release: {
        const auto& ref = req.targets.at(0);
        if (ref.node != id()) throw Error(Errc::NoRoute, to_string(ref) + " is not owned here");
        const auto count = req.args.at(0).as_nat();
        if (req.subject == Subject::Share) {
          refcounts_.grant(ref, env.sender, count);
        } else {
          refcounts_.release(ref, env.sender, count);
        }
        send_reply(route, ReplyMessage::ok());
        break;
      }
    }
  } catch (const Error& e) {
    send_reply(route, fail_with(e.code(), e.what()));
  } catch (const std::exception& e) {
    send_reply(route, fail_with(Errc::RemoteFailure, e.what()));
  }
}

std::vector<ProcessId> Node::local_processes(const RequestMessage& req) const {
  std::vector<ProcessId> out;
  for (const auto& t : req.targets) {
    if (t.node != id()) throw Error(Errc::NoRoute, to_string(t) + " is not hosted here");
    if (!handler(t.process)) throw Error(Errc::NoSuchProcess, to_string(t));
    out.push_back(t.process);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void Node::handle_prelock(ClientId client, const RequestMessage& req, const ReplyRoute& route) {
  local_processes(req);
  if (gate_.request(client) == PrelockGate::Admission::Admitted) {
    emit(NodeEvent::Kind::GateAdmitted, client);
    send_reply(route, ReplyMessage::ok());
  } else {
    pending_prelocks_[client] = route;
    emit(NodeEvent::Kind::GateQueued, client);
  }
}

void Node::admit(std::optional<ClientId> next) {
  if (!next) return;
  auto it = pending_prelocks_.find(*next);
  if (it == pending_prelocks_.end()) return;
  const ReplyRoute route = it->second;
  pending_prelocks_.erase(it);
  emit(NodeEvent::Kind::GateAdmitted, *next);
  send_reply(route, ReplyMessage::ok());
}

void Node::handle_lock(ClientId client, const RequestMessage& req, const ReplyRoute& route) {
  auto processes = local_processes(req);
  if (!gate_.is_holder(client)) throw Error(Errc::ProtocolViolation, "LOCK without an admitted PRELOCK");
  if (client.node != id() && !proxy_process_) proxy_process_ = ProcessId{next_process_++};
  for (auto p : processes) handler(p)->qoq().ensure_subqueue(client);
  lock_records_[client].push(std::move(processes));
  emit(NodeEvent::Kind::Locked, client);
  const auto next = gate_.on_lock(client);
  send_reply(route, ReplyMessage::ok());
  admit(next);
}

void Node::handle_call(ClientId client, const RequestMessage& req, const ReplyRoute& route) {
  const ObjectRef target = req.targets.at(0);
  if (target.node != id()) throw Error(Errc::NoRoute, to_string(target) + " is not hosted here");
  auto* h = handler(target.process);
  if (!h) throw Error(Errc::NoSuchProcess, to_string(target));
  if (!h->qoq().has_open(client)) throw Error(Errc::NoActiveLock, to_string(client) + " holds no subqueue");
  const std::string& method = req.args.at(0).as_text();
  h->resolve(target.object, method);
  if (req.compensation &&
      (req.compensation->target.node != id() || req.compensation->target.process != target.process)) {
    throw Error(Errc::ProtocolViolation, "compensation must target the called process");
  }

  const CallKind kind = req.subject == Subject::Call    ? CallKind::AsyncCommand
                        : req.subject == Subject::SCall ? CallKind::SyncCommand
                                                        : CallKind::Query;
  LoggedCall call{target,
                  method,
                  Values(req.args.begin() + 1, req.args.end()),
                  kind,
                  kind == CallKind::AsyncCommand ? std::nullopt : std::optional<ReplyRoute>(route),
                  req.compensation};
  h->qoq().enqueue(client, std::move(call));
  if (kind == CallKind::AsyncCommand) send_reply(route, ReplyMessage::ok());
  schedule_pump(h->id());
}

void Node::handle_unlock(ClientId client, const RequestMessage& req, const ReplyRoute& route) {
  auto processes = local_processes(req);
  // An UNLOCK while still at the gate aborts a half-open block.
  if (gate_.involves(client)) {
    pending_prelocks_.erase(client);
    admit(gate_.withdraw(client));
    send_reply(route, ReplyMessage::ok());
    return;
  }
  auto rec = lock_records_.find(client);
  if (rec == lock_records_.end() || rec->second.empty()) {
    throw Error(Errc::NoActiveLock, to_string(client) + " holds no lock here");
  }
  if (rec->second.top() != processes) throw Error(Errc::ProtocolViolation, "UNLOCK does not match the last LOCK");
  rec->second.pop();
  if (rec->second.empty()) lock_records_.erase(rec);

  const auto group = next_unlock_group_++;
  UnlockGroup g{client, 0, route};
  for (auto p : processes) {
    auto* h = handler(p);
    if (h && h->qoq().has_open(client)) {
      h->qoq().append_unlock(client, UnlockMarker{group});
      ++g.remaining;
      schedule_pump(p);
    }
  }
  if (g.remaining == 0) {
    emit(NodeEvent::Kind::Unlocked, client);
    send_reply(route, ReplyMessage::ok());
    return;
  }
  unlock_groups_.emplace(group, g);
}

void Node::handle_await(ClientId client, const RequestMessage& req, const ReplyRoute& route) {
  std::map<ProcessId, std::uint64_t> versions;
  for (auto p : local_processes(req)) versions[p] = handler(p)->version();
  waits_.arm(client, std::move(versions));
  send_reply(route, ReplyMessage::ok());
}

void Node::handle_ready(ProcessId client_process) {
  auto it = clients_.find(client_process);
  if (it == clients_.end()) throw Error(Errc::NoSuchProcess, "no client " + std::to_string(client_process.value));
  auto& c = *it->second;
  if (c.ready_) {
    auto r = *c.ready_;
    c.ready_.reset();
    r.set_value(Unit{});
  }
}

// ---------------------------------------------------------------------------
// Connections and liveness

Task<NodeId> Node::connect(std::string address) {
  if (auto it = address_peers_.find(address); it != address_peers_.end() && connections_.contains(it->second)) {
    co_return it->second;
  }

  AsyncResult<LinkId> dialed(ex_);
  transport_.dial(address, [dialed](std::optional<LinkId> link, std::string error) mutable {
    if (link) {
      dialed.set_value(*link);
    } else {
      dialed.set_error(std::make_exception_ptr(Error(Errc::TransportError, error)));
    }
  });
  const LinkId link = co_await dialed;
  links_[link] = LinkState{true, std::nullopt, address};

  AsyncResult<ReplyMessage> handshake(ex_);
  const MessageId mid = ids_.next();
  PendingReply pending{std::nullopt, link, handshake, std::nullopt};
  pending.timer = ex_.schedule(config_.prelock_timeout, guarded([this, mid] {
                                 auto it = pending_.find(mid);
                                 if (it == pending_.end()) return;
                                 auto r = it->second.result;
                                 pending_.erase(it);
                                 r.set_error(std::make_exception_ptr(Error(Errc::TransportError, "HELLO timed out")));
                               }));
  pending_.emplace(mid, std::move(pending));
  RequestMessage hello = simple_request(Subject::Hello);
  hello.args.push_back(Value::nat(kProtocolVersion));
  ++stats_.requests_sent[Subject::Hello];
  send_on_link(link, Envelope{mid, id(), NodeId{0}, std::move(hello)});

  ReplyMessage reply = co_await handshake;
  expect_ok(reply);
  const NodeId peer{reply.results.at(0).as_nat()};
  if (!links_.contains(link)) {
    // Lost a simultaneous-connect race; the surviving link is already registered.
    if (connections_.contains(peer)) co_return peer;
    throw Error(Errc::PeerFailure, "link closed during handshake");
  }
  adopt_link(link, peer);
  address_peers_[address] = peer;
  co_return peer;
}

void Node::adopt_link(LinkId link, NodeId peer) {
  links_[link].peer = peer;
  failed_peers_.erase(peer);
  auto it = connections_.find(peer);
  if (it == connections_.end()) {
    connections_[peer] = link;
    routes_.erase(peer);
    start_pinging(peer);
    return;
  }
  if (it->second == link) return;

  // Two links to the same peer: keep the one dialed by the lower node id.
  const LinkId existing = it->second;
  const auto dialer = [&](LinkId l) { return links_[l].outbound ? id() : peer; };
  const NodeId preferred = std::min(id(), peer);
  LinkId loser = link;
  if (dialer(link) == preferred && dialer(existing) != preferred) {
    loser = existing;
    it->second = link;
  }
  // Close after the current handler finishes so a pending HELLO reply goes out first.
  ex_.post(guarded([this, loser] {
    if (!links_.erase(loser)) return;
    transport_.close(loser);
    fail_pending_if([loser](const PendingReply& p) { return p.link == loser; }, Errc::PeerFailure,
                    "duplicate link closed");
  }));
}

Task<ObjectRef> Node::request_index(NodeId peer) {
  auto r = send_request(peer, simple_request(Subject::Index));
  ReplyMessage reply = co_await r;
  expect_ok(reply);
  co_return reply.results.at(0).as_ref();
}

Task<void> Node::ping(NodeId peer) {
  auto r = send_request(peer, simple_request(Subject::Ping), config_.prelock_timeout);
  ReplyMessage reply = co_await r;
  expect_ok(reply);
}

void Node::start_pinging(NodeId peer) {
  if (config_.ping_interval.count() <= 0) return;
  if (auto it = ping_timers_.find(peer); it != ping_timers_.end()) ex_.cancel(it->second);
  ping_timers_[peer] = ex_.schedule(
      config_.ping_interval,
      guarded([this, peer] {
        ping_timers_.erase(peer);
        if (connections_.contains(peer)) spawn(ex_, ping_once(peer));
      }),
      true);
}

Task<void> Node::ping_once(NodeId peer) {
  const Duration timeout = config_.liveness_timeout.value_or(config_.ping_interval * 2);
  auto r = send_request(peer, simple_request(Subject::Ping), timeout, Errc::PeerFailure, true);
  bool alive = true;
  try {
    ReplyMessage reply = co_await r;
    alive = reply.is_ok();
  } catch (const Error&) {
    alive = false;
  }
  if (!connections_.contains(peer)) co_return;
  if (alive) {
    start_pinging(peer);
  } else {
    handle_peer_failure(peer, "no PING reply");
  }
}

void Node::handle_peer_failure(NodeId peer, const std::string& why) {
  auto c = connections_.find(peer);
  if (c == connections_.end()) return;
  const LinkId link = c->second;
  connections_.erase(c);
  failed_peers_.insert(peer);
  if (auto t = ping_timers_.find(peer); t != ping_timers_.end()) {
    ex_.cancel(t->second);
    ping_timers_.erase(t);
  }
  if (links_.erase(link)) transport_.close(link);
  std::erase_if(routes_, [peer](const auto& kv) { return kv.first == peer || kv.second == peer; });
  emit(NodeEvent::Kind::PeerFailed, std::nullopt, {}, 0, to_string(peer) + ": " + why);

  fail_pending_if([peer, link](const PendingReply& p) { return p.peer == peer || p.link == link; },
                  Errc::PeerFailure, to_string(peer) + " failed: " + why);

  for (auto& [pid, client] : clients_) {
    if (client->ready_ && client->ready_nodes_.contains(peer)) {
      auto r = *client->ready_;
      client->ready_.reset();
      r.set_error(std::make_exception_ptr(Error(Errc::PeerFailure, to_string(peer) + " failed while waiting")));
    }
  }

  std::set<ClientId> victims;
  const auto consider = [&](ClientId c) {
    if (c.node == peer) victims.insert(c);
  };
  if (gate_.holder()) consider(*gate_.holder());
  for (auto w : gate_.waiters()) consider(w);
  for (const auto& [c, rec] : lock_records_) consider(c);
  for (const auto& [pid, h] : handlers_) {
    for (const auto& q : h->qoq().subqueues()) consider(q.owner);
  }
  for (auto c : compensation_.clients()) consider(c);
  for (auto c : waits_.clients()) consider(c);
  for (auto c : victims) release_client(c);
}

void Node::release_client(ClientId client) {
  if (gate_.involves(client)) {
    pending_prelocks_.erase(client);
    admit(gate_.withdraw(client));
  }
  pending_prelocks_.erase(client);
  waits_.drop(client);

  // Calls that never ran need no undo; drop them before replaying.
  std::vector<ProcessId> touched;
  for (auto& [pid, h] : handlers_) {
    const auto& qs = h->qoq().subqueues();
    if (std::none_of(qs.begin(), qs.end(), [&](const Subqueue& q) { return q.owner == client; })) continue;
    h->qoq().drop_client(client);
    touched.push_back(pid);
  }

  // The client's subqueue was current on every handler it executed calls on,
  // so the replay runs before any other client's calls there.
  const auto entries = compensation_.take_for_replay(client);
  for (const auto& e : entries) {
    auto* h = handler(e.call.target.process);
    if (!h) {
      diagnostic("compensation target vanished: " + to_string(e.call.target));
      continue;
    }
    detail::NodeCallContext ctx(*this, *h, client, e.call.target, true);
    try {
      h->execute(e.call.target.object, e.call.method, e.call.args, ctx);
    } catch (const std::exception& ex) {
      diagnostic("compensation " + e.call.method + " failed: " + ex.what());
    }
    emit(NodeEvent::Kind::Compensated, client, h->id(), e.timestamp, e.call.method);
    notify_version(*h);
  }

  lock_records_.erase(client);
  std::erase_if(unlock_groups_, [client](const auto& kv) { return kv.second.client == client; });
  for (auto p : touched) schedule_pump(p);
}

// ---------------------------------------------------------------------------
// Handler scheduling

void Node::schedule_pump(ProcessId p) {
  if (!pump_scheduled_.insert(p).second) return;
  ex_.post(guarded([this, p] {
    pump_scheduled_.erase(p);
    auto* h = handler(p);
    if (!h) return;
    if (handler_step(*h, *this) != StepOutcome::Idle) schedule_pump(p);
  }));
}

void Node::notify_version(HandlerProcess& h) {
  for (auto c : waits_.on_version(h.id(), h.version())) {
    (void)send_request(c.node, simple_request(Subject::Ready, c.process));
  }
}

void Node::enqueue_local(ProcessId p, ClientId client, LoggedCall call) {
  auto* h = handler(p);
  if (!h) throw Error(Errc::NoSuchProcess, "no handler " + std::to_string(p.value));
  h->qoq().enqueue(client, std::move(call));
  schedule_pump(p);
}

std::unique_ptr<CallContext> Node::begin_call(HandlerProcess& h, ClientId client, const LoggedCall& call) {
  if (call.compensation && client.node != id()) {
    const CompensationKey key{client, h.id()};
    compensation_.stage(key, *call.compensation);
    if (auto ts = compensation_.commit_staged(key)) emit(NodeEvent::Kind::CompensationRegistered, client, h.id(), *ts);
  }
  return std::make_unique<detail::NodeCallContext>(*this, h, client, call.target, false);
}

void Node::on_executed(HandlerProcess& h, ClientId client, const LoggedCall& call, Value result) {
  emit(NodeEvent::Kind::Executed, client, h.id(), 0, call.method);
  if (call.reply_route) {
    send_reply(*call.reply_route,
               call.kind == CallKind::Query ? ReplyMessage::ok({std::move(result)}) : ReplyMessage::ok());
  }
  notify_version(h);
}

void Node::on_failed(HandlerProcess& h, ClientId client, const LoggedCall& call, Errc code, const std::string& reason) {
  if (call.reply_route) {
    send_reply(*call.reply_route, fail_with(code, reason));
  } else {
    diagnostic(call.method + " for " + to_string(client) + " failed: " + reason);
  }
  notify_version(h);
}

void Node::on_unlocked(HandlerProcess& h, ClientId client, const UnlockMarker& marker) {
  compensation_.clear_on_unlock({client, h.id()});
  if (marker.group == 0) return;
  auto it = unlock_groups_.find(marker.group);
  if (it == unlock_groups_.end()) return;
  if (--it->second.remaining > 0) return;
  const UnlockGroup g = it->second;
  unlock_groups_.erase(it);
  emit(NodeEvent::Kind::Unlocked, g.client);
  send_reply(g.route, ReplyMessage::ok());
}

// ---------------------------------------------------------------------------
// References

void Node::grant_outgoing(const Values& values, NodeId receiver) {
  if (receiver == id()) return;
  for (const auto& v : values) {
    if (v.type() == Value::Type::Ref && v.as_ref().node == id()) refcounts_.grant(v.as_ref(), receiver, 1);
  }
}

void Node::ingest_incoming(const Values& values) {
  for (const auto& v : values) {
    if (v.type() == Value::Type::Ref && v.as_ref().node != id()) ++ensure_proxy(v.as_ref()).held;
  }
}

ProxyBinding& Node::ensure_proxy(const ObjectRef& remote) {
  if (remote.node == id()) throw Error(Errc::ProtocolViolation, "no proxy for a local object");
  if (!proxy_process_) proxy_process_ = ProcessId{next_process_++};
  return proxies_.ensure(remote, *proxy_process_);
}

Task<void> Node::share_ref(ObjectRef ref, std::uint64_t count) {
  RequestMessage m = simple_request(Subject::Share);
  m.args.push_back(Value::nat(count));
  m.targets.push_back(ref);
  auto r = send_request(ref.node, std::move(m));
  ReplyMessage reply = co_await r;
  expect_ok(reply);
}

Task<void> Node::release_ref(ObjectRef ref, std::uint64_t count) {
  RequestMessage m = simple_request(Subject::Release);
  m.args.push_back(Value::nat(count));
  m.targets.push_back(ref);
  auto r = send_request(ref.node, std::move(m));
  ReplyMessage reply = co_await r;
  expect_ok(reply);
}

Task<void> Node::drop_proxy(ObjectRef remote) {
  const auto binding = proxies_.remove(remote);
  if (!binding || binding->held == 0) co_return;
  co_await release_ref(remote, binding->held);
}

std::vector<ObjectRef> Node::collect_garbage() {
  std::vector<ObjectRef> removed;
  for (const auto& ref : refcounts_.collectible()) {
    if (index_ && ref == *index_) continue;
    if (auto* h = handler(ref.process)) h->remove_object(ref.object);
    refcounts_.forget(ref);
    removed.push_back(ref);
  }
  return removed;
}

// ---------------------------------------------------------------------------

void Node::emit(NodeEvent::Kind kind, std::optional<ClientId> client, ProcessId process, std::uint64_t timestamp,
                std::string detail) {
  if (!observer_) return;
  observer_(NodeEvent{kind, ex_.now(), client, process, timestamp, std::move(detail)});
}

void Node::diagnostic(std::string what) {
  ++stats_.diagnostics;
  emit(NodeEvent::Kind::Diagnostic, std::nullopt, {}, 0, std::move(what));
}

}  // namespace dscoop
