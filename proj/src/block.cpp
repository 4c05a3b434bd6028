#include "dscoop/block.hpp"

#include <algorithm>

#include "dscoop/node.hpp"

namespace dscoop {

namespace {

RequestMessage lock_request(Subject subject, ProcessId client_process, NodeId node, const std::set<ProcessId>& procs) {
  RequestMessage m;
  m.subject = subject;
  m.client_process = client_process;
  for (auto p : procs) m.targets.push_back(process_ref(node, p));
  return m;
}

Subject subject_for(CallKind kind) {
  switch (kind) {
    case CallKind::AsyncCommand: return Subject::Call;
    case CallKind::SyncCommand: return Subject::SCall;
    case CallKind::Query: return Subject::QCall;
  }
  return Subject::Call;
}

std::string describe(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

}  // namespace

namespace detail {

Task<void> BlockState::acquire() {
  Node& node = client->node_;
  const ProcessId cp = client->id_;
  std::vector<NodeId> touched;
  std::exception_ptr failure;

  // Prelock phase: one node at a time, ascending id (std::map order).
  for (const auto& [n, procs] : plan) {
    touched.push_back(n);
    auto r = node.send_request(n, lock_request(Subject::Prelock, cp, n, procs), node.config_.prelock_timeout,
                               Errc::PrelockTimeout);
    try {
      ReplyMessage reply = co_await r;
      expect_ok(reply);
    } catch (...) {
      failure = std::current_exception();
    }
    if (failure) break;
  }

  if (!failure) {
    std::vector<AsyncResult<ReplyMessage>> locks;
    for (const auto& [n, procs] : plan) locks.push_back(node.send_request(n, lock_request(Subject::Lock, cp, n, procs)));
    for (auto& r : locks) {
      try {
        ReplyMessage reply = co_await r;
        expect_ok(reply);
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
  }

  if (failure) {
    for (NodeId n : touched) (void)node.send_request(n, lock_request(Subject::Unlock, cp, n, plan.at(n)));
    throw Error(Errc::BlockOpenFailure, "BlockOpenFailure: " + describe(failure));
  }
}

Task<void> BlockState::release() {
  Node& node = client->node_;
  std::vector<AsyncResult<ReplyMessage>> waits = std::move(pending_acks);
  pending_acks.clear();
  staged_compensation.clear();
  for (const auto& [n, procs] : plan) {
    waits.push_back(node.send_request(n, lock_request(Subject::Unlock, client->id_, n, procs)));
  }
  std::exception_ptr first;
  for (auto& w : waits) {
    try {
      ReplyMessage reply = co_await w;
      expect_ok(reply);
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

void BlockState::abandon() {
  Node& node = client->node_;
  for (const auto& [n, procs] : plan) {
    (void)node.send_request(n, lock_request(Subject::Unlock, client->id_, n, procs));
  }
  pending_acks.clear();
  phase = Phase::Closed;
  std::erase(client->stack_, this);
}

Task<AsyncResult<ReplyMessage>> BlockState::issue(ObjectRef target, std::string method, Values args, CallKind kind) {
  if (phase != Phase::Issuing) throw Error(Errc::BlockClosed);
  if (!client->involved_through(this, target.node, target.process)) throw Error(Errc::TargetNotInBlock, to_string(target));
  Node& node = client->node_;

  // A reference owned by a third node is SHAREd before it travels.
  for (const auto& a : args) {
    if (a.type() != Value::Type::Ref) continue;
    const ObjectRef r = a.as_ref();
    if (r.node != node.id() && r.node != target.node) co_await node.share_ref(r, 1);
  }
  if (phase != Phase::Issuing) throw Error(Errc::BlockClosed);

  RequestMessage msg;
  msg.subject = subject_for(kind);
  msg.client_process = client->id_;
  msg.args.reserve(args.size() + 1);
  msg.args.push_back(Value::text(std::move(method)));
  for (auto& a : args) msg.args.push_back(std::move(a));
  msg.targets.push_back(target);
  if (auto it = staged_compensation.find({target.node, target.process}); it != staged_compensation.end()) {
    msg.compensation = std::move(it->second);
    staged_compensation.erase(it);
  }
  co_return node.send_request(target.node, std::move(msg));
}

}  // namespace detail

ClientId ClientProcess::id() const noexcept { return {node_.id(), id_}; }

bool ClientProcess::held_by_enclosing(NodeId node, ProcessId p) const {
  return std::any_of(stack_.begin(), stack_.end(), [&](const detail::BlockState* b) {
    auto it = b->plan.find(node);
    return it != b->plan.end() && it->second.contains(p);
  });
}

bool ClientProcess::involved_through(const detail::BlockState* block, NodeId node, ProcessId p) const {
  for (const auto* b : stack_) {
    if (b->involved.contains({node, p})) return true;
    if (b == block) break;
  }
  return false;
}

Task<SeparateBlock> ClientProcess::open_block(std::vector<ObjectRef> targets) {
  if (targets.empty()) throw Error(Errc::ProtocolViolation, "a block needs at least one target");
  auto s = std::make_shared<detail::BlockState>();
  s->client = this;
  s->targets = std::move(targets);
  for (const auto& t : s->targets) {
    s->involved.insert({t.node, t.process});
    if (!held_by_enclosing(t.node, t.process)) s->plan[t.node].insert(t.process);
  }
  co_await s->acquire();
  s->phase = detail::BlockState::Phase::Issuing;
  stack_.push_back(s.get());
  co_return SeparateBlock(std::move(s));
}

SeparateBlock& SeparateBlock::operator=(SeparateBlock&& other) noexcept {
  if (this != &other) {
    if (s_ && s_->phase == Phase::Issuing) s_->abandon();
    s_ = std::move(other.s_);
  }
  return *this;
}

SeparateBlock::~SeparateBlock() {
  if (s_ && s_->phase == Phase::Issuing) s_->abandon();
}

ClientId SeparateBlock::client() const noexcept { return s_->client->id(); }

Task<Value> SeparateBlock::query(ObjectRef target, std::string method, Values args) {
  auto r = co_await s_->issue(target, std::move(method), std::move(args), CallKind::Query);
  ReplyMessage reply = co_await r;
  expect_ok(reply);
  co_return reply.results.empty() ? Value::unit() : reply.results.front();
}

Task<void> SeparateBlock::sync_command(ObjectRef target, std::string method, Values args) {
  auto r = co_await s_->issue(target, std::move(method), std::move(args), CallKind::SyncCommand);
  ReplyMessage reply = co_await r;
  expect_ok(reply);
}

Task<void> SeparateBlock::command(ObjectRef target, std::string method, Values args) {
  auto r = co_await s_->issue(target, std::move(method), std::move(args), CallKind::AsyncCommand);
  s_->pending_acks.push_back(r);
}

Task<void> SeparateBlock::command_acked(ObjectRef target, std::string method, Values args) {
  auto r = co_await s_->issue(target, std::move(method), std::move(args), CallKind::AsyncCommand);
  ReplyMessage reply = co_await r;
  expect_ok(reply);
}

void SeparateBlock::compensate(ObjectRef target, std::string method, Values args) {
  if (s_->phase != Phase::Issuing) throw Error(Errc::BlockClosed);
  if (!s_->client->involved_through(s_.get(), target.node, target.process)) {
    throw Error(Errc::TargetNotInBlock, to_string(target));
  }
  s_->staged_compensation[{target.node, target.process}] = CapturedCall{target, std::move(method), std::move(args)};
}

Task<void> SeparateBlock::await_condition(std::vector<Probe> probes, std::function<bool(const Values&)> predicate) {
  if (s_->phase != Phase::Issuing) throw Error(Errc::BlockClosed);
  auto& client = *s_->client;
  if (client.stack_.empty() || client.stack_.back() != s_.get()) {
    throw Error(Errc::ProtocolViolation, "only the innermost block can wait");
  }
  if (s_->plan.empty()) throw Error(Errc::ProtocolViolation, "block holds no processes of its own to release");
  Node& node = client.node_;

  while (true) {
    Values results;
    for (const auto& p : probes) {
      Value v = co_await query(p.target, p.method, p.args);
      results.push_back(std::move(v));
    }
    if (predicate(results)) co_return;

    Completion ready(node.ex_);
    client.ready_ = ready;
    client.ready_nodes_.clear();
    for (const auto& [n, procs] : s_->plan) client.ready_nodes_.insert(n);

    std::vector<AsyncResult<ReplyMessage>> awaits;
    for (const auto& [n, procs] : s_->plan) {
      awaits.push_back(node.send_request(n, lock_request(Subject::Await, client.id_, n, procs)));
    }
    std::exception_ptr failure;
    for (auto& a : awaits) {
      try {
        ReplyMessage reply = co_await a;
        expect_ok(reply);
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }

    // Let go of the block so other clients can change the state, sleep until
    // a supplier reports a change, then take the block again.
    s_->phase = Phase::Prelocking;
    try {
      co_await s_->release();
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
    if (!failure) {
      try {
        co_await ready;
      } catch (...) {
        failure = std::current_exception();
      }
    }
    client.ready_.reset();
    if (!failure) {
      try {
        co_await s_->acquire();
      } catch (...) {
        failure = std::current_exception();
      }
    }
    if (failure) {
      s_->phase = Phase::Closed;
      std::erase(client.stack_, s_.get());
      std::rethrow_exception(failure);
    }
    s_->phase = Phase::Issuing;
  }
}

Task<void> SeparateBlock::close() {
  if (s_->phase != Phase::Issuing) throw Error(Errc::BlockClosed);
  auto& stack = s_->client->stack_;
  if (stack.empty() || stack.back() != s_.get()) {
    throw Error(Errc::ProtocolViolation, "nested blocks close innermost first");
  }
  stack.pop_back();
  s_->phase = Phase::Closed;
  co_await s_->release();
}

}  // namespace dscoop
