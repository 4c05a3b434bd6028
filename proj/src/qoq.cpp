#include "dscoop/qoq.hpp"

#include <algorithm>

namespace dscoop {

Subqueue* QueueOfQueues::find_open(ClientId client) {
  for (auto& q : queues_) {
    if (q.open && q.owner == client) return &q;
  }
  return nullptr;
}

const Subqueue* QueueOfQueues::find_open(ClientId client) const {
  for (const auto& q : queues_) {
    if (q.open && q.owner == client) return &q;
  }
  return nullptr;
}

Subqueue& QueueOfQueues::ensure_subqueue(ClientId client, bool* created) {
  if (auto* q = find_open(client)) {
    if (created) *created = false;
    return *q;
  }
  queues_.push_back(Subqueue{client, {}, true});
  if (created) *created = true;
  return queues_.back();
}

void QueueOfQueues::enqueue(ClientId client, LoggedCall call) {
  auto* q = find_open(client);
  if (!q) throw Error(Errc::SubqueueClosed, "no open subqueue for " + to_string(client));
  q->entries.emplace_back(std::move(call));
}

void QueueOfQueues::append_unlock(ClientId client, UnlockMarker marker) {
  auto* q = find_open(client);
  if (!q) throw Error(Errc::SubqueueClosed, "no open subqueue for " + to_string(client));
  q->entries.emplace_back(marker);
  q->open = false;
}

bool QueueOfQueues::has_open(ClientId client) const { return find_open(client) != nullptr; }

std::optional<QueueOfQueues::Popped> QueueOfQueues::pop_next() {
  if (queues_.empty()) return std::nullopt;
  auto& current = queues_.front();
  if (current.entries.empty()) return std::nullopt;
  Popped out{current.owner, std::move(current.entries.front())};
  current.entries.pop_front();
  if (std::holds_alternative<UnlockMarker>(out.entry)) queues_.pop_front();
  return out;
}

std::vector<LoggedCall> QueueOfQueues::drop_client(ClientId client) {
  std::vector<LoggedCall> dropped;
  for (auto& q : queues_) {
    if (q.owner != client) continue;
    for (auto& e : q.entries) {
      if (auto* c = std::get_if<LoggedCall>(&e)) dropped.push_back(std::move(*c));
    }
  }
  std::erase_if(queues_, [&](const Subqueue& q) { return q.owner == client; });
  return dropped;
}

std::optional<ClientId> QueueOfQueues::current_owner() const {
  if (queues_.empty()) return std::nullopt;
  return queues_.front().owner;
}

ObjectSlot* HandlerProcess::find_object(ObjectId id) {
  auto it = objects_.find(id);
  return it == objects_.end() ? nullptr : &it->second;
}

const Method& HandlerProcess::resolve(ObjectId object, std::string_view method) const {
  auto it = objects_.find(object);
  if (it == objects_.end()) throw Error(Errc::NoSuchObject);
  const Method* m = it->second.methods ? it->second.methods->find(method) : nullptr;
  if (!m) throw Error(Errc::NoSuchMethod, "NoSuchMethod: " + std::string(method));
  return *m;
}

Value HandlerProcess::execute(ObjectId object, std::string_view method, const Values& args, CallContext& ctx) {
  const Method& m = resolve(object, method);
  Object& state = *objects_.at(object).state;
  if (!m.mutating) return m.fn(state, args, ctx);
  struct Bump {
    std::uint64_t& v;
    ~Bump() { ++v; }
  } bump{version_};
  return m.fn(state, args, ctx);
}

std::optional<Value> execute_call(HandlerProcess& h, ClientId client, const LoggedCall& call, StepSink& sink) {
  auto ctx = sink.begin_call(h, client, call);
  try {
    Value v = h.execute(call.target.object, call.method, call.args, *ctx);
    sink.on_executed(h, client, call, v);
    return v;
  } catch (const Error& e) {
    sink.on_failed(h, client, call, e.code(), e.what());
  } catch (const std::exception& e) {
    sink.on_failed(h, client, call, Errc::RemoteFailure, e.what());
  }
  return std::nullopt;
}

StepOutcome handler_step(HandlerProcess& h, StepSink& sink) {
  auto next = h.qoq().pop_next();
  if (!next) return StepOutcome::Idle;
  if (auto* marker = std::get_if<UnlockMarker>(&next->entry)) {
    sink.on_unlocked(h, next->client, *marker);
    return StepOutcome::ProcessedUnlock;
  }
  execute_call(h, next->client, std::get<LoggedCall>(next->entry), sink);
  return StepOutcome::ExecutedCall;
}

}  // namespace dscoop
