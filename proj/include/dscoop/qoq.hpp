#pragma once

// Handler processes and their queue of queues.
//
// A handler owns a set of objects and is the only executor of their methods.
// Clients log calls into private subqueues; the handler drains subqueues in
// creation order and the calls inside each subqueue in log order. An open but
// empty current subqueue stalls the handler: later subqueues never overtake it.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dscoop/core_types.hpp"
#include "dscoop/errors.hpp"
#include "dscoop/wire.hpp"

namespace dscoop {

/// Base of application object state.
class Object {
 public:
  virtual ~Object() = default;
};

class CallContext;

struct Method {
  std::function<Value(Object&, const Values&, CallContext&)> fn;
  bool mutating = false;
};

/// Name-indexed dispatch table shared by all objects of one class.
class MethodTable {
 public:
  void add(std::string name, Method m) { methods_[std::move(name)] = std::move(m); }
  const Method* find(std::string_view name) const {
    auto it = methods_.find(name);
    return it == methods_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, Method, std::less<>> methods_;
};

/// Typed front end for building a MethodTable over state type T.
template <class T>
class ClassBuilder {
 public:
  using QueryFn = std::function<Value(T&, const Values&, CallContext&)>;
  using CommandFn = std::function<void(T&, const Values&, CallContext&)>;

  /// Read-only method returning a value.
  ClassBuilder& query(std::string name, QueryFn fn) { return add(std::move(name), std::move(fn), false); }

  /// State-changing method returning a value (e.g. take-from-buffer).
  ClassBuilder& mutating_query(std::string name, QueryFn fn) { return add(std::move(name), std::move(fn), true); }

  /// State-changing method without a result.
  ClassBuilder& command(std::string name, CommandFn fn) {
    return add(
        std::move(name),
        [fn = std::move(fn)](T& self, const Values& args, CallContext& ctx) {
          fn(self, args, ctx);
          return Value::unit();
        },
        true);
  }

  std::shared_ptr<const MethodTable> build() const { return std::make_shared<MethodTable>(table_); }

 private:
  ClassBuilder& add(std::string name, QueryFn fn, bool mutating) {
    table_.add(std::move(name),
               Method{[fn = std::move(fn)](Object& o, const Values& args, CallContext& ctx) {
                        return fn(static_cast<T&>(o), args, ctx);
                      },
                      mutating});
    return *this;
  }

  MethodTable table_;
};

struct ObjectSlot {
  std::unique_ptr<Object> state;
  std::shared_ptr<const MethodTable> methods;
};

/// Where a call's reply goes: the requesting node plus its message id.
struct ReplyRoute {
  NodeId client_node;
  MessageId message_id = 0;

  friend bool operator==(const ReplyRoute&, const ReplyRoute&) = default;
};

struct LoggedCall {
  ObjectRef target;
  std::string method;
  Values args;
  CallKind kind = CallKind::AsyncCommand;
  std::optional<ReplyRoute> reply_route;
  std::optional<CapturedCall> compensation;
};

/// Ends a client's subqueue. group ties the markers of one UNLOCK together.
struct UnlockMarker {
  std::uint64_t group = 0;
};

using QueueEntry = std::variant<LoggedCall, UnlockMarker>;

struct Subqueue {
  ClientId owner;
  std::deque<QueueEntry> entries;
  bool open = true;
};

class QueueOfQueues {
 public:
  /// Returns the client's open subqueue, appending a new one at the tail if
  /// none is open.
  Subqueue& ensure_subqueue(ClientId client, bool* created = nullptr);

  /// Appends to the client's open subqueue. Throws SubqueueClosed if there is none.
  void enqueue(ClientId client, LoggedCall call);

  /// Closes the client's open subqueue with an unlock marker.
  void append_unlock(ClientId client, UnlockMarker marker);

  bool has_open(ClientId client) const;

  struct Popped {
    ClientId client;
    QueueEntry entry;
  };

  /// Removes and returns the head of the current subqueue. Processing an
  /// unlock marker removes that subqueue. nullopt means the handler is idle.
  std::optional<Popped> pop_next();

  /// Removes every subqueue of client, returning the calls never executed.
  std::vector<LoggedCall> drop_client(ClientId client);

  std::optional<ClientId> current_owner() const;
  const std::deque<Subqueue>& subqueues() const noexcept { return queues_; }
  bool empty() const noexcept { return queues_.empty(); }

 private:
  Subqueue* find_open(ClientId client);
  const Subqueue* find_open(ClientId client) const;

  std::deque<Subqueue> queues_;
};

/// Services offered to a method body while it executes.
class CallContext {
 public:
  /// A nested block over other processes of the same node, opened from a
  /// method body. It carries asynchronous commands only since the handler
  /// cannot suspend mid-method.
  class NestedBlock {
   public:
    virtual ~NestedBlock() = default;
    virtual void command(const ObjectRef& target, const std::string& method, Values args) = 0;
    virtual void close() = 0;
  };

  virtual ~CallContext() = default;

  virtual ObjectRef self() const = 0;

  /// The block client this call executes for; nullopt for internal calls.
  virtual std::optional<ClientId> client() const = 0;

  /// Registers supplier-side compensation on self, args evaluated now.
  void compensate(std::string method, Values args) { compensate(CapturedCall{self(), std::move(method), std::move(args)}); }
  virtual void compensate(CapturedCall undo) = 0;

  /// Calls an object of the executing process; runs immediately.
  virtual Value call(const ObjectRef& target, const std::string& method, Values args) = 0;

  virtual std::unique_ptr<NestedBlock> open_block(const std::vector<ObjectRef>& targets) = 0;
};

/// Context for calls with no client and no nested-call support.
class DetachedContext final : public CallContext {
 public:
  explicit DetachedContext(ObjectRef self) : self_(self) {}
  ObjectRef self() const override { return self_; }
  std::optional<ClientId> client() const override { return std::nullopt; }
  using CallContext::compensate;
  void compensate(CapturedCall) override {}
  Value call(const ObjectRef&, const std::string&, Values) override {
    throw Error(Errc::ProtocolViolation, "nested calls unavailable in this context");
  }
  std::unique_ptr<NestedBlock> open_block(const std::vector<ObjectRef>&) override {
    throw Error(Errc::ProtocolViolation, "nested blocks unavailable in this context");
  }

 private:
  ObjectRef self_;
};

class HandlerProcess {
 public:
  explicit HandlerProcess(ProcessId id) : id_(id) {}

  ProcessId id() const noexcept { return id_; }

  void add_object(ObjectId id, ObjectSlot slot) { objects_[id] = std::move(slot); }
  void remove_object(ObjectId id) { objects_.erase(id); }
  bool has_object(ObjectId id) const { return objects_.contains(id); }
  ObjectSlot* find_object(ObjectId id);
  const std::map<ObjectId, ObjectSlot>& objects() const noexcept { return objects_; }

  /// Looks up the method without running it. Throws NoSuchObject/NoSuchMethod.
  const Method& resolve(ObjectId object, std::string_view method) const;

  /// Runs one method on one object. Mutating methods bump the version, even
  /// if they throw part-way.
  Value execute(ObjectId object, std::string_view method, const Values& args, CallContext& ctx);

  QueueOfQueues& qoq() noexcept { return qoq_; }
  const QueueOfQueues& qoq() const noexcept { return qoq_; }

  std::uint64_t version() const noexcept { return version_; }

 private:
  ProcessId id_;
  std::map<ObjectId, ObjectSlot> objects_;
  QueueOfQueues qoq_;
  std::uint64_t version_ = 0;
};

enum class StepOutcome { ExecutedCall, ProcessedUnlock, Idle };

/// Receives what a handler step produced. The node implements this to send
/// replies, commit compensation and release locks.
class StepSink {
 public:
  virtual ~StepSink() = default;
  virtual std::unique_ptr<CallContext> begin_call(HandlerProcess& h, ClientId client, const LoggedCall& call) = 0;
  virtual void on_executed(HandlerProcess& h, ClientId client, const LoggedCall& call, Value result) = 0;
  virtual void on_failed(HandlerProcess& h, ClientId client, const LoggedCall& call, Errc code,
                         const std::string& reason) = 0;
  virtual void on_unlocked(HandlerProcess& h, ClientId client, const UnlockMarker& marker) = 0;
};

/// Processes at most one queue entry of h.
StepOutcome handler_step(HandlerProcess& h, StepSink& sink);

/// Executes one logged call through sink. Used by handler_step.
std::optional<Value> execute_call(HandlerProcess& h, ClientId client, const LoggedCall& call, StepSink& sink);

}  // namespace dscoop
