#pragma once

// Client side of separate blocks.
//
//   auto block = co_await client.open_block({s, t});
//   auto b = co_await block.query(s, "balance");
//   co_await block.command(s, "set_balance", {Value::nat(b.as_nat() - 10)});
//   co_await block.close();
//
// open_block runs the prelock phase (one PRELOCK at a time, ascending node
// id) and then LOCKs every node concurrently. Calls are legal only while the
// block is Issuing. Blocks nest and must be closed in reverse order; a block
// destroyed while still Issuing is unlocked without waiting for replies.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dscoop/coordinator.hpp"
#include "dscoop/core_types.hpp"
#include "dscoop/task.hpp"
#include "dscoop/wire.hpp"

namespace dscoop {

class Node;
class ClientProcess;
class SeparateBlock;

namespace detail {

struct BlockState {
  enum class Phase { Prelocking, Issuing, Closed };

  ClientProcess* client = nullptr;
  std::vector<ObjectRef> targets;
  /// Every process the block's targets live on.
  std::set<std::pair<NodeId, ProcessId>> involved;
  /// Processes this block locks itself; excludes those enclosing blocks hold.
  BlockPlan plan;
  Phase phase = Phase::Prelocking;
  std::vector<AsyncResult<ReplyMessage>> pending_acks;
  std::map<std::pair<NodeId, ProcessId>, CapturedCall> staged_compensation;

  Task<void> acquire();
  Task<void> release();
  void abandon();
  Task<AsyncResult<ReplyMessage>> issue(ObjectRef target, std::string method, Values args, CallKind kind);
};

}  // namespace detail

class ClientProcess {
 public:
  ClientProcess(Node& node, ProcessId id) : node_(node), id_(id) {}
  ClientProcess(const ClientProcess&) = delete;
  ClientProcess& operator=(const ClientProcess&) = delete;

  ClientId id() const noexcept;
  Node& node() noexcept { return node_; }

  Task<SeparateBlock> open_block(std::vector<ObjectRef> targets);

  std::size_t open_blocks() const noexcept { return stack_.size(); }

 private:
  friend class Node;
  friend class SeparateBlock;
  friend struct detail::BlockState;

  bool held_by_enclosing(NodeId node, ProcessId p) const;
  /// Whether p is a target of block or of a block enclosing it.
  bool involved_through(const detail::BlockState* block, NodeId node, ProcessId p) const;

  Node& node_;
  ProcessId id_;
  std::vector<detail::BlockState*> stack_;
  std::optional<Completion> ready_;
  std::set<NodeId> ready_nodes_;
};

class SeparateBlock {
 public:
  using Phase = detail::BlockState::Phase;

  struct Probe {
    ObjectRef target;
    std::string method;
    Values args;
  };

  explicit SeparateBlock(std::shared_ptr<detail::BlockState> s) : s_(std::move(s)) {}
  SeparateBlock(SeparateBlock&&) noexcept = default;
  SeparateBlock& operator=(SeparateBlock&& other) noexcept;
  ~SeparateBlock();

  Phase phase() const noexcept { return s_->phase; }
  ClientId client() const noexcept;
  const std::vector<ObjectRef>& targets() const noexcept { return s_->targets; }
  const BlockPlan& plan() const noexcept { return s_->plan; }

  /// QCALL: waits for execution and returns the result.
  Task<Value> query(ObjectRef target, std::string method, Values args = {});

  /// SCALL: waits until the command has executed.
  Task<void> sync_command(ObjectRef target, std::string method, Values args = {});

  /// CALL, pipelined: returns once the request is sent. The enqueue
  /// acknowledgement is collected by close(), which reports any failure.
  Task<void> command(ObjectRef target, std::string method, Values args = {});

  /// CALL that waits for the supplier's enqueue acknowledgement.
  Task<void> command_acked(ObjectRef target, std::string method, Values args = {});

  /// Client-defined compensation for the next call on target's process. The
  /// arguments are evaluated now.
  void compensate(ObjectRef target, std::string method, Values args = {});

  /// Re-evaluates the probes until predicate holds. While it does not, the
  /// block's own locks are released so other clients can change the state,
  /// and the client sleeps until a supplier sends READY.
  Task<void> await_condition(std::vector<Probe> probes, std::function<bool(const Values&)> predicate);

  Task<void> close();

 private:
  std::shared_ptr<detail::BlockState> s_;
};

}  // namespace dscoop
