#pragma once

// Supplier-side admission control for separate blocks.
//
// A node admits one client prelock phase at a time through its PrelockGate.
// The holder keeps the gate only until its LOCK arrives; waiters are then
// admitted in arrival order while the previous holder keeps issuing calls.
// Clients acquire gates one at a time in ascending NodeId order, which rules
// out cyclic waits between gates.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "dscoop/core_types.hpp"

namespace dscoop {

class PrelockGate {
 public:
  enum class Admission { Admitted, Queued };

  /// A PRELOCK arrived. Throws ProtocolViolation if c already holds or waits.
  Admission request(ClientId c);

  /// The holder's LOCK arrived. Clears the holder and returns the next
  /// admitted waiter, if any. Throws ProtocolViolation if c is not the holder.
  std::optional<ClientId> on_lock(ClientId c);

  /// Removes c as holder or waiter (abort, disconnect). Returns the waiter
  /// admitted as a consequence, if any.
  std::optional<ClientId> withdraw(ClientId c);

  bool is_holder(ClientId c) const noexcept { return holder_ == c; }
  bool is_waiting(ClientId c) const;
  bool involves(ClientId c) const { return is_holder(c) || is_waiting(c); }

  const std::optional<ClientId>& holder() const noexcept { return holder_; }
  const std::deque<ClientId>& waiters() const noexcept { return waiters_; }

  friend bool operator==(const PrelockGate&, const PrelockGate&) = default;

 private:
  std::optional<ClientId> admit_next();

  std::optional<ClientId> holder_;
  std::deque<ClientId> waiters_;
};

/// Per-client stack of process sets, one frame per LOCK. UNLOCK pops the
/// top frame, so nested blocks release in reverse order.
class LockRecord {
 public:
  void push(std::vector<ProcessId> processes) { frames_.push_back(std::move(processes)); }
  /// Throws NoActiveLock when empty.
  std::vector<ProcessId> pop();
  const std::vector<ProcessId>& top() const;
  bool empty() const noexcept { return frames_.empty(); }
  std::size_t depth() const noexcept { return frames_.size(); }
  const std::vector<std::vector<ProcessId>>& frames() const noexcept { return frames_; }

 private:
  std::vector<std::vector<ProcessId>> frames_;
};

struct WaitRegistration {
  ClientId client;
  std::map<ProcessId, std::uint64_t> armed_at;
};

/// Clients sleeping on AWAIT. Any state change of a registered process wakes
/// every client registered on it, once.
class WaitRegistry {
 public:
  /// Replaces any earlier registration of the same client.
  void arm(ClientId client, std::map<ProcessId, std::uint64_t> versions);

  /// Process p reached version v. Returns the clients to wake; their
  /// registrations are dropped.
  std::vector<ClientId> on_version(ProcessId p, std::uint64_t v);

  void drop(ClientId client) { regs_.erase(client); }
  bool is_armed(ClientId client) const { return regs_.contains(client); }
  std::vector<ClientId> clients() const;
  std::size_t size() const noexcept { return regs_.size(); }

 private:
  std::map<ClientId, WaitRegistration> regs_;
};

/// Target processes of a block grouped by node, in ascending NodeId order.
using BlockPlan = std::map<NodeId, std::set<ProcessId>>;

BlockPlan plan_block(const std::vector<ObjectRef>& targets);

}  // namespace dscoop
