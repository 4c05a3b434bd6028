#pragma once

// Supplier-side compensation bookkeeping.
//
// Each (client, process) pair owns a set of compensation closures. Every
// registration takes a timestamp from a per-client counter, so timestamps
// are unique and increasing across all of that client's sets on this node.
// A normal unlock clears the set; a premature disconnect merges all of the
// client's sets and hands them back newest first for replay.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "dscoop/core_types.hpp"

namespace dscoop {

struct CompensationEntry {
  std::uint64_t timestamp = 0;
  CapturedCall call;

  friend bool operator==(const CompensationEntry&, const CompensationEntry&) = default;
};

struct CompensationKey {
  ClientId client;
  ProcessId process;

  friend auto operator<=>(const CompensationKey&, const CompensationKey&) = default;
};

class CompensationRegistry {
 public:
  /// Client-defined compensation: held until the guarded call executes.
  /// A second staging before that call replaces the first.
  void stage(const CompensationKey& key, CapturedCall undo);

  /// The guarded call is executing: commits the staged entry, if any.
  std::optional<std::uint64_t> commit_staged(const CompensationKey& key);

  /// Supplier-defined compensation, committed immediately.
  std::uint64_t add(const CompensationKey& key, CapturedCall undo);

  /// Normal unlock of key.process: drops the set and any staged entry.
  void clear_on_unlock(const CompensationKey& key);

  /// Removes all of client's sets and returns their entries ordered by
  /// strictly decreasing timestamp.
  std::vector<CompensationEntry> take_for_replay(ClientId client);

  std::vector<CompensationEntry> entries(const CompensationKey& key) const;
  bool has_staged(const CompensationKey& key) const;
  std::vector<ClientId> clients() const;
  std::size_t size() const;

 private:
  struct Set {
    std::vector<CompensationEntry> entries;
    std::optional<CapturedCall> staged;
  };

  std::uint64_t next_timestamp(ClientId client);

  mutable std::mutex mu_;
  std::map<CompensationKey, Set> sets_;
  std::map<ClientId, std::uint64_t> clocks_;
};

}  // namespace dscoop
