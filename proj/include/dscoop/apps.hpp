#pragma once

// Example applications: bank accounts, dining philosophers, replicated log,
// and the sqrt(a^2 + b^2) pipeline.

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dscoop/block.hpp"
#include "dscoop/node.hpp"

namespace dscoop::apps {

// Bank.

struct Account : Object {
  std::uint64_t balance = 0;
  /// set_balance registers its own undo when true.
  bool supplier_compensation = false;
};

/// balance, set_balance(n), deposit(n).
std::shared_ptr<const MethodTable> account_class();
ObjectRef create_account(Node& node, std::uint64_t balance, bool supplier_compensation = false,
                         std::optional<ProcessId> handler = {});

/// Index object of a bank node: account(i), accounts, open_account(initial).
struct Bank : Object {
  Node* node = nullptr;
  std::vector<ObjectRef> accounts;
};
std::shared_ptr<const MethodTable> bank_class();
ObjectRef create_bank(Node& node, std::size_t accounts, std::uint64_t initial_balance);

struct TransferResult {
  /// False when the guard failed (insufficient funds) and nothing changed.
  bool done = false;
  /// Two balance reads of the source inside the same block.
  std::uint64_t first_read = 0;
  std::uint64_t second_read = 0;

  bool reads_stable() const noexcept { return first_read == second_read; }
};

enum class Compensation { None, Client };

/// Moves am from s to t if s can cover it.
Task<TransferResult> transfer(ClientProcess& client, ObjectRef s, ObjectRef t, std::uint64_t am,
                              Compensation comp = Compensation::None);

/// Takes am out of s if it can cover it.
Task<TransferResult> withdraw(ClientProcess& client, ObjectRef s, std::uint64_t am);

// Dining philosophers.

struct Fork : Object {
  std::uint64_t uses = 0;
};
/// use, uses.
std::shared_ptr<const MethodTable> fork_class();
ObjectRef create_fork(Node& node);

/// Eats `rounds` times, each time holding both forks in one block.
Task<void> philosopher(ClientProcess& client, ObjectRef left, ObjectRef right, std::uint64_t rounds);

// Replicated log.

struct Log : Object {
  std::vector<std::string> entries;
};
/// append(text) (undone by truncate), truncate(n), length, entry(i).
std::shared_ptr<const MethodTable> log_class();
ObjectRef create_log(Node& node);

/// Appends `entries` messages to every server, controlling all of them per entry.
Task<void> log_client(ClientProcess& client, std::vector<ObjectRef> servers, std::uint64_t entries,
                      std::string tag);

// Pipeline.

/// FIFO of items; each item is a short list of values.
struct Buffer : Object {
  std::deque<Values> items;
};
/// put(values...), front(i), pop, size.
std::shared_ptr<const MethodTable> buffer_class();
ObjectRef create_buffer(Node& node);

enum class Stage { SquareFirst, SquareSecond, Add, Sqrt };

/// Moves `items` items from in to out, applying the stage's operation.
Task<void> pipeline_stage(ClientProcess& client, ObjectRef in, ObjectRef out, Stage stage, std::uint64_t items);

/// Feeds (a, b) pairs into the first buffer.
Task<void> pipeline_source(ClientProcess& client, ObjectRef first,
                           std::vector<std::pair<std::uint64_t, std::uint64_t>> inputs);

/// sqrt(a^2 + b^2): a Nat when exact, otherwise Text with the decimal value.
Value hypot_value(std::uint64_t a, std::uint64_t b);
Value sqrt_value(std::uint64_t n);

}  // namespace dscoop::apps
