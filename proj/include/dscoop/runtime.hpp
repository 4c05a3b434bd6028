#pragma once

// Execution and transport seams. A node runs all of its logic on one
// Executor; the deterministic simulator and the TCP runtime each provide one.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "dscoop/wire.hpp"

namespace dscoop {

using Duration = std::chrono::microseconds;

class Executor {
 public:
  using TimerId = std::uint64_t;

  virtual ~Executor() = default;

  /// Runs fn later on this executor, after already-queued work.
  virtual void post(std::function<void()> fn) = 0;

  /// Runs fn after delay. Daemon timers do not keep a simulation alive.
  virtual TimerId schedule(Duration delay, std::function<void()> fn, bool daemon = false) = 0;
  virtual void cancel(TimerId id) = 0;

  /// Time since an executor-defined epoch (virtual in simulation).
  virtual Duration now() const = 0;
};

using LinkId = std::uint64_t;

/// Callbacks a transport delivers on the bound node's executor.
class TransportListener {
 public:
  virtual ~TransportListener() = default;
  virtual void on_link_up(LinkId link) = 0;  // inbound connection accepted
  virtual void on_frame(LinkId link, Bytes frame) = 0;
  virtual void on_link_down(LinkId link) = 0;
};

/// Ordered, reliable byte-stream links carrying whole frames.
class Transport {
 public:
  using DialCallback = std::function<void(std::optional<LinkId>, std::string error)>;

  virtual ~Transport() = default;
  virtual void bind(TransportListener* listener) = 0;
  virtual void dial(const std::string& address, DialCallback done) = 0;
  virtual void send(LinkId link, Bytes frame) = 0;
  virtual void close(LinkId link) = 0;
};

}  // namespace dscoop
