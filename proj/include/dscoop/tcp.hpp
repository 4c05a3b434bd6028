#pragma once

// Socket runtime: a single-threaded event loop executor and a TCP transport.
//
// Socket I/O happens on helper threads (one acceptor, one reader per link);
// every callback into the node is posted to the LoopExecutor, so node state
// stays confined to the loop thread.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dscoop/runtime.hpp"

namespace dscoop {

class LoopExecutor final : public Executor {
 public:
  LoopExecutor();
  ~LoopExecutor() override;

  LoopExecutor(const LoopExecutor&) = delete;
  LoopExecutor& operator=(const LoopExecutor&) = delete;

  void post(std::function<void()> fn) override;
  TimerId schedule(Duration delay, std::function<void()> fn, bool daemon = false) override;
  void cancel(TimerId id) override;
  Duration now() const override;

  /// Runs fn on the loop thread and waits for it. Rethrows fn's exception.
  void invoke(std::function<void()> fn);

  /// Stops the loop after the current task; pending work is discarded.
  void stop();
  bool running_here() const noexcept { return std::this_thread::get_id() == thread_.get_id(); }

 private:
  using Clock = std::chrono::steady_clock;

  void run();

  Clock::time_point epoch_ = Clock::now();
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> ready_;
  std::map<std::pair<Clock::time_point, TimerId>, std::function<void()>> timers_;
  std::map<TimerId, Clock::time_point> timer_deadlines_;
  TimerId next_timer_ = 1;
  bool stopping_ = false;
  std::thread thread_;
};

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(Executor& loop);
  ~TcpTransport() override;

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  /// Binds "host:port" (port 0 picks a free one) and starts accepting.
  /// Returns the bound address.
  std::string listen(const std::string& address);

  void bind(TransportListener* listener) override;
  void dial(const std::string& address, DialCallback done) override;
  void send(LinkId link, Bytes frame) override;
  void close(LinkId link) override;

  /// Closes every socket and joins the helper threads.
  void shutdown();

 private:
  struct Link {
    int fd = -1;
    std::mutex write_mutex;
    std::atomic<bool> closed_locally{false};
  };

  LinkId add_link(int fd);
  void start_reader(LinkId link, std::shared_ptr<Link> l);
  void accept_loop();
  std::shared_ptr<Link> find(LinkId link);
  void deliver(std::function<void(TransportListener&)> fn);

  Executor& loop_;
  std::shared_ptr<std::atomic<TransportListener*>> listener_ =
      std::make_shared<std::atomic<TransportListener*>>(nullptr);
  std::mutex m_;
  std::map<LinkId, std::shared_ptr<Link>> links_;
  LinkId next_link_ = 1;
  int listen_fd_ = -1;
  std::vector<std::thread> threads_;
  bool shut_down_ = false;
};

/// Splits "host:port". Throws Error(TransportError) on a malformed address.
std::pair<std::string, std::uint16_t> split_host_port(const std::string& address);

}  // namespace dscoop
