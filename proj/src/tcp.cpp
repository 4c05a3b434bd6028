#include "dscoop/tcp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <future>

#include "dscoop/errors.hpp"
#include "dscoop/wire.hpp"

namespace dscoop {

// LoopExecutor

LoopExecutor::LoopExecutor() : thread_([this] { run(); }) {}

LoopExecutor::~LoopExecutor() { stop(); }

void LoopExecutor::post(std::function<void()> fn) {
  {
    std::lock_guard lock(m_);
    if (stopping_) return;
    ready_.push_back(std::move(fn));
  }
  cv_.notify_one();
}

Executor::TimerId LoopExecutor::schedule(Duration delay, std::function<void()> fn, bool) {
  TimerId id;
  {
    std::lock_guard lock(m_);
    id = next_timer_++;
    if (stopping_) return id;
    const auto at = Clock::now() + std::max(delay, Duration{0});
    timers_.emplace(std::make_pair(at, id), std::move(fn));
    timer_deadlines_.emplace(id, at);
  }
  cv_.notify_one();
  return id;
}

void LoopExecutor::cancel(TimerId id) {
  std::lock_guard lock(m_);
  auto it = timer_deadlines_.find(id);
  if (it == timer_deadlines_.end()) return;
  timers_.erase({it->second, id});
  timer_deadlines_.erase(it);
}

Duration LoopExecutor::now() const {
  return std::chrono::duration_cast<Duration>(Clock::now() - epoch_);
}

void LoopExecutor::invoke(std::function<void()> fn) {
  if (running_here()) {
    fn();
    return;
  }
  std::promise<void> done;
  auto fut = done.get_future();
  post([&] {
    try {
      fn();
      done.set_value();
    } catch (...) {
      done.set_exception(std::current_exception());
    }
  });
  fut.get();
}

void LoopExecutor::stop() {
  {
    std::lock_guard lock(m_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable() && !running_here()) thread_.join();
  std::lock_guard lock(m_);
  ready_.clear();
  timers_.clear();
  timer_deadlines_.clear();
}

void LoopExecutor::run() {
  std::unique_lock lock(m_);
  while (!stopping_) {
    const auto now = Clock::now();
    while (!timers_.empty() && timers_.begin()->first.first <= now) {
      auto node = timers_.extract(timers_.begin());
      timer_deadlines_.erase(node.key().second);
      ready_.push_back(std::move(node.mapped()));
    }
    if (!ready_.empty()) {
      auto fn = std::move(ready_.front());
      ready_.pop_front();
      lock.unlock();
      fn();
      lock.lock();
      continue;
    }
    if (timers_.empty()) {
      cv_.wait(lock);
    } else {
      cv_.wait_until(lock, timers_.begin()->first.first);
    }
  }
}

// TcpTransport

std::pair<std::string, std::uint16_t> split_host_port(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw Error(Errc::TransportError, "expected host:port, got '" + address + "'");
  }
  const std::string host = address.substr(0, colon);
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1 || port > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw Error(Errc::TransportError, "bad port in '" + address + "'");
  }
  return {host.empty() ? "127.0.0.1" : host, static_cast<std::uint16_t>(port)};
}

namespace {

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw Error(Errc::TransportError, "cannot resolve " + host);
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return sa;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

TcpTransport::TcpTransport(Executor& loop) : loop_(loop) {}

TcpTransport::~TcpTransport() { shutdown(); }

void TcpTransport::bind(TransportListener* listener) { listener_->store(listener); }

void TcpTransport::deliver(std::function<void(TransportListener&)> fn) {
  loop_.post([listener = listener_, fn = std::move(fn)] {
    if (auto* l = listener->load()) fn(*l);
  });
}

std::string TcpTransport::listen(const std::string& address) {
  auto [host, port] = split_host_port(address);
  const sockaddr_in sa = resolve(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(Errc::TransportError, errno_text("socket"));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0 || ::listen(fd, 64) != 0) {
    const auto why = errno_text("bind");
    ::close(fd);
    throw Error(Errc::TransportError, why + " (" + address + ")");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  std::lock_guard lock(m_);
  listen_fd_ = fd;
  threads_.emplace_back([this] { accept_loop(); });
  return host + ":" + std::to_string(ntohs(bound.sin_port));
}

void TcpTransport::accept_loop() {
  while (true) {
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      return;  // listening socket shut down
    }
    set_nodelay(fd);
    const LinkId link = add_link(fd);
    if (link == 0) return;
    deliver([link](TransportListener& l) { l.on_link_up(link); });
    start_reader(link, find(link));
  }
}

LinkId TcpTransport::add_link(int fd) {
  std::lock_guard lock(m_);
  if (shut_down_) {
    ::close(fd);
    return 0;
  }
  const LinkId id = next_link_++;
  auto l = std::make_shared<Link>();
  l->fd = fd;
  links_.emplace(id, std::move(l));
  return id;
}

std::shared_ptr<TcpTransport::Link> TcpTransport::find(LinkId link) {
  std::lock_guard lock(m_);
  auto it = links_.find(link);
  return it == links_.end() ? nullptr : it->second;
}

void TcpTransport::start_reader(LinkId link, std::shared_ptr<Link> l) {
  if (!l) return;
  std::lock_guard lock(m_);
  if (shut_down_) return;
  threads_.emplace_back([this, link, l] {
    while (true) {
      std::optional<Bytes> frame;
      try {
        frame = read_frame(l->fd);
      } catch (const Error&) {
        frame.reset();
      }
      if (!frame) break;
      deliver([link, f = std::move(*frame)](TransportListener& lst) mutable { lst.on_frame(link, std::move(f)); });
    }
    if (!l->closed_locally.load()) deliver([link](TransportListener& lst) { lst.on_link_down(link); });
  });
}

void TcpTransport::dial(const std::string& address, DialCallback done) {
  std::lock_guard lock(m_);
  if (shut_down_) return;
  threads_.emplace_back([this, address, done = std::move(done)] {
    std::optional<LinkId> link;
    std::string error;
    try {
      auto [host, port] = split_host_port(address);
      const sockaddr_in sa = resolve(host, port);
      const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
      if (fd < 0) throw Error(Errc::TransportError, errno_text("socket"));
      if (::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
        const auto why = errno_text("connect");
        ::close(fd);
        throw Error(Errc::TransportError, why + " (" + address + ")");
      }
      set_nodelay(fd);
      const LinkId id = add_link(fd);
      if (id != 0) link = id;
    } catch (const std::exception& e) {
      error = e.what();
    }
    if (!link && error.empty()) return;  // shutting down
    loop_.post([done, link, error] { done(link, error); });
    if (link) start_reader(*link, find(*link));
  });
}

void TcpTransport::send(LinkId link, Bytes frame) {
  auto l = find(link);
  if (!l || l->closed_locally.load()) return;
  std::lock_guard lock(l->write_mutex);
  try {
    write_frame(l->fd, frame);
  } catch (const Error&) {
    // The reader thread reports the broken link.
  }
}

void TcpTransport::close(LinkId link) {
  auto l = find(link);
  if (!l || l->closed_locally.exchange(true)) return;
  ::shutdown(l->fd, SHUT_RDWR);
}

void TcpTransport::shutdown() {
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(m_);
    if (shut_down_) return;
    shut_down_ = true;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    for (auto& [id, l] : links_) {
      l->closed_locally.store(true);
      ::shutdown(l->fd, SHUT_RDWR);
    }
  }
  // Threads may still append (dial threads start readers) until they see shut_down_.
  while (true) {
    {
      std::lock_guard lock(m_);
      if (threads_.empty()) break;
      threads.swap(threads_);
    }
    for (auto& t : threads) t.join();
    threads.clear();
  }
  std::lock_guard lock(m_);
  for (auto& [id, l] : links_) ::close(l->fd);
  links_.clear();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

}  // namespace dscoop
