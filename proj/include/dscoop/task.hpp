#pragma once

// Minimal coroutine support: a lazily started Task<T>, a single-shot
// AsyncResult<T> that coroutines can await, and detached spawning.
// Resumption after an AsyncResult completes always goes through the owning
// Executor, so coroutine code never runs re-entrantly inside a callback.

#include <coroutine>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <utility>

#include "dscoop/core_types.hpp"
#include "dscoop/runtime.hpp"

namespace dscoop {

template <class T = void>
class Task;

namespace detail {

struct FinalAwaiter {
  bool await_ready() const noexcept { return false; }
  template <class P>
  std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept {
    if (auto c = h.promise().continuation) return c;
    return std::noop_coroutine();
  }
  void await_resume() const noexcept {}
};

struct PromiseBase {
  std::coroutine_handle<> continuation;
  std::exception_ptr error;

  std::suspend_always initial_suspend() const noexcept { return {}; }
  FinalAwaiter final_suspend() const noexcept { return {}; }
  void unhandled_exception() noexcept { error = std::current_exception(); }
};

}  // namespace detail

template <class T>
class [[nodiscard]] Task {
 public:
  struct promise_type : detail::PromiseBase {
    std::optional<T> value;

    Task get_return_object() { return Task(std::coroutine_handle<promise_type>::from_promise(*this)); }
    template <class U>
    void return_value(U&& v) {
      value.emplace(std::forward<U>(v));
    }
  };

  Task(Task&& other) noexcept : h_(std::exchange(other.h_, {})) {}
  Task& operator=(Task&& other) noexcept {
    if (this != &other) {
      if (h_) h_.destroy();
      h_ = std::exchange(other.h_, {});
    }
    return *this;
  }
  ~Task() {
    if (h_) h_.destroy();
  }

  bool await_ready() const noexcept { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> caller) noexcept {
    h_.promise().continuation = caller;
    return h_;
  }
  T await_resume() {
    auto& p = h_.promise();
    if (p.error) std::rethrow_exception(p.error);
    return std::move(*p.value);
  }

 private:
  explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
  std::coroutine_handle<promise_type> h_;
};

template <>
class [[nodiscard]] Task<void> {
 public:
  struct promise_type : detail::PromiseBase {
    Task get_return_object() { return Task(std::coroutine_handle<promise_type>::from_promise(*this)); }
    void return_void() noexcept {}
  };

  Task(Task&& other) noexcept : h_(std::exchange(other.h_, {})) {}
  Task& operator=(Task&& other) noexcept {
    if (this != &other) {
      if (h_) h_.destroy();
      h_ = std::exchange(other.h_, {});
    }
    return *this;
  }
  ~Task() {
    if (h_) h_.destroy();
  }

  bool await_ready() const noexcept { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> caller) noexcept {
    h_.promise().continuation = caller;
    return h_;
  }
  void await_resume() {
    if (auto e = h_.promise().error) std::rethrow_exception(e);
  }

 private:
  explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
  std::coroutine_handle<promise_type> h_;
};

/// Single-shot completion that one coroutine may await. Copies share state.
/// Completing twice is a no-op, so racing sources (reply vs. timeout vs.
/// peer failure) can all try.
template <class T>
class AsyncResult {
 public:
  explicit AsyncResult(Executor& ex) : s_(std::make_shared<State>(ex)) {}

  bool done() const noexcept { return s_->done; }

  bool set_value(T v) {
    if (s_->done) return false;
    s_->value.emplace(std::move(v));
    finish();
    return true;
  }

  bool set_error(std::exception_ptr e) {
    if (s_->done) return false;
    s_->error = std::move(e);
    finish();
    return true;
  }

  // A separate awaiter object; GCC 11 rejects awaiting an lvalue whose own
  // await_resume returns a class type by value.
  auto operator co_await() const noexcept { return Awaiter{s_}; }

 private:
  struct State;

  struct Awaiter {
    std::shared_ptr<State> s;
    bool await_ready() const noexcept { return s->done; }
    void await_suspend(std::coroutine_handle<> h) noexcept { s->waiter = h; }
    T await_resume() {
      if (s->error) std::rethrow_exception(s->error);
      return std::move(*s->value);
    }
  };

  struct State {
    explicit State(Executor& e) : ex(&e) {}
    Executor* ex;
    bool done = false;
    std::optional<T> value;
    std::exception_ptr error;
    std::coroutine_handle<> waiter;
  };

  void finish() {
    s_->done = true;
    if (auto h = std::exchange(s_->waiter, {})) {
      s_->ex->post([h] { h.resume(); });
    }
  }

  std::shared_ptr<State> s_;
};

using Completion = AsyncResult<Unit>;

namespace detail {

struct Detached {
  struct promise_type {
    Detached get_return_object() const noexcept { return {}; }
    std::suspend_never initial_suspend() const noexcept { return {}; }
    std::suspend_never final_suspend() const noexcept { return {}; }
    void return_void() const noexcept {}
    void unhandled_exception() const noexcept { std::terminate(); }
  };
};

template <class T>
Detached run_detached(Task<T> task, std::function<void(std::exception_ptr)> done) {
  std::exception_ptr error;
  try {
    co_await std::move(task);
  } catch (...) {
    error = std::current_exception();
  }
  if (done) done(error);
}

}  // namespace detail

/// Starts task on the executor. done (optional) receives the outcome.
template <class T>
void spawn(Executor& ex, Task<T> task, std::function<void(std::exception_ptr)> done = {}) {
  auto holder = std::make_shared<Task<T>>(std::move(task));
  ex.post([holder, done = std::move(done)]() mutable {
    detail::run_detached(std::move(*holder), std::move(done));
  });
}

/// Suspends the calling coroutine for d on ex.
inline Completion sleep_for(Executor& ex, Duration d) {
  Completion c(ex);
  ex.schedule(d, [c]() mutable { c.set_value(Unit{}); });
  return c;
}

}  // namespace dscoop
