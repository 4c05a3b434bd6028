#pragma once

// Exhaustive check of one handler's queue of queues against a brute-force
// model. Two clients each lock, log up to three calls, and unlock; every
// interleaving of their events with handler steps is replayed on a real
// HandlerProcess. The model: a client's calls run contiguously and in program
// order, clients run in the order their subqueues were created, and each
// client's unlock is processed right after its last call.

#include <functional>
#include <string>
#include <vector>

#include "dscoop/qoq.hpp"

namespace dscoop::qoqmodel {

struct Recorder : Object {
  std::vector<std::string> log;
};

inline std::shared_ptr<const MethodTable> recorder_class() {
  static const auto table = ClassBuilder<Recorder>()
                                .command("run",
                                         [](Recorder& r, const Values& args, CallContext&) {
                                           r.log.push_back(args.at(0).as_text());
                                         })
                                .query("get", [](Recorder& r, const Values&, CallContext&) {
                                  return Value::nat(r.log.size());
                                })
                                .build();
  return table;
}

/// Records executed calls and processed unlocks in order.
class RecordingSink final : public StepSink {
 public:
  std::vector<std::string> trace;

  std::unique_ptr<CallContext> begin_call(HandlerProcess& h, ClientId, const LoggedCall& call) override {
    (void)h;
    return std::make_unique<DetachedContext>(call.target);
  }
  void on_executed(HandlerProcess&, ClientId, const LoggedCall& call, Value) override {
    trace.push_back(call.args.empty() ? call.method : call.args[0].as_text());
  }
  void on_failed(HandlerProcess&, ClientId, const LoggedCall& call, Errc, const std::string&) override {
    trace.push_back("failed:" + call.method);
  }
  void on_unlocked(HandlerProcess&, ClientId client, const UnlockMarker&) override {
    trace.push_back("U" + std::to_string(client.process.value));
  }
};

enum class Ev { LockA, CallA, UnlockA, LockB, CallB, UnlockB, Step };

struct Result {
  std::uint64_t schedules = 0;
  std::uint64_t mismatches = 0;
  std::string first_mismatch;
};

inline ClientId client_a() { return {NodeId{1}, ProcessId{1}}; }
inline ClientId client_b() { return {NodeId{2}, ProcessId{2}}; }

/// A handler plus the two clients' progress, driven one event at a time.
class Harness {
 public:
  Harness() {
    h_.add_object(1, ObjectSlot{std::make_unique<Recorder>(), recorder_class()});
  }

  void apply(Ev e) {
    switch (e) {
      case Ev::LockA: h_.qoq().ensure_subqueue(client_a()); break;
      case Ev::LockB: h_.qoq().ensure_subqueue(client_b()); break;
      case Ev::CallA: h_.qoq().enqueue(client_a(), call("a" + std::to_string(++na_))); break;
      case Ev::CallB: h_.qoq().enqueue(client_b(), call("b" + std::to_string(++nb_))); break;
      case Ev::UnlockA: h_.qoq().append_unlock(client_a(), UnlockMarker{}); break;
      case Ev::UnlockB: h_.qoq().append_unlock(client_b(), UnlockMarker{}); break;
      case Ev::Step: (void)handler_step(h_, sink_); break;
    }
  }

  /// Whether a handler step would do anything.
  bool can_step() const {
    const auto& qs = h_.qoq().subqueues();
    return !qs.empty() && !qs.front().entries.empty();
  }

  std::vector<std::string> drain() {
    while (handler_step(h_, sink_) != StepOutcome::Idle) {
    }
    return sink_.trace;
  }

 private:
  LoggedCall call(const std::string& name) const {
    LoggedCall c;
    c.target = ObjectRef{NodeId{9}, ProcessId{7}, 1};
    c.method = "run";
    c.args = {Value::text(name)};
    return c;
  }

  HandlerProcess h_{ProcessId{7}};
  RecordingSink sink_;
  int na_ = 0;
  int nb_ = 0;
};

inline std::vector<std::string> replay(const std::vector<Ev>& schedule) {
  Harness h;
  for (Ev e : schedule) h.apply(e);
  return h.drain();
}

/// The model's execution for a schedule: whole clients in lock order.
inline std::vector<std::string> expected(const std::vector<Ev>& schedule, int ka, int kb) {
  std::vector<std::string> out;
  auto client = [&](char c, int k, int pid) {
    for (int i = 1; i <= k; ++i) out.push_back(std::string(1, c) + std::to_string(i));
    out.push_back("U" + std::to_string(pid));
  };
  for (Ev e : schedule) {
    if (e == Ev::LockA) client('a', ka, 1);
    if (e == Ev::LockB) client('b', kb, 2);
  }
  return out;
}

/// Enumerates every schedule of the two clients' events with handler steps
/// placed wherever a step does something (an idle step changes nothing, so
/// schedules that differ only in idle steps are the same behaviour).
inline void enumerate(int ka, int kb, const std::function<void(const std::vector<Ev>&)>& visit) {
  std::vector<Ev> seq_a{Ev::LockA}, seq_b{Ev::LockB};
  for (int i = 0; i < ka; ++i) seq_a.push_back(Ev::CallA);
  for (int i = 0; i < kb; ++i) seq_b.push_back(Ev::CallB);
  seq_a.push_back(Ev::UnlockA);
  seq_b.push_back(Ev::UnlockB);
  std::vector<Ev> cur;
  std::function<void(std::size_t, std::size_t)> go = [&](std::size_t ia, std::size_t ib) {
    if (ia == seq_a.size() && ib == seq_b.size()) {
      visit(cur);
      return;
    }
    if (ia < seq_a.size()) {
      cur.push_back(seq_a[ia]);
      go(ia + 1, ib);
      cur.pop_back();
    }
    if (ib < seq_b.size()) {
      cur.push_back(seq_b[ib]);
      go(ia, ib + 1);
      cur.pop_back();
    }
    Harness h;
    for (Ev e : cur) h.apply(e);
    if (h.can_step()) {
      cur.push_back(Ev::Step);
      go(ia, ib);
      cur.pop_back();
    }
  };
  go(0, 0);
}

/// Every combination of 0..max_calls calls per client.
inline Result explore(int max_calls) {
  Result r;
  for (int ka = 0; ka <= max_calls; ++ka) {
    for (int kb = 0; kb <= max_calls; ++kb) {
      enumerate(ka, kb, [&](const std::vector<Ev>& s) {
        ++r.schedules;
        const auto got = replay(s);
        const auto want = expected(s, ka, kb);
        if (got != want && r.mismatches++ == 0) {
          for (const auto& x : got) r.first_mismatch += x + " ";
        }
      });
    }
  }
  return r;
}

}  // namespace dscoop::qoqmodel
