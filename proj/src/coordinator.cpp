#include "dscoop/coordinator.hpp"

#include <algorithm>

#include "dscoop/errors.hpp"

namespace dscoop {

PrelockGate::Admission PrelockGate::request(ClientId c) {
  if (involves(c)) throw Error(Errc::ProtocolViolation, "duplicate PRELOCK from " + to_string(c));
  if (!holder_) {
    holder_ = c;
    return Admission::Admitted;
  }
  waiters_.push_back(c);
  return Admission::Queued;
}

std::optional<ClientId> PrelockGate::admit_next() {
  holder_.reset();
  if (waiters_.empty()) return std::nullopt;
  holder_ = waiters_.front();
  waiters_.pop_front();
  return holder_;
}

std::optional<ClientId> PrelockGate::on_lock(ClientId c) {
  if (!is_holder(c)) throw Error(Errc::ProtocolViolation, "LOCK from non-holder " + to_string(c));
  return admit_next();
}

std::optional<ClientId> PrelockGate::withdraw(ClientId c) {
  if (is_holder(c)) return admit_next();
  std::erase(waiters_, c);
  return std::nullopt;
}

bool PrelockGate::is_waiting(ClientId c) const {
  return std::find(waiters_.begin(), waiters_.end(), c) != waiters_.end();
}

std::vector<ProcessId> LockRecord::pop() {
  if (frames_.empty()) throw Error(Errc::NoActiveLock);
  auto top = std::move(frames_.back());
  frames_.pop_back();
  return top;
}

const std::vector<ProcessId>& LockRecord::top() const {
  if (frames_.empty()) throw Error(Errc::NoActiveLock);
  return frames_.back();
}

void WaitRegistry::arm(ClientId client, std::map<ProcessId, std::uint64_t> versions) {
  regs_[client] = WaitRegistration{client, std::move(versions)};
}

std::vector<ClientId> WaitRegistry::on_version(ProcessId p, std::uint64_t v) {
  std::vector<ClientId> woken;
  for (auto it = regs_.begin(); it != regs_.end();) {
    auto armed = it->second.armed_at.find(p);
    if (armed != it->second.armed_at.end() && v > armed->second) {
      woken.push_back(it->first);
      it = regs_.erase(it);
    } else {
      ++it;
    }
  }
  return woken;
}

std::vector<ClientId> WaitRegistry::clients() const {
  std::vector<ClientId> out;
  for (const auto& [c, _] : regs_) out.push_back(c);
  return out;
}

BlockPlan plan_block(const std::vector<ObjectRef>& targets) {
  BlockPlan plan;
  for (const auto& t : targets) plan[t.node].insert(t.process);
  return plan;
}

}  // namespace dscoop
