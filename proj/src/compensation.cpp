#include "dscoop/compensation.hpp"

#include <algorithm>

namespace dscoop {

std::uint64_t CompensationRegistry::next_timestamp(ClientId client) { return ++clocks_[client]; }

void CompensationRegistry::stage(const CompensationKey& key, CapturedCall undo) {
  std::lock_guard lock(mu_);
  sets_[key].staged = std::move(undo);
}

std::optional<std::uint64_t> CompensationRegistry::commit_staged(const CompensationKey& key) {
  std::lock_guard lock(mu_);
  auto it = sets_.find(key);
  if (it == sets_.end() || !it->second.staged) return std::nullopt;
  const auto ts = next_timestamp(key.client);
  it->second.entries.push_back({ts, std::move(*it->second.staged)});
  it->second.staged.reset();
  return ts;
}

std::uint64_t CompensationRegistry::add(const CompensationKey& key, CapturedCall undo) {
  std::lock_guard lock(mu_);
  const auto ts = next_timestamp(key.client);
  sets_[key].entries.push_back({ts, std::move(undo)});
  return ts;
}

void CompensationRegistry::clear_on_unlock(const CompensationKey& key) {
  std::lock_guard lock(mu_);
  sets_.erase(key);
}

std::vector<CompensationEntry> CompensationRegistry::take_for_replay(ClientId client) {
  std::lock_guard lock(mu_);
  std::vector<CompensationEntry> merged;
  for (auto it = sets_.begin(); it != sets_.end();) {
    if (it->first.client == client) {
      for (auto& e : it->second.entries) merged.push_back(std::move(e));
      it = sets_.erase(it);
    } else {
      ++it;
    }
  }
  std::sort(merged.begin(), merged.end(),
            [](const CompensationEntry& a, const CompensationEntry& b) { return a.timestamp > b.timestamp; });
  return merged;
}

std::vector<CompensationEntry> CompensationRegistry::entries(const CompensationKey& key) const {
  std::lock_guard lock(mu_);
  auto it = sets_.find(key);
  return it == sets_.end() ? std::vector<CompensationEntry>{} : it->second.entries;
}

bool CompensationRegistry::has_staged(const CompensationKey& key) const {
  std::lock_guard lock(mu_);
  auto it = sets_.find(key);
  return it != sets_.end() && it->second.staged.has_value();
}

std::vector<ClientId> CompensationRegistry::clients() const {
  std::lock_guard lock(mu_);
  std::vector<ClientId> out;
  for (const auto& [key, set] : sets_) {
    if (out.empty() || out.back() != key.client) out.push_back(key.client);
  }
  return out;
}

std::size_t CompensationRegistry::size() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [key, set] : sets_) n += set.entries.size();
  return n;
}

}  // namespace dscoop
