#include "dscoop/gc.hpp"

#include "dscoop/errors.hpp"

namespace dscoop {

ProxyBinding& ProxyTable::ensure(const ObjectRef& remote, ProcessId proxy_process) {
  auto [it, inserted] = bindings_.try_emplace(remote);
  if (inserted) it->second = ProxyBinding{remote, next_proxy_object_++, proxy_process, 0};
  return it->second;
}

ProxyBinding* ProxyTable::find(const ObjectRef& remote) {
  auto it = bindings_.find(remote);
  return it == bindings_.end() ? nullptr : &it->second;
}

const ProxyBinding* ProxyTable::find(const ObjectRef& remote) const {
  auto it = bindings_.find(remote);
  return it == bindings_.end() ? nullptr : &it->second;
}

std::optional<ProxyBinding> ProxyTable::remove(const ObjectRef& remote) {
  auto node = bindings_.extract(remote);
  if (node.empty()) return std::nullopt;
  return std::move(node.mapped());
}

void RefCountTable::grant(const ObjectRef& ref, NodeId holder, std::uint64_t count) {
  totals_[ref] += count;
  per_holder_[{ref, holder}] += static_cast<std::int64_t>(count);
}

void RefCountTable::release(const ObjectRef& ref, NodeId holder, std::uint64_t count) {
  auto it = totals_.find(ref);
  const std::uint64_t have = it == totals_.end() ? 0 : it->second;
  if (count > have) {
    throw Error(Errc::UnderflowRelease,
                "UnderflowRelease: " + to_string(ref) + " has " + std::to_string(have) + ", release " +
                    std::to_string(count));
  }
  it->second -= count;
  per_holder_[{ref, holder}] -= static_cast<std::int64_t>(count);
}

std::uint64_t RefCountTable::count(const ObjectRef& ref) const {
  auto it = totals_.find(ref);
  return it == totals_.end() ? 0 : it->second;
}

std::int64_t RefCountTable::net(const ObjectRef& ref, NodeId holder) const {
  auto it = per_holder_.find({ref, holder});
  return it == per_holder_.end() ? 0 : it->second;
}

std::vector<ObjectRef> RefCountTable::collectible() const {
  std::vector<ObjectRef> out;
  for (const auto& [ref, n] : totals_) {
    if (n == 0) out.push_back(ref);
  }
  return out;
}

void RefCountTable::forget(const ObjectRef& ref) {
  totals_.erase(ref);
  std::erase_if(per_holder_, [&](const auto& kv) { return kv.first.first == ref; });
}

}  // namespace dscoop
