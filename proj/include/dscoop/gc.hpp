#pragma once

// Distributed reference counting.
//
// The owner of an object counts how many references it has handed to other
// nodes, with SHARE adding and RELEASE subtracting. A holder that forwards a
// third-party reference SHAREs it with the owner first, so the count covers
// the new holder before the holder's own reference can be released. Each
// holder's ProxyBinding remembers how many references it received, which is
// what it RELEASEs when the binding is dropped.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "dscoop/core_types.hpp"

namespace dscoop {

struct ProxyBinding {
  ObjectRef remote_ref;
  ObjectId proxy_object = 0;
  ProcessId proxy_process;
  std::uint64_t held = 0;
};

class ProxyTable {
 public:
  /// Returns the binding for remote, creating it on first use.
  ProxyBinding& ensure(const ObjectRef& remote, ProcessId proxy_process);
  ProxyBinding* find(const ObjectRef& remote);
  const ProxyBinding* find(const ObjectRef& remote) const;
  std::optional<ProxyBinding> remove(const ObjectRef& remote);
  std::size_t size() const noexcept { return bindings_.size(); }
  const std::map<ObjectRef, ProxyBinding>& bindings() const noexcept { return bindings_; }

 private:
  std::map<ObjectRef, ProxyBinding> bindings_;
  ObjectId next_proxy_object_ = 1;
};

class RefCountTable {
 public:
  /// The owner handed count references to holder, directly or via SHARE.
  void grant(const ObjectRef& ref, NodeId holder, std::uint64_t count);

  /// Throws UnderflowRelease if the total would drop below zero.
  void release(const ObjectRef& ref, NodeId holder, std::uint64_t count);

  std::uint64_t count(const ObjectRef& ref) const;

  /// Net grants minus releases credited to one holder. May be negative for a
  /// holder that received a forwarded reference somebody else SHAREd.
  std::int64_t net(const ObjectRef& ref, NodeId holder) const;

  bool tracked(const ObjectRef& ref) const { return totals_.contains(ref); }

  /// Tracked objects that no remote holder references any more.
  std::vector<ObjectRef> collectible() const;

  void forget(const ObjectRef& ref);

 private:
  std::map<ObjectRef, std::uint64_t> totals_;
  std::map<std::pair<ObjectRef, NodeId>, std::int64_t> per_holder_;
};

}  // namespace dscoop
