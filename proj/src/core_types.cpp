#include "dscoop/core_types.hpp"

#include <ostream>
#include <sstream>

namespace dscoop {

std::strong_ordering compare_nodes(NodeId a, NodeId b) noexcept { return a.value <=> b.value; }

bool is_local(const ObjectRef& ref, NodeId self) noexcept { return ref.node == self; }

bool same_process(const ObjectRef& ref, ClientId caller) noexcept {
  return ref.node == caller.node && ref.process == caller.process;
}

std::string to_string(NodeId id) { return "N" + std::to_string(id.value); }

std::string to_string(const ObjectRef& ref) {
  std::ostringstream os;
  os << ref;
  return os.str();
}

std::string to_string(ClientId id) {
  std::ostringstream os;
  os << id;
  return os.str();
}

std::string to_string(const Value& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string to_string(CallKind kind) {
  switch (kind) {
    case CallKind::AsyncCommand: return "command";
    case CallKind::SyncCommand: return "sync-command";
    case CallKind::Query: return "query";
  }
  return "?";
}

std::ostream& operator<<(std::ostream& os, NodeId id) { return os << 'N' << id.value; }
std::ostream& operator<<(std::ostream& os, ProcessId id) { return os << 'P' << id.value; }

std::ostream& operator<<(std::ostream& os, const ObjectRef& ref) {
  return os << '<' << ref.node.value << '.' << ref.process.value << '.' << ref.object << '>';
}

std::ostream& operator<<(std::ostream& os, ClientId id) {
  return os << id.node << '/' << id.process;
}

std::ostream& operator<<(std::ostream& os, const Value& v) {
  switch (v.type()) {
    case Value::Type::Unit: return os << "()";
    case Value::Type::Bool: return os << (v.as_bool() ? "true" : "false");
    case Value::Type::Int: return os << v.as_int();
    case Value::Type::Nat: return os << v.as_nat() << 'u';
    case Value::Type::Text: return os << '"' << v.as_text() << '"';
    case Value::Type::Ref: return os << v.as_ref();
  }
  return os;
}

}  // namespace dscoop
