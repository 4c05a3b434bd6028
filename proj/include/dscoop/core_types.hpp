#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dscoop {

/// Unique identifier of a runtime instance. Assigned by configuration and
/// independent of any transport address.
struct NodeId {
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(NodeId, NodeId) = default;
};

/// Identifier of a process (handler or client) within its node.
struct ProcessId {
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(ProcessId, ProcessId) = default;
};

using ObjectId = std::uint64_t;

/// Network-wide object handle. Refs naming a whole process carry object 0.
struct ObjectRef {
  NodeId node;
  ProcessId process;
  ObjectId object = 0;

  friend constexpr auto operator<=>(const ObjectRef&, const ObjectRef&) = default;
};

/// A process seen from the network: the node it lives on plus its local id.
/// Used to name clients of separate blocks.
struct ClientId {
  NodeId node;
  ProcessId process;

  friend constexpr auto operator<=>(const ClientId&, const ClientId&) = default;
};

enum class CallKind : std::uint8_t { AsyncCommand, SyncCommand, Query };

std::strong_ordering compare_nodes(NodeId a, NodeId b) noexcept;
bool is_local(const ObjectRef& ref, NodeId self) noexcept;
bool same_process(const ObjectRef& ref, ClientId caller) noexcept;

inline ObjectRef process_ref(NodeId node, ProcessId process) { return {node, process, 0}; }
inline ClientId owner_of(const ObjectRef& ref) { return {ref.node, ref.process}; }

/// Thrown when a Value is read as the wrong alternative.
class ValueTypeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Unit {
  friend constexpr bool operator==(Unit, Unit) = default;
};

/// Argument and result carrier for remote calls.
class Value {
 public:
  enum class Type : std::uint8_t { Unit = 0, Bool = 1, Int = 2, Nat = 3, Text = 4, Ref = 5 };

  Value() = default;

  static Value unit() { return Value{}; }
  static Value boolean(bool b) { return Value{Storage{b}}; }
  static Value integer(std::int64_t i) { return Value{Storage{i}}; }
  static Value nat(std::uint64_t n) { return Value{Storage{n}}; }
  static Value text(std::string s) { return Value{Storage{std::move(s)}}; }
  static Value ref(ObjectRef r) { return Value{Storage{r}}; }

  Type type() const noexcept { return static_cast<Type>(data_.index()); }

  bool as_bool() const { return get<bool>("Bool"); }
  std::int64_t as_int() const { return get<std::int64_t>("Int"); }
  std::uint64_t as_nat() const { return get<std::uint64_t>("Nat"); }
  const std::string& as_text() const { return get<std::string>("Text"); }
  const ObjectRef& as_ref() const { return get<ObjectRef>("Ref"); }

  bool is_ref() const noexcept { return type() == Type::Ref; }
  bool is_unit() const noexcept { return type() == Type::Unit; }

  friend bool operator==(const Value&, const Value&) = default;

 private:
  // Alternative order matches Type.
  using Storage = std::variant<Unit, bool, std::int64_t, std::uint64_t, std::string, ObjectRef>;

  explicit Value(Storage s) : data_(std::move(s)) {}

  template <class T>
  const T& get(const char* name) const {
    if (auto* p = std::get_if<T>(&data_)) return *p;
    throw ValueTypeError(std::string("value is not a ") + name);
  }

  Storage data_;
};

using Values = std::vector<Value>;

/// Builds a Values list. Prefer this over a braced list as a call argument
/// inside co_await expressions; GCC 11 crashes on the latter.
template <class... A>
Values make_values(A&&... a) {
  Values v;
  v.reserve(sizeof...(A));
  (v.push_back(Value(std::forward<A>(a))), ...);
  return v;
}

/// A call with its arguments already evaluated. Compensation closures travel
/// and are stored in this form.
struct CapturedCall {
  ObjectRef target;
  std::string method;
  Values args;

  friend bool operator==(const CapturedCall&, const CapturedCall&) = default;
};

std::string to_string(NodeId id);
std::string to_string(const ObjectRef& ref);
std::string to_string(ClientId id);
std::string to_string(const Value& v);
std::string to_string(CallKind kind);

std::ostream& operator<<(std::ostream& os, NodeId id);
std::ostream& operator<<(std::ostream& os, ProcessId id);
std::ostream& operator<<(std::ostream& os, const ObjectRef& ref);
std::ostream& operator<<(std::ostream& os, ClientId id);
std::ostream& operator<<(std::ostream& os, const Value& v);

}  // namespace dscoop

template <>
struct std::hash<dscoop::NodeId> {
  std::size_t operator()(dscoop::NodeId id) const noexcept { return std::hash<std::uint64_t>{}(id.value); }
};
