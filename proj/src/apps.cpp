#include "dscoop/apps.hpp"

#include <charconv>
#include <cmath>

namespace dscoop::apps {

namespace {

std::uint64_t nat_arg(const Values& args, std::size_t i) {
  if (i >= args.size()) throw Error(Errc::ArityViolation, "missing argument " + std::to_string(i));
  return args[i].as_nat();
}

ProcessId handler_for(Node& node, std::optional<ProcessId> handler) {
  return handler ? *handler : node.create_handler();
}

}  // namespace

// Bank

std::shared_ptr<const MethodTable> account_class() {
  static const auto table = ClassBuilder<Account>()
                                .query("balance", [](Account& a, const Values&, CallContext&) {
                                  return Value::nat(a.balance);
                                })
                                .command("set_balance",
                                         [](Account& a, const Values& args, CallContext& ctx) {
                                           if (a.supplier_compensation) {
                                             ctx.compensate("set_balance", {Value::nat(a.balance)});
                                           }
                                           a.balance = nat_arg(args, 0);
                                         })
                                .command("deposit",
                                         [](Account& a, const Values& args, CallContext& ctx) {
                                           const auto am = nat_arg(args, 0);
                                           if (a.supplier_compensation) {
                                             ctx.compensate("set_balance", {Value::nat(a.balance)});
                                           }
                                           a.balance += am;
                                         })
                                .build();
  return table;
}

ObjectRef create_account(Node& node, std::uint64_t balance, bool supplier_compensation,
                         std::optional<ProcessId> handler) {
  auto state = std::make_unique<Account>();
  state->balance = balance;
  state->supplier_compensation = supplier_compensation;
  return node.create_object(handler_for(node, handler), std::move(state), account_class());
}

std::shared_ptr<const MethodTable> bank_class() {
  static const auto table = ClassBuilder<Bank>()
                                .query("accounts", [](Bank& b, const Values&, CallContext&) {
                                  return Value::nat(b.accounts.size());
                                })
                                .query("account",
                                       [](Bank& b, const Values& args, CallContext&) {
                                         const auto i = nat_arg(args, 0);
                                         if (i >= b.accounts.size()) throw Error(Errc::NoSuchObject, "account");
                                         return Value::ref(b.accounts[i]);
                                       })
                                .mutating_query("open_account",
                                                [](Bank& b, const Values& args, CallContext&) {
                                                  b.accounts.push_back(create_account(*b.node, nat_arg(args, 0)));
                                                  return Value::ref(b.accounts.back());
                                                })
                                .build();
  return table;
}

ObjectRef create_bank(Node& node, std::size_t accounts, std::uint64_t initial_balance) {
  auto state = std::make_unique<Bank>();
  state->node = &node;
  for (std::size_t i = 0; i < accounts; ++i) state->accounts.push_back(create_account(node, initial_balance));
  return node.create_object(node.create_handler(), std::move(state), bank_class());
}

Task<TransferResult> transfer(ClientProcess& client, ObjectRef s, ObjectRef t, std::uint64_t am,
                              Compensation comp) {
  TransferResult r;
  auto block = co_await client.open_block({s, t});
  const Value b1 = co_await block.query(s, "balance");
  const Value b2 = co_await block.query(s, "balance");
  r.first_read = b1.as_nat();
  r.second_read = b2.as_nat();
  if (r.first_read >= am) {
    if (comp == Compensation::Client) block.compensate(s, "set_balance", {Value::nat(r.first_read)});
    co_await block.command(s, "set_balance", make_values(Value::nat(r.first_read - am)));
    const Value tv = co_await block.query(t, "balance");
    const auto tb = tv.as_nat();
    if (comp == Compensation::Client) block.compensate(t, "set_balance", {Value::nat(tb)});
    co_await block.command(t, "set_balance", make_values(Value::nat(tb + am)));
    r.done = true;
  }
  co_await block.close();
  co_return r;
}

Task<TransferResult> withdraw(ClientProcess& client, ObjectRef s, std::uint64_t am) {
  TransferResult r;
  auto block = co_await client.open_block({s});
  const Value b1 = co_await block.query(s, "balance");
  const Value b2 = co_await block.query(s, "balance");
  r.first_read = b1.as_nat();
  r.second_read = b2.as_nat();
  if (r.first_read >= am) {
    co_await block.command(s, "set_balance", make_values(Value::nat(r.first_read - am)));
    r.done = true;
  }
  co_await block.close();
  co_return r;
}

// Philosophers

std::shared_ptr<const MethodTable> fork_class() {
  static const auto table = ClassBuilder<Fork>()
                                .command("use", [](Fork& f, const Values&, CallContext&) { ++f.uses; })
                                .query("uses", [](Fork& f, const Values&, CallContext&) { return Value::nat(f.uses); })
                                .build();
  return table;
}

ObjectRef create_fork(Node& node) {
  return node.create_object(node.create_handler(), std::make_unique<Fork>(), fork_class());
}

Task<void> philosopher(ClientProcess& client, ObjectRef left, ObjectRef right, std::uint64_t rounds) {
  for (std::uint64_t i = 0; i < rounds; ++i) {
    auto block = co_await client.open_block({left, right});
    co_await block.command(left, "use");
    co_await block.command(right, "use");
    co_await block.close();
  }
}

// Log

std::shared_ptr<const MethodTable> log_class() {
  static const auto table =
      ClassBuilder<Log>()
          .command("append",
                   [](Log& l, const Values& args, CallContext& ctx) {
                     if (args.empty()) throw Error(Errc::ArityViolation, "append needs an entry");
                     ctx.compensate("truncate", {Value::nat(l.entries.size())});
                     l.entries.push_back(args[0].as_text());
                   })
          .command("truncate",
                   [](Log& l, const Values& args, CallContext&) {
                     const auto n = nat_arg(args, 0);
                     if (n < l.entries.size()) l.entries.resize(n);
                   })
          .query("length", [](Log& l, const Values&, CallContext&) { return Value::nat(l.entries.size()); })
          .query("entry",
                 [](Log& l, const Values& args, CallContext&) {
                   const auto i = nat_arg(args, 0);
                   if (i >= l.entries.size()) throw Error(Errc::NoSuchObject, "entry " + std::to_string(i));
                   return Value::text(l.entries[i]);
                 })
          .build();
  return table;
}

ObjectRef create_log(Node& node) {
  return node.create_object(node.create_handler(), std::make_unique<Log>(), log_class());
}

Task<void> log_client(ClientProcess& client, std::vector<ObjectRef> servers, std::uint64_t entries,
                      std::string tag) {
  for (std::uint64_t i = 0; i < entries; ++i) {
    const std::string entry = tag + "#" + std::to_string(i);
    auto block = co_await client.open_block(servers);
    for (const auto& s : servers) co_await block.command(s, "append", make_values(Value::text(entry)));
    co_await block.close();
  }
}

// Pipeline

std::shared_ptr<const MethodTable> buffer_class() {
  static const auto table = ClassBuilder<Buffer>()
                                .command("put", [](Buffer& b, const Values& args, CallContext&) { b.items.push_back(args); })
                                .query("front",
                                       [](Buffer& b, const Values& args, CallContext&) {
                                         const auto i = nat_arg(args, 0);
                                         if (b.items.empty() || i >= b.items.front().size()) return Value::unit();
                                         return b.items.front()[i];
                                       })
                                .command("pop",
                                         [](Buffer& b, const Values&, CallContext&) {
                                           if (!b.items.empty()) b.items.pop_front();
                                         })
                                .query("size", [](Buffer& b, const Values&, CallContext&) {
                                  return Value::nat(b.items.size());
                                })
                                .build();
  return table;
}

ObjectRef create_buffer(Node& node) {
  return node.create_object(node.create_handler(), std::make_unique<Buffer>(), buffer_class());
}

Value sqrt_value(std::uint64_t n) {
  auto r = static_cast<std::uint64_t>(std::sqrt(static_cast<long double>(n)));
  while (r > 0 && r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  if (r * r == n) return Value::nat(r);
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, std::sqrt(static_cast<double>(n)));
  return Value::text(std::string(buf, ec == std::errc{} ? end : buf));
}

Value hypot_value(std::uint64_t a, std::uint64_t b) { return sqrt_value(a * a + b * b); }

Task<void> pipeline_stage(ClientProcess& client, ObjectRef in, ObjectRef out, Stage stage, std::uint64_t items) {
  const std::vector<SeparateBlock::Probe> ready{{in, "size", {}}};
  for (std::uint64_t i = 0; i < items; ++i) {
    auto block = co_await client.open_block({in, out});
    co_await block.await_condition(ready, [](const Values& v) { return v.at(0).as_nat() > 0; });
    const Value x = co_await block.query(in, "front", make_values(Value::nat(0)));
    const Value y = co_await block.query(in, "front", make_values(Value::nat(1)));
    co_await block.command(in, "pop");
    Values produced;
    switch (stage) {
      case Stage::SquareFirst:
        produced = {Value::nat(x.as_nat() * x.as_nat()), y};
        break;
      case Stage::SquareSecond:
        produced = {x, Value::nat(y.as_nat() * y.as_nat())};
        break;
      case Stage::Add:
        produced = {Value::nat(x.as_nat() + y.as_nat())};
        break;
      case Stage::Sqrt:
        produced = {sqrt_value(x.as_nat())};
        break;
    }
    co_await block.command(out, "put", std::move(produced));
    co_await block.close();
  }
}

Task<void> pipeline_source(ClientProcess& client, ObjectRef first,
                           std::vector<std::pair<std::uint64_t, std::uint64_t>> inputs) {
  for (const auto& [a, b] : inputs) {
    auto block = co_await client.open_block({first});
    co_await block.command(first, "put", make_values(Value::nat(a), Value::nat(b)));
    co_await block.close();
  }
}

}  // namespace dscoop::apps
