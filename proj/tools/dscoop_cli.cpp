// Command-line front end: run a node over TCP, or run a benchmark.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "dscoop/apps.hpp"
#include "dscoop/bench.hpp"
#include "dscoop/node.hpp"
#include "dscoop/tcp.hpp"

using namespace dscoop;

namespace {

struct NodeOptions {
  std::uint64_t id = 0;
  std::string listen = "127.0.0.1:0";
  std::string index;
  std::uint64_t accounts = 2;
  std::uint64_t balance = 1000;
  std::uint64_t ping_ms = 0;
};

int run_node(const NodeOptions& o) {
  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);

  LoopExecutor loop;
  TcpTransport tcp(loop);
  const auto address = tcp.listen(o.listen);

  NodeConfig config;
  config.id = NodeId{o.id};
  config.ping_interval = std::chrono::milliseconds(o.ping_ms);
  if (o.index == "BANK") {
    config.index_factory = [&o](Node& n) { return apps::create_bank(n, o.accounts, o.balance); };
  } else if (o.index == "LOG") {
    config.index_factory = apps::create_log;
  } else if (o.index == "PIPE") {
    config.index_factory = apps::create_buffer;
  }
  if (config.index_factory) config.listen_address = address;

  std::unique_ptr<Node> node;
  loop.invoke([&] { node = std::make_unique<Node>(std::move(config), loop, tcp); });
  std::cout << "node " << o.id << " listening on " << address << std::endl;

  int sig = 0;
  sigwait(&stop, &sig);
  loop.invoke([&] { node.reset(); });
  tcp.shutdown();
  loop.stop();
  return 0;
}

int run_bench_cmd(const bench::BenchSpec& spec, const std::string& out) {
  const auto r = bench::run_bench(spec);
  const auto row = bench::csv_row(r);
  std::cout << bench::csv_header() << '\n' << row << std::endl;
  if (!out.empty()) {
    const bool fresh = !std::filesystem::exists(out) || std::filesystem::file_size(out) == 0;
    std::ofstream f(out, std::ios::app);
    if (!f) {
      std::cerr << "cannot write " << out << '\n';
      return 1;
    }
    if (fresh) f << bench::csv_header() << '\n';
    f << row << '\n';
  }
  if (!r.check_passed) {
    std::cerr << "check failed: " << r.check_detail << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dscoop"};
  app.require_subcommand(1);

  NodeOptions node_opts;
  auto* node_cmd = app.add_subcommand("node", "Run a node over TCP until interrupted");
  node_cmd->add_option("--id", node_opts.id, "Node id")->required()->check(CLI::PositiveNumber);
  node_cmd->add_option("--listen", node_opts.listen, "Listen address host:port")->capture_default_str();
  node_cmd->add_option("--index", node_opts.index, "Index object served to clients")
      ->check(CLI::IsMember({"BANK", "LOG", "PIPE"}));
  node_cmd->add_option("--accounts", node_opts.accounts, "Accounts in a BANK index")->capture_default_str();
  node_cmd->add_option("--balance", node_opts.balance, "Initial balance of BANK accounts")->capture_default_str();
  node_cmd->add_option("--ping-ms", node_opts.ping_ms, "Liveness ping interval, 0 disables")->capture_default_str();

  bench::BenchSpec spec;
  std::string transport = "simnet";
  std::string out;
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark and emit a CSV row");
  bench_cmd->add_option("--name", spec.name, "Benchmark")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(bench::kBenchNames), std::end(bench::kBenchNames))));
  bench_cmd->add_option("--iterations", spec.iterations, "Iterations (rounds or entries per client)")
      ->capture_default_str();
  bench_cmd->add_option("--clients", spec.clients, "Clients (philosophers for philosophers)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--transport", transport, "socket or simnet")
      ->capture_default_str()
      ->check(CLI::IsMember({"socket", "simnet"}));
  bench_cmd->add_option("--seed", spec.seed, "Simnet seed")->capture_default_str();
  bench_cmd->add_option("--out", out, "Append the row to this CSV file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*node_cmd) return run_node(node_opts);
    spec.transport = *bench::parse_transport(transport);
    return run_bench_cmd(spec, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
