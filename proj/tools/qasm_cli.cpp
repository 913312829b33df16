#include <iostream>

#include <CLI11.hpp>

#include "qasm/qasm.hpp"

using namespace qasm;
using namespace qasm::harness;

namespace {

int run(const std::string& name, const RunOptions& opts, const std::string& csv) {
  ScenarioOutcome out = run_named(name, opts);
  for (const auto& v : out.variants) {
    std::cout << "[" << v.label << "]\n";
    for (const auto& [k, val] : v.report.summary) std::cout << "  " << k << " = " << val << "\n";
  }
  for (const auto& [k, val] : out.extra) std::cout << k << " = " << val << "\n";
  for (const auto& c : out.checks) {
    std::cout << (c.pass ? "PASS  " : "FAIL  ") << c.name;
    if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
    std::cout << "\n";
  }
  if (!csv.empty()) {
    if (out.variants.size() == 1) {
      emit_csv(out.variants[0].report, csv);
    } else {
      for (const auto& v : out.variants) emit_csv(v.report, std::filesystem::path(csv) / v.label);
    }
  }
  std::cout << (out.ok() ? "OK" : "INVARIANT VIOLATED") << "\n";
  return out.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QUIC-aware stateful middlebox toolkit"};
  app.require_subcommand(1);

  auto* list = app.add_subcommand("list", "List the named scenarios");
  auto* cmd = app.add_subcommand("run", "Run a named scenario; exits 0 iff its invariants hold");

  std::string scenario, mode, csv;
  std::uint64_t seed = 1;
  std::uint64_t every = 0;
  double hz = 0, sec = 0, rate = 0;
  std::size_t nats = 0, backends = 0, cap = 0;
  std::uint32_t pool = 0;
  bool loopback = false;

  std::vector<std::string> names;
  for (const auto& s : scenarios()) names.emplace_back(s.name);
  cmd->add_option("scenario", scenario, "Scenario name")->required()->check(CLI::IsMember(names));
  cmd->add_option("--mode", mode, "Mode of the QUIC-aware variant")
      ->check(CLI::IsMember({"default", "reactive", "proactive"}));
  cmd->add_option("--seed", seed, "Random seed");
  auto* o_every = cmd->add_option("--migrate-every", every, "Migrate every N packets")->check(CLI::PositiveNumber);
  auto* o_hz = cmd->add_option("--migrate-hz", hz, "Migrate F times per second")->check(CLI::PositiveNumber);
  auto* o_sec = cmd->add_option("--migrate-sec", sec, "Migrate every T seconds")->check(CLI::PositiveNumber);
  o_every->excludes(o_hz)->excludes(o_sec);
  o_hz->excludes(o_sec);
  auto* o_nats = cmd->add_option("--nats", nats, "Chain length")->check(CLI::Range(0, 5));
  auto* o_pool = cmd->add_option("--pool-size", pool, "NAT public ports")->check(CLI::PositiveNumber);
  auto* o_rate = cmd->add_option("--rate-limit", rate, "Rate limit in packets per second")->check(CLI::PositiveNumber);
  auto* o_backends = cmd->add_option("--backends", backends, "Load balancer backends")->check(CLI::PositiveNumber);
  auto* o_cap = cmd->add_option("--conntrack-cap", cap, "Flow table capacity")->check(CLI::PositiveNumber);
  cmd->add_option("--csv", csv, "Directory for CSV output");
  cmd->add_flag("--loopback", loopback, "Run over UDP loopback in real time");

  CLI11_PARSE(app, argc, argv);

  if (*list) {
    for (const auto& s : scenarios()) std::cout << s.name << "  " << s.summary << "\n";
    return 0;
  }

  RunOptions opts;
  opts.seed = seed;
  opts.loopback = loopback;
  if (!mode.empty()) opts.mode = parse_mode(mode);
  if (*o_every) opts.migration = MigrationPolicy{MigrationPolicy::EveryNPackets{every}};
  if (*o_hz) opts.migration = MigrationPolicy{MigrationPolicy::RateHz{hz}};
  if (*o_sec) opts.migration = MigrationPolicy{MigrationPolicy::EveryTSeconds{sec}};
  if (*o_nats) opts.nats = nats;
  if (*o_pool) opts.pool_size = pool;
  if (*o_rate) opts.rate_limit = rate;
  if (*o_backends) opts.backends = backends;
  if (*o_cap) opts.conntrack_capacity = cap;

  try {
    return run(scenario, opts, csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
