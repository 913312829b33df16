#pragma once

#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qasm/harness/loopback.hpp"
#include "qasm/harness/simulator.hpp"

namespace qasm::harness {

/// Command-line style overrides applied to a named scenario. Unset fields
/// keep the scenario's own defaults.
struct RunOptions {
  /// Mode of the QUIC-aware variant. Default runs only the default variant.
  std::optional<MiddleboxMode> mode;
  std::uint64_t seed = 1;
  std::optional<MigrationPolicy> migration;
  std::optional<std::size_t> nats;
  std::optional<std::uint32_t> pool_size;
  std::optional<double> rate_limit;
  std::optional<std::size_t> backends;
  std::optional<std::size_t> conntrack_capacity;
  bool loopback = false;
};

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// One run of a scenario. `hop(i)` stays valid as long as the variant lives.
struct Variant {
  std::string label;
  ScenarioConfig config;
  MetricsReport report;
  std::shared_ptr<void> owner;
  std::vector<Middlebox*> hops;

  Middlebox& hop(std::size_t i) const { return *hops.at(i); }
  const MiddleboxSummary& mb(std::size_t i) const { return report.middleboxes.at(i); }
};

struct ScenarioOutcome {
  std::string name;
  std::vector<Variant> variants;
  std::vector<Check> checks;
  std::vector<std::pair<std::string, double>> extra;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
  const Variant* variant(std::string_view label) const {
    for (const auto& v : variants)
      if (v.label == label) return &v;
    return nullptr;
  }
};

inline Variant run_variant(std::string label, ScenarioConfig cfg, bool loopback) {
  Variant v;
  v.label = std::move(label);
  v.config = cfg;
  if (loopback) {
    auto runner = std::make_shared<LoopbackRunner>(std::move(cfg));
    v.report = runner->run();
    for (std::size_t i = 0; i < v.config.chain.size(); ++i) v.hops.push_back(&runner->middlebox(i));
    v.owner = runner;
  } else {
    auto sim = std::make_shared<Simulator>(std::move(cfg));
    v.report = sim->run();
    for (std::size_t i = 0; i < sim->hop_count(); ++i) v.hops.push_back(&sim->middlebox(i));
    v.owner = sim;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Oracles shared by scenario checks.

/// Outbound drops at a middlebox that admits at most `capacity` distinct
/// client flows, never frees one during the run and keys flows by source
/// address. Every Open or Migrate starts a new flow. Counts packets, in the
/// order the client sends them.
inline std::uint64_t bounded_flow_drops(const ScenarioConfig& cfg, std::size_t capacity) {
  using K = ClientAction::Kind;
  std::map<std::size_t, std::uint64_t> epoch;
  std::set<std::pair<std::size_t, std::uint64_t>> admitted;
  std::uint64_t drops = 0;
  for (const auto& a : client_timeline(cfg)) {
    if (a.kind == K::Migrate) ++epoch[a.slot];
    if (a.kind != K::Open && a.kind != K::Send) continue;
    auto flow = std::make_pair(a.slot, epoch[a.slot]);
    if (admitted.count(flow)) continue;
    if (admitted.size() < capacity)
      admitted.insert(flow);
    else
      ++drops;
  }
  return drops;
}

inline std::uint64_t packets_in(const ScenarioConfig& cfg) {
  std::uint64_t n = 0;
  for (const auto& g : cfg.groups) n += g.packets * g.connections;
  return n;
}

/// Largest excess of forwarded packets over `rate * max(span, 1 s) + capacity`
/// among all runs of consecutive forwards. Non-positive means the bound holds
/// for every window of at least one second.
inline double worst_window_excess(std::vector<Duration> times, double rate, double capacity) {
  std::sort(times.begin(), times.end());
  double worst = -capacity;
  for (std::size_t i = 0; i < times.size(); ++i)
    for (std::size_t j = i; j < times.size(); ++j) {
      double span = std::max(to_seconds(times[j] - times[i]), 1.0);
      worst = std::max(worst, static_cast<double>(j - i + 1) - (rate * span + capacity));
    }
  return worst;
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline Check check(std::string name, bool pass, std::string detail) {
  return Check{std::move(name), pass, std::move(detail)};
}

inline MiddleboxMode aware_mode(const RunOptions& o) { return o.mode.value_or(MiddleboxMode::Reactive); }

inline bool wants_aware(const RunOptions& o) { return !o.mode || *o.mode != MiddleboxMode::Default; }

inline std::vector<MiddleboxSpec> chain_of(MiddleboxKind kind, MiddleboxMode mode, std::size_t n) {
  return std::vector<MiddleboxSpec>(n, MiddleboxSpec{kind, mode});
}

inline void apply(ScenarioConfig& cfg, const RunOptions& o) {
  cfg.seed = o.seed;
  if (o.migration) cfg.groups.at(0).policy = *o.migration;
  if (o.pool_size) cfg.pool_size = *o.pool_size;
  if (o.rate_limit) cfg.rate_limit = *o.rate_limit;
  if (o.backends) cfg.backends = *o.backends;
  if (o.conntrack_capacity) cfg.conntrack_capacity = *o.conntrack_capacity;
}

/// Runs the default variant and, unless the mode is Default, the QUIC-aware
/// one, on the same configuration.
inline void run_pair(ScenarioOutcome& out, const ScenarioConfig& base, MiddleboxKind kind, std::size_t n,
                     const RunOptions& o) {
  ScenarioConfig d = base;
  d.chain = chain_of(kind, MiddleboxMode::Default, n);
  out.variants.push_back(run_variant("default", d, o.loopback));
  if (wants_aware(o)) {
    ScenarioConfig q = base;
    q.chain = chain_of(kind, aware_mode(o), n);
    out.variants.push_back(run_variant(std::string(to_string(aware_mode(o))), q, o.loopback));
  }
}

inline const Variant* aware(const ScenarioOutcome& out) {
  for (const auto& v : out.variants)
    if (v.label != "default") return &v;
  return nullptr;
}

inline void common_checks(ScenarioOutcome& out) {
  for (const auto& v : out.variants) {
    out.checks.push_back(check(v.label + ": offered = forwarded + dropped", v.report.conserved(), ""));
    out.checks.push_back(
        check(v.label + ": no misrouted packets", v.report.misroutes == 0, fmt(v.report.misroutes) + " misroutes"));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Named scenarios.

/// A chain of pass-through hops (none by default).
inline ScenarioOutcome scenario_forward(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "forward";
  cfg.groups[0].packets = 100;
  apply(cfg, o);
  cfg.chain = chain_of(MiddleboxKind::Forwarder, MiddleboxMode::Default, o.nats.value_or(0));
  ScenarioOutcome out{"forward", {}, {}, {}};
  out.variants.push_back(run_variant("forward", cfg, o.loopback));
  common_checks(out);
  const auto& r = out.variants[0].report;
  const auto sent = packets_in(cfg);
  out.checks.push_back(check("every packet reaches the server", r.delivered_server == sent,
                             fmt(r.delivered_server) + " of " + fmt(sent)));
  return out;
}

/// One connection through 10.0.0.45:{10001,10002,10003} then 10.0.0.46:10000.
inline ScenarioOutcome scenario_table1(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "table1";
  cfg.client_addresses = {{Ipv4Addr(10, 0, 0, 45), 10001},
                          {Ipv4Addr(10, 0, 0, 45), 10002},
                          {Ipv4Addr(10, 0, 0, 45), 10003},
                          {Ipv4Addr(10, 0, 0, 46), 10000}};
  cfg.groups[0].packets = 8;
  cfg.groups[0].rate_pps = 10;
  cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{2};
  apply(cfg, o);
  ScenarioOutcome out{"table1", {}, {}, {}};
  run_pair(out, cfg, MiddleboxKind::Nat, 1, o);
  common_checks(out);

  const Endpoint first_public{Ipv4Addr(65, 12, 81, 14), 19450};
  const auto& d = dynamic_cast<Nat&>(out.variants[0].hop(0));
  out.checks.push_back(check("default: one mapping per private endpoint", d.bindings().size() == 4,
                             fmt(d.bindings().size()) + " mappings"));
  if (const Variant* q = aware(out)) {
    const auto& nat = dynamic_cast<Nat&>(q->hop(0));
    const NatBinding* b = nat.binding_for_public(first_public);
    bool history = b && b->private_endpoints == cfg.client_addresses;
    out.checks.push_back(check(q->label + ": one mapping for the connection", nat.bindings().size() == 1,
                               fmt(nat.bindings().size()) + " mappings"));
    out.checks.push_back(check(q->label + ": mapping is 65.12.81.14:19450 holding all four endpoints",
                               history && b->active() == cfg.client_addresses.back(), ""));
  }
  return out;
}

/// Migration on every packet against a pool of P public ports.
inline ScenarioOutcome scenario_nat_dos(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "nat_dos";
  cfg.pool_size = 16;
  apply(cfg, o);
  cfg.groups[0].packets = 2 * std::uint64_t{cfg.pool_size} + 8;
  cfg.groups[0].rate_pps = 1000;
  if (!o.migration) cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{1};
  ScenarioOutcome out{"nat_dos", {}, {}, {}};
  run_pair(out, cfg, MiddleboxKind::Nat, o.nats.value_or(1), o);
  common_checks(out);

  const std::uint64_t expected = bounded_flow_drops(cfg, cfg.pool_size);
  const auto& d = out.variants[0];
  out.extra.emplace_back("expected_default_drops", static_cast<double>(expected));
  out.checks.push_back(check("default: drops match the pool-exhaustion count",
                             d.mb(0).stats.drops_for(DropReason::PoolExhausted) == expected &&
                                 d.mb(0).stats.dropped() == expected,
                             fmt(d.mb(0).stats.dropped()) + " dropped, expected " + fmt(expected)));
  if (const Variant* q = aware(out)) {
    bool no_drops = true, one = true;
    for (const auto& m : q->report.middleboxes) {
      no_drops = no_drops && m.stats.dropped() == 0;
      one = one && m.table_max == 1;
    }
    out.checks.push_back(check(q->label + ": no drops", no_drops, ""));
    out.checks.push_back(check(q->label + ": one binding throughout", one, ""));
    out.checks.push_back(check(q->label + ": every packet delivered", q->report.delivered_server == packets_in(cfg),
                               fmt(q->report.delivered_server) + " of " + fmt(packets_in(cfg))));
  }
  return out;
}

/// 20 pkt/s for 30 s, migrating every 10 packets, through a 5 pkt/s limiter.
inline ScenarioOutcome scenario_rl_bypass(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "rl_bypass";
  cfg.groups[0].packets = 600;
  cfg.groups[0].rate_pps = 20;
  cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{10};
  apply(cfg, o);
  ScenarioOutcome out{"rl_bypass", {}, {}, {}};
  run_pair(out, cfg, MiddleboxKind::RateLimiter, 1, o);
  common_checks(out);

  const double capacity = cfg.rl_capacity > 0 ? cfg.rl_capacity : cfg.rate_limit;
  const double duration = static_cast<double>(cfg.groups[0].packets) / cfg.groups[0].rate_pps;
  const auto& d = out.variants[0];
  const double d_rate = static_cast<double>(d.mb(0).forward_times.size()) / duration;
  out.extra.emplace_back("default_rate_pps", d_rate);
  out.checks.push_back(check("default: delivered rate exceeds the limit", d_rate > cfg.rate_limit,
                             fmt(d_rate) + " pkt/s vs limit " + fmt(cfg.rate_limit)));
  if (const Variant* q = aware(out)) {
    const double excess = worst_window_excess(q->mb(0).forward_times, cfg.rate_limit, capacity);
    const double q_rate = static_cast<double>(q->mb(0).forward_times.size()) / duration;
    out.extra.emplace_back("aware_rate_pps", q_rate);
    out.checks.push_back(check(q->label + ": every window W >= 1 s carries at most rate*W + capacity", excess <= 1e-9,
                               "worst excess " + fmt(excess) + ", rate " + fmt(q_rate) + " pkt/s"));
  }
  return out;
}

namespace detail {
inline ScenarioConfig lb_config(const RunOptions& o, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.name = "lb_remap";
  cfg.groups[0].packets = 21;
  cfg.groups[0].rate_pps = 100;
  cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{1};
  apply(cfg, o);
  cfg.seed = seed;
  return cfg;
}
}  // namespace detail

/// 20 migrations that change the client IP each time, through a load balancer.
inline ScenarioOutcome scenario_lb_remap(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg = lb_config(o, o.seed);
  ScenarioOutcome out{"lb_remap", {}, {}, {}};
  run_pair(out, cfg, MiddleboxKind::LoadBalancer, 1, o);
  common_checks(out);

  double best = 0;
  for (std::uint64_t s = o.seed; s < o.seed + 10; ++s) {
    ScenarioConfig c = lb_config(o, s);
    c.chain = chain_of(MiddleboxKind::LoadBalancer, MiddleboxMode::Default, 1);
    best = std::max(best, run_scenario(c).remap_fraction);
  }
  out.extra.emplace_back("default_sweep_max_remap", best);
  out.checks.push_back(check("default: some seed in a 10-seed sweep remaps", best > 0,
                             "max remap fraction " + fmt(best)));
  if (const Variant* q = aware(out)) {
    const auto& r = q->report;
    out.checks.push_back(check(q->label + ": backend never changes", r.remap_fraction == 0 && r.remap_boundaries > 0,
                               fmt(r.remap_fraction) + " over " + fmt(r.remap_boundaries) + " migrations"));
  }
  return out;
}

/// 150 migrations against a flow table of 100 entries.
inline ScenarioOutcome scenario_conntrack_flood(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "conntrack_flood";
  cfg.conntrack_capacity = 100;
  cfg.groups[0].packets = 151;
  cfg.groups[0].rate_pps = 1000;
  cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{1};
  apply(cfg, o);
  ScenarioOutcome out{"conntrack_flood", {}, {}, {}};
  run_pair(out, cfg, MiddleboxKind::Conntrack, 1, o);
  common_checks(out);

  const std::uint64_t expected = bounded_flow_drops(cfg, cfg.conntrack_capacity);
  const auto& d = out.variants[0];
  out.extra.emplace_back("expected_default_rejects", static_cast<double>(expected));
  out.checks.push_back(check("default: rejects match the table-full count",
                             d.mb(0).stats.drops_for(DropReason::TableFull) == expected,
                             fmt(d.mb(0).stats.drops_for(DropReason::TableFull)) + " rejected, expected " +
                                 fmt(expected)));
  if (const Variant* q = aware(out)) {
    out.checks.push_back(check(q->label + ": one entry", q->mb(0).table_final == 1 && q->mb(0).table_max == 1,
                               fmt(q->mb(0).table_final) + " entries"));
    out.checks.push_back(check(q->label + ": no rejects", q->mb(0).stats.dropped() == 0, ""));
  }
  return out;
}

/// 1000 packets migrating every 10 through NATs, per mode.
inline ScenarioOutcome scenario_latency(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "latency";
  cfg.groups[0].packets = 1000;
  cfg.groups[0].rate_pps = 200;
  cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{10};
  apply(cfg, o);
  ScenarioOutcome out{"latency", {}, {}, {}};
  std::vector<MiddleboxMode> modes{MiddleboxMode::Default, MiddleboxMode::Reactive, MiddleboxMode::Proactive};
  if (o.mode) modes = {*o.mode};
  for (auto m : modes) {
    ScenarioConfig c = cfg;
    c.chain = chain_of(MiddleboxKind::Nat, m, o.nats.value_or(1));
    out.variants.push_back(run_variant(std::string(to_string(m)), c, o.loopback));
  }
  common_checks(out);
  for (const auto& v : out.variants) {
    const auto n = v.report.packets.size();
    out.checks.push_back(check(v.label + ": one latency record per packet", n == packets_in(cfg), fmt(n) + " records"));
    out.extra.emplace_back(v.label + "_latency_median_us", v.report.metric("latency_median_us").value_or(0));
  }
  return out;
}

/// Four connections through a chain of NATs (five by default).
inline ScenarioOutcome scenario_throughput(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "throughput";
  cfg.groups[0].connections = 4;
  cfg.groups[0].packets = 1000;
  cfg.groups[0].rate_pps = 500;
  cfg.groups[0].stagger_s = 0.001;
  cfg.groups[0].policy.trigger = MigrationPolicy::EveryNPackets{100};
  apply(cfg, o);
  ScenarioOutcome out{"throughput", {}, {}, {}};
  run_pair(out, cfg, MiddleboxKind::Nat, o.nats.value_or(5), o);
  common_checks(out);
  const auto sent = packets_in(cfg);
  const auto& d = out.variants[0].report;
  out.checks.push_back(check("default: every packet delivered", d.delivered_server == sent,
                             fmt(d.delivered_server) + " of " + fmt(sent)));
  if (const Variant* q = aware(out)) {
    const auto& r = q->report;
    out.checks.push_back(check(q->label + ": delivers at least 90% of the default",
                               static_cast<double>(r.delivered_server) >= 0.9 * static_cast<double>(d.delivered_server),
                               fmt(r.delivered_server) + " vs " + fmt(d.delivered_server)));
  }
  return out;
}

/// 100 Hz migration for 10 s, with and without 10% loss of tracking updates.
inline ScenarioOutcome scenario_stress(const RunOptions& o = {}) {
  using namespace detail;
  ScenarioConfig cfg;
  cfg.name = "stress";
  cfg.groups[0].packets = 5000;
  cfg.groups[0].rate_pps = 500;
  cfg.groups[0].policy.trigger = MigrationPolicy::RateHz{100};
  apply(cfg, o);
  const MiddleboxMode mode = aware_mode(o);
  cfg.chain = chain_of(MiddleboxKind::Nat, mode, o.nats.value_or(1));
  ScenarioOutcome out{"stress", {}, {}, {}};
  ScenarioConfig lossy = cfg;
  lossy.control_loss = 0.1;
  if (o.loopback) {
    // Both real-time runs share the wall clock.
    auto second = std::async(std::launch::async, [&] { return run_variant("loss10", lossy, true); });
    out.variants.push_back(run_variant("lossless", cfg, true));
    out.variants.push_back(second.get());
  } else {
    out.variants.push_back(run_variant("lossless", cfg, false));
    out.variants.push_back(run_variant("loss10", lossy, false));
  }
  common_checks(out);

  const std::size_t conns = cfg.groups[0].connections;
  const auto& clean = out.variants[0];
  const auto& lost = out.variants[1];
  out.checks.push_back(check("lossless: every packet delivered", clean.report.delivered_server == packets_in(cfg),
                             fmt(clean.report.delivered_server) + " of " + fmt(packets_in(cfg))));
  if (mode != MiddleboxMode::Default) {
    bool steady = true;
    for (const auto& m : clean.report.middleboxes) steady = steady && m.table_max == conns;
    out.checks.push_back(check("lossless: one binding per connection throughout", steady, ""));
    bool bounded = true;
    std::string detail;
    for (const auto& m : lost.report.middleboxes) {
      bounded = bounded && m.table_final >= conns && m.table_final - conns <= lost.report.updates_lost;
      detail += fmt(m.table_final) + " bindings ";
    }
    detail += "with " + fmt(lost.report.updates_lost) + " lost updates";
    out.checks.push_back(check("loss10: extra bindings never exceed lost updates", bounded, detail));
  }
  out.checks.push_back(check("loss10: every packet delivered", lost.report.delivered_server == packets_in(lossy),
                             fmt(lost.report.delivered_server) + " of " + fmt(packets_in(lossy))));
  return out;
}

/// Per-packet processing time of the three NAT modes over UDP loopback.
inline ScenarioOutcome scenario_overhead(const RunOptions& o = {}) {
  using namespace detail;
  OverheadConfig oc;
  oc.seed = o.seed;
  if (o.migration && o.migration->packet_interval()) oc.migrate_every = *o.migration->packet_interval();
  OverheadReport rep = bench_overhead(oc);

  ScenarioOutcome out{"overhead", {}, {}, {}};
  for (const auto& m : rep.modes) {
    Variant v;
    v.label = std::string(to_string(m.mode));
    v.report.scenario = "overhead";
    for (std::size_t k = 0; k < m.samples_us.size(); ++k) {
      PacketRecord p;
      p.id = k;
      p.seq = static_cast<std::uint32_t>(k);
      p.t_in = from_seconds(m.start_us[k] * 1e-6);
      p.t_out = from_seconds((m.start_us[k] + m.samples_us[k]) * 1e-6);
      v.report.packets.push_back(p);
    }
    v.report.summary = {{"packets", static_cast<double>(m.samples_us.size())},
                        {"median_us", m.median_us()},
                        {"p99_us", percentile(m.samples_us, 99)},
                        {"lookup_median_us", median(m.lookup_us)},
                        {"create_median_us", median(m.create_us)},
                        {"update_median_us", median(m.update_us)},
                        {"ratio_to_default", rep.ratio(m.mode)}};
    out.extra.emplace_back(v.label + "_median_us", m.median_us());
    out.variants.push_back(std::move(v));
  }
  const double re = rep.ratio(MiddleboxMode::Reactive);
  const double pro = rep.ratio(MiddleboxMode::Proactive);
  out.checks.push_back(check("reactive median <= 1.10 x default", re <= 1.10, fmt(re)));
  out.checks.push_back(check("proactive median <= 1.03 x default", pro <= 1.03, fmt(pro)));
  return out;
}

struct NamedScenario {
  std::string_view name;
  std::string_view summary;
  ScenarioOutcome (*run)(const RunOptions&);
};

inline const std::vector<NamedScenario>& scenarios() {
  static const std::vector<NamedScenario> all{
      {"forward", "pass-through chain, every packet delivered", scenario_forward},
      {"table1", "one connection over four private endpoints through a NAT", scenario_table1},
      {"nat_dos", "migrate every packet against a small NAT pool", scenario_nat_dos},
      {"rl_bypass", "migrate every 10 packets through a 5 pkt/s limiter", scenario_rl_bypass},
      {"lb_remap", "20 IP-changing migrations through a load balancer", scenario_lb_remap},
      {"conntrack_flood", "150 migrations against a 100-entry flow table", scenario_conntrack_flood},
      {"latency", "1000 packets migrating every 10, per NAT mode", scenario_latency},
      {"throughput", "four connections through a chain of five NATs", scenario_throughput},
      {"stress", "100 Hz migration for 10 s, with and without update loss", scenario_stress},
      {"overhead", "per-packet processing time over UDP loopback", scenario_overhead},
  };
  return all;
}

inline ScenarioOutcome run_named(std::string_view name, const RunOptions& o = {}) {
  for (const auto& s : scenarios())
    if (s.name == name) return s.run(o);
  throw std::invalid_argument("unknown scenario: " + std::string(name));
}

}  // namespace qasm::harness
