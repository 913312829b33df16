// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <string>

#include "qasm/harness/scenarios.hpp"
#include "random_messages.hpp"
#include "trace_check.hpp"

using namespace qasm;
using namespace qasm::harness;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  failures += !pass;
  std::printf("%s  C%d %s  (%s)\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

RunOptions with_mode(MiddleboxMode m) {
  RunOptions o;
  o.mode = m;
  return o;
}

const MiddleboxMode kAware[] = {MiddleboxMode::Reactive, MiddleboxMode::Proactive};

// Every window of consecutive forwards spanning W seconds (W taken as at
// least 1) holds at most rate * W + capacity packets.
bool window_bound_holds(std::vector<Duration> t, double rate, double capacity, double* worst) {
  std::sort(t.begin(), t.end());
  *worst = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i; j < t.size(); ++j) {
      double w = std::max(1.0, std::chrono::duration<double>(t[j] - t[i]).count());
      double count = static_cast<double>(j - i + 1);
      *worst = std::max(*worst, count / (rate * w + capacity));
    }
  return *worst <= 1.0 + 1e-12;
}

void c1_table1() {
  auto t0 = Clock::now();
  std::size_t default_maps = 0;
  bool ok = true;
  std::string detail;
  for (auto m : kAware) {
    auto out = run_named("table1", with_mode(m));
    default_maps = dynamic_cast<Nat&>(out.variants[0].hop(0)).bindings().size();
    const auto& nat = dynamic_cast<Nat&>(out.variants[1].hop(0));
    const auto maps = nat.bindings();
    ok = ok && maps.size() == 1 && maps[0].public_ep == Endpoint{Ipv4Addr(65, 12, 81, 14), 19450} &&
         maps[0].private_endpoints.size() == 4 && default_maps == 4;
    detail += std::string(to_string(m)) + " " + num(double(nat.bindings().size())) + " mapping, ";
  }
  const double secs = since(t0);
  detail += "default " + num(double(default_maps)) + " mappings, " + num(secs) + " s";
  report(1, "NAT keeps one mapping across four endpoints (default: four)", ok && secs < 1.0, detail);
}

void c2_nat_dos() {
  auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (std::uint32_t pool : {1u, 8u, 64u, 256u}) {
    for (auto m : kAware) {
      RunOptions o = with_mode(m);
      o.pool_size = pool;
      auto out = run_named("nat_dos", o);
      // 2P + 8 packets, each on a fresh path: everything past the first P is dropped.
      const std::uint64_t expected = pool + 8;
      const auto& d = out.variants[0].mb(0).stats;
      const auto& q = out.variants[1].mb(0).stats;
      bool pass = d.drops_for(DropReason::PoolExhausted) == expected && d.dropped() == expected && q.dropped() == 0 &&
                  out.variants[1].report.delivered_server == 2 * std::uint64_t{pool} + 8;
      ok = ok && pass;
      if (m == MiddleboxMode::Reactive)
        detail += "P=" + num(pool) + ": " + num(double(d.dropped())) + "/" + num(double(expected)) + " dropped; ";
    }
  }
  const double secs = since(t0);
  detail += "aware 0 drops, " + num(secs) + " s";
  report(2, "NAT pool exhaustion drops exactly the overflow (aware: none)", ok && secs < 5.0, detail);
}

void c3_rate_limit() {
  bool ok = true;
  std::string detail;
  for (auto m : kAware) {
    auto out = run_named("rl_bypass", with_mode(m));
    const double d_rate = double(out.variants[0].mb(0).forward_times.size()) / 30.0;
    double worst = 0;
    bool bound = window_bound_holds(out.variants[1].mb(0).forward_times, 5.0, 5.0, &worst);
    ok = ok && bound && d_rate > 5.0;
    detail += std::string(to_string(m)) + " worst window " + num(worst) + " of bound; ";
    if (m == MiddleboxMode::Proactive) detail += "default " + num(d_rate) + " pkt/s";
  }
  report(3, "rate limiter holds 5W + capacity per window under migration (default exceeds 5 pkt/s)", ok, detail);
}

void c4_lb() {
  bool ok = true;
  std::string detail;
  for (auto m : kAware) {
    auto out = run_named("lb_remap", with_mode(m));
    const auto& r = out.variants[1].report;
    ok = ok && r.remap_fraction == 0.0 && r.remap_boundaries == 20;
    detail += std::string(to_string(m)) + " remap " + num(r.remap_fraction) + " over " +
              num(double(r.remap_boundaries)) + " migrations; ";
  }
  double best = 0;
  int seeds_remapping = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RunOptions o = with_mode(MiddleboxMode::Default);
    o.seed = seed;
    double f = run_named("lb_remap", o).variants[0].report.remap_fraction;
    best = std::max(best, f);
    seeds_remapping += f > 0;
  }
  ok = ok && best > 0;
  detail += "default remaps under " + num(seeds_remapping) + "/10 seeds, max " + num(best);
  report(4, "load balancer never remaps a migrating connection (default does)", ok, detail);
}

void c5_conntrack() {
  bool ok = true;
  std::string detail;
  for (auto m : kAware) {
    auto out = run_named("conntrack_flood", with_mode(m));
    const auto rejects = out.variants[0].mb(0).stats.drops_for(DropReason::TableFull);
    const auto& q = out.variants[1].mb(0);
    // 151 flows against 100 slots.
    ok = ok && rejects >= 50 && rejects == 51 && q.table_final == 1 && q.table_max == 1 && q.stats.dropped() == 0;
    detail += std::string(to_string(m)) + " holds " + num(double(q.table_max)) + " entry; ";
    if (m == MiddleboxMode::Proactive) detail += "default rejects " + num(double(rejects));
  }
  report(5, "connection tracker holds one entry per connection (default overflows)", ok, detail);
}

void c6_overhead() {
  auto t0 = Clock::now();
  OverheadConfig oc;
  oc.packets = 10000;
  auto rep = bench_overhead(oc);
  const double secs = since(t0);
  const double re = rep.ratio(MiddleboxMode::Reactive), pro = rep.ratio(MiddleboxMode::Proactive);
  bool counts = true;
  for (const auto& m : rep.modes) counts = counts && m.samples_us.size() == 10000;
  report(6, "loopback overhead: reactive <= 1.10x, proactive <= 1.03x default median",
         counts && re <= 1.10 && pro <= 1.03 && secs < 60.0,
         "default " + num(rep.of(MiddleboxMode::Default).median_us()) + " us, reactive x" + num(re) + ", proactive x" +
             num(pro) + ", " + num(secs) + " s");
}

bool stress_ok(const ScenarioOutcome& out, std::string& detail) {
  const auto& clean = out.variants.at(0).report;
  const auto& lossy = out.variants.at(1).report;
  bool ok = clean.misroutes == 0 && lossy.misroutes == 0 && clean.conserved() && lossy.conserved();
  ok = ok && clean.delivered_server == 5000 && lossy.delivered_server == 5000;
  ok = ok && clean.middleboxes[0].table_max == 1;
  // Each lost update can surface as at most one extra flow, never as a misroute.
  const auto extra = lossy.middleboxes[0].table_final - 1;
  ok = ok && extra <= lossy.updates_lost && lossy.stale_deliveries == 0;
  detail += num(double(extra)) + " extra flows for " + num(double(lossy.updates_lost)) + " lost updates";
  return ok;
}

void c7_stress() {
  bool ok = true;
  std::string detail;
  for (auto m : kAware) {
    auto out = run_named("stress", with_mode(m));
    detail += std::string(to_string(m)) + " simulated: ";
    ok = ok && stress_ok(out, detail);
    detail += "; ";
  }
  auto t0 = Clock::now();
  RunOptions o = with_mode(MiddleboxMode::Reactive);
  o.loopback = true;
  auto live = run_named("stress", o);
  const double secs = since(t0);
  detail += "loopback: ";
  ok = ok && stress_ok(live, detail) && secs < 15.0;
  detail += ", " + num(secs) + " s";
  report(7, "100 Hz migration for 10 s, with and without 10% update loss: no misroutes", ok, detail);
}

void c8_traces() {
  auto t0 = Clock::now();
  std::size_t packets = 0, mismatches = 0;
  std::string first;
  for (std::size_t i = 0; i < 100; ++i) {
    auto r = trace::run_trace(2026, i, 1000);
    packets += r.packets;
    mismatches += r.mismatches;
    if (first.empty() && r.mismatches) first = r.first_mismatch;
  }
  const double secs = since(t0);
  report(8, "100 random traces match the reference simulator", mismatches == 0 && secs < 30.0,
         num(double(packets)) + " packets, " + num(double(mismatches)) + " mismatches, " + num(secs) + " s" +
             (first.empty() ? "" : ", first: " + first));
}

void c9_round_trip() {
  testgen::Gen g(9);
  std::size_t bad = 0;
  for (int n = 0; n < 10000; ++n) {
    wire::Message m = g.message();
    Bytes b = wire::encode(m);
    if (b.size() != testgen::layout_size(m) || wire::decode(b) != m) ++bad;
  }
  for (int n = 0; n < 10000; ++n) {
    quic::QuicHeader h = testgen::random_header(g);
    Bytes b = quic::encode(h);
    auto len = static_cast<std::uint8_t>(h.dcid.size());
    auto back = h.form == quic::HeaderForm::Long ? quic::decode_long_header(b) : quic::decode_short_header(b, len);
    if (back != h || quic::extract_dcid(b, len) != h.dcid) ++bad;
  }
  report(9, "10^4 wire messages and 10^4 QUIC headers round-trip", bad == 0, num(double(bad)) + " failures");
}

}  // namespace

int main() {
  const std::pair<int, void (*)()> criteria[] = {{1, c1_table1}, {2, c2_nat_dos}, {3, c3_rate_limit},
                                                 {4, c4_lb},     {5, c5_conntrack}, {6, c6_overhead},
                                                 {7, c7_stress}, {8, c8_traces},  {9, c9_round_trip}};
  for (const auto& [id, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, "raised an exception", false, e.what());
    }
  }
  std::printf("summary: %d of 9 criteria failed\n", failures);
  return failures ? 1 : 0;
}
