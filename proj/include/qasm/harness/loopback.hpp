#pragma once

#include <array>
#include <atomic>
#include <random>
#include <thread>

#include "qasm/agent_server.hpp"
#include "qasm/harness/metrics.hpp"
#include "qasm/harness/scenario.hpp"
#include "qasm/udp_agent_link.hpp"

namespace qasm::harness {

struct LoopbackOptions {
  /// Pause between a tracking update and the next data packet, so the agent
  /// has the update before any middlebox can ask about it.
  Duration settle = std::chrono::milliseconds(1);
  std::chrono::milliseconds query_timeout{50};
  /// Traffic must be silent this long before the run is considered drained.
  std::chrono::milliseconds quiet{150};
  std::chrono::milliseconds max_drain{3000};
};

/// Runs a scenario in real time over UDP on 127.0.0.1: the agent, every
/// middlebox, the server and the client each own sockets and threads, and
/// every datagram really crosses the loopback interface. Phase times in the
/// report are measured.
class LoopbackRunner {
 public:
  explicit LoopbackRunner(ScenarioConfig cfg, LoopbackOptions opts = {})
      : cfg_(std::move(cfg)),
        opts_(opts),
        agent_(AgentConfig{}),
        addresses_((cfg_.validate(), make_address_source(cfg_))),
        ctrl_sock_(UdpSocket::bind(local(0))),
        client_sock_(UdpSocket::bind(local(0))),
        server_sock_(UdpSocket::bind(local(0))),
        client_agent_([this](Bytes b) { send_update(std::move(b)); }),
        emulator_(cfg_.seed, *addresses_, client_agent_),
        echo_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL, cfg_.dcid_len),
        loss_rng_(cfg_.seed * 0x2545f4914f6cdd1dULL + 1),
        collector_(cfg_.dcid_len, cfg_.chain.size()),
        tables_(cfg_.chain.size()) {
    for (std::size_t i = 0; i < cfg_.chain.size(); ++i) {
      links_.push_back(std::make_unique<UdpAgentLink>(agent_.middlebox_endpoint(), opts_.query_timeout));
      hops_.push_back(make_middlebox(cfg_, i, links_.back().get()));
      hop_socks_.push_back(UdpSocket::bind(local(0)));
      Middlebox* mb = hops_.back().get();
      links_.back()->start([mb](const wire::PushUpdate& p) { mb->on_push(p); });
    }
  }

  LoopbackRunner(const LoopbackRunner&) = delete;
  LoopbackRunner& operator=(const LoopbackRunner&) = delete;
  ~LoopbackRunner() { shutdown(); }

  MetricsReport run() {
    start_ = steady_now();
    const std::size_t n = hops_.size();
    for (std::size_t i = 0; i < n; ++i) threads_.emplace_back([this, i] { hop_loop(i); });
    threads_.emplace_back([this] { server_loop(); });
    threads_.emplace_back([this] { client_rx_loop(); });
    threads_.emplace_back([this] { sampler_loop(); });

    drive();
    drain();
    shutdown();
    for (std::size_t i = 0; i < n; ++i) collector_.on_table_sample(elapsed(), i, hops_[i]->table_size());

    std::vector<const Middlebox*> chain;
    for (const auto& h : hops_) chain.push_back(h.get());
    MetricsReport rep = collector_.finish(cfg_.name, chain, updates_sent_, updates_lost_);
    auto c = agent_.agent().counters();
    rep.summary.emplace_back("agent_updates", static_cast<double>(c.updates));
    rep.summary.emplace_back("agent_queries", static_cast<double>(c.queries));
    rep.summary.emplace_back("agent_query_hits", static_cast<double>(c.query_hits));
    rep.summary.emplace_back("agent_pushes", static_cast<double>(c.pushes));
    rep.summary.emplace_back("agent_records", static_cast<double>(agent_.agent().table().size()));
    std::uint64_t timeouts = 0;
    for (const auto& l : links_) timeouts += l->timeouts();
    rep.summary.emplace_back("query_timeouts", static_cast<double>(timeouts));
    rep.summary.emplace_back("duration_s", to_seconds(elapsed()));
    return rep;
  }

  Middlebox& middlebox(std::size_t i) { return *hops_.at(i); }
  std::vector<std::unique_ptr<Middlebox>> release_middleboxes() { return std::move(hops_); }

 private:
  static Endpoint local(std::uint16_t port) { return Endpoint{Ipv4Addr(127, 0, 0, 1), port}; }

  Duration elapsed() const { return steady_now() - start_; }

  Endpoint hop_ep(std::size_t i) const { return hop_socks_[i].local_endpoint(); }
  Endpoint first_ep() const { return hops_.empty() ? server_sock_.local_endpoint() : hop_ep(0); }
  Endpoint last_ep() const { return hops_.empty() ? client_sock_.local_endpoint() : hop_ep(hops_.size() - 1); }

  void send_update(Bytes msg) {
    ++updates_sent_;
    last_control_ = steady_now();
    if (cfg_.control_loss > 0 && unit(loss_rng_) < cfg_.control_loss) {
      ++updates_lost_;
      return;
    }
    ctrl_sock_.send_to(msg, agent_.client_endpoint());
  }

  void drive() {
    using K = ClientAction::Kind;
    const auto timeline = client_timeline(cfg_);
    std::vector<EmulatedConnection*> slots;
    const Endpoint entry = first_ep();
    auto send = [&](Bytes pkt) {
      std::this_thread::sleep_until(std::chrono::steady_clock::time_point(last_control_ + opts_.settle));
      collector_.on_send(pkt, elapsed());
      client_sock_.send_to(pkt, entry);
    };
    for (const auto& a : timeline) {
      std::this_thread::sleep_until(std::chrono::steady_clock::time_point(start_ + a.t));
      if (slots.size() <= a.slot) slots.resize(a.slot + 1, nullptr);
      const auto& g = cfg_.groups[a.group];
      switch (a.kind) {
        case K::Open: {
          auto [c, pkt] = emulator_.open(cfg_.server, cfg_.dcid_len, cfg_.payload_len);
          slots[a.slot] = c;
          send(std::move(pkt));
          break;
        }
        case K::Migrate:
          emulator_.migrate(*slots[a.slot], g.policy.rotate_dcid);
          break;
        case K::Send:
          send(emulator_.send_data(*slots[a.slot], cfg_.payload_len));
          break;
        case K::Close:
          emulator_.close(*slots[a.slot]);
          break;
      }
    }
  }

  void drain() {
    const auto give_up = steady_now() + opts_.max_drain;
    std::uint64_t seen = activity_.load();
    while (steady_now() < give_up) {
      std::this_thread::sleep_for(opts_.quiet);
      std::uint64_t now = activity_.load();
      if (now == seen) return;
      seen = now;
    }
  }

  void shutdown() {
    stopping_ = true;
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    threads_.clear();
    for (auto& l : links_) l->stop();
    agent_.stop();
  }

  void hop_loop(std::size_t i) {
    std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
    const Endpoint prev = i == 0 ? client_sock_.local_endpoint() : hop_ep(i - 1);
    const Endpoint next = i + 1 == hops_.size() ? server_sock_.local_endpoint() : hop_ep(i + 1);
    const bool is_lb = cfg_.chain[i].kind == MiddleboxKind::LoadBalancer;
    Middlebox& mb = *hops_[i];
    while (!stopping_.load()) {
      auto got = hop_socks_[i].recv_from(buf, std::chrono::milliseconds(10));
      if (!got) continue;
      ByteView in(buf.data(), got->size);
      Direction dir = got->from == prev ? Direction::Outbound : Direction::Inbound;
      const TimePoint decided = steady_now();
      ProcessResult res = mb.process(in, dir, decided);
      if (auto* f = std::get_if<Forward>(&res.action)) hop_socks_[i].send_to(f->bytes, dir == Direction::Outbound ? next : prev);
      tables_[i].store(mb.table_size());
      collector_.on_hop(i, in, dir, res, decided - start_, is_lb);
      ++activity_;
    }
  }

  void server_loop() {
    std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
    const Endpoint back = last_ep();
    while (!stopping_.load()) {
      auto got = server_sock_.recv_from(buf, std::chrono::milliseconds(10));
      if (!got) continue;
      ByteView in(buf.data(), got->size);
      collector_.on_server(in, elapsed());
      if (cfg_.echo)
        if (auto reply = echo_.reply(in)) server_sock_.send_to(*reply, back);
      ++activity_;
    }
  }

  void client_rx_loop() {
    std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
    while (!stopping_.load()) {
      auto got = client_sock_.recv_from(buf, std::chrono::milliseconds(10));
      if (!got) continue;
      collector_.on_client(ByteView(buf.data(), got->size));
      ++activity_;
    }
  }

  void sampler_loop() {
    auto next = start_;
    while (!stopping_.load()) {
      next += cfg_.table_sample_interval;
      while (!stopping_.load() && steady_now() < next) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      for (std::size_t i = 0; i < tables_.size(); ++i) collector_.on_table_sample(elapsed(), i, tables_[i].load());
    }
  }

  ScenarioConfig cfg_;
  LoopbackOptions opts_;
  AgentServer agent_;
  std::unique_ptr<AddressSource> addresses_;
  UdpSocket ctrl_sock_;
  UdpSocket client_sock_;
  UdpSocket server_sock_;
  ClientAgent client_agent_;
  ClientEmulator emulator_;
  EchoServer echo_;
  std::mt19937_64 loss_rng_;
  Collector collector_;
  std::vector<std::atomic<std::size_t>> tables_;

  std::vector<std::unique_ptr<UdpAgentLink>> links_;
  std::vector<std::unique_ptr<Middlebox>> hops_;
  std::vector<UdpSocket> hop_socks_;
  std::vector<std::thread> threads_;

  TimePoint start_{};
  TimePoint last_control_{};
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> activity_{0};
  std::uint64_t updates_sent_ = 0;
  std::uint64_t updates_lost_ = 0;
};

// ---------------------------------------------------------------------------
// Per-packet processing overhead of the three NAT modes.

struct OverheadConfig {
  std::size_t packets = 10000;
  std::size_t warmup = 1000;
  std::uint64_t migrate_every = 10;
  std::size_t payload_len = 64;
  std::uint64_t seed = 1;
  Duration settle = std::chrono::milliseconds(1);
};

struct ModeTiming {
  MiddleboxMode mode = MiddleboxMode::Default;
  /// Per-packet processing time in microseconds, in trace order.
  std::vector<double> samples_us;
  /// Start of each sample, relative to the start of the benchmark.
  std::vector<double> start_us;
  std::vector<double> lookup_us;
  std::vector<double> create_us;
  std::vector<double> update_us;
  std::uint64_t forwarded = 0;

  double median_us() const { return median(samples_us); }
};

struct OverheadReport {
  std::array<ModeTiming, 3> modes;

  const ModeTiming& of(MiddleboxMode m) const { return modes[static_cast<std::size_t>(m)]; }
  double ratio(MiddleboxMode m) const { return of(m).median_us() / of(MiddleboxMode::Default).median_us(); }
};

/// Feeds one migrating connection through a default, a reactive and a
/// proactive NAT sharing one Tracking Agent over UDP loopback. Each packet
/// goes to all three NATs, in an order that rotates through all six
/// permutations. The processing time of a packet runs from the moment the
/// NAT's receive call returns to the moment its forwarding send returns.
inline OverheadReport bench_overhead(const OverheadConfig& cfg = {}) {
  constexpr std::array<MiddleboxMode, 3> kModes{MiddleboxMode::Default, MiddleboxMode::Reactive,
                                                MiddleboxMode::Proactive};
  constexpr std::array<std::array<int, 3>, 6> kOrders{
      {{0, 1, 2}, {1, 2, 0}, {2, 0, 1}, {0, 2, 1}, {2, 1, 0}, {1, 0, 2}}};
  const Endpoint lo{Ipv4Addr(127, 0, 0, 1), 0};
  const Endpoint server{Ipv4Addr(203, 0, 113, 10), 443};

  AgentServer agent{AgentConfig{}};
  UdpSocket ctrl = UdpSocket::bind(lo);
  UdpSocket client = UdpSocket::bind(lo);
  UdpSocket sink = UdpSocket::bind(lo);
  const Endpoint sink_ep = sink.local_endpoint();

  std::array<std::unique_ptr<UdpAgentLink>, 3> links;
  std::array<std::unique_ptr<Nat>, 3> nats;
  std::array<UdpSocket, 3> socks;
  std::array<Endpoint, 3> eps;
  for (std::size_t m = 0; m < 3; ++m) {
    links[m] = std::make_unique<UdpAgentLink>(agent.middlebox_endpoint());
    NatConfig nc;
    nc.ports_per_ip = 40000;
    nc.quic.mode = kModes[m];
    nc.quic.agent = links[m].get();
    nats[m] = std::make_unique<Nat>(nc);
    Nat* nat = nats[m].get();
    links[m]->start([nat](const wire::PushUpdate& p) { nat->on_push(p); });
    socks[m] = UdpSocket::bind(lo);
    eps[m] = socks[m].local_endpoint();
  }

  TimePoint last_control{};
  ClientAgent client_agent([&](Bytes b) {
    ctrl.send_to(b, agent.client_endpoint());
    last_control = steady_now();
  });
  SequentialAddressSource addresses(Endpoint{Ipv4Addr(10, 0, 0, 2), 1024}, 250, 64000);
  ClientEmulator emu(cfg.seed, addresses, client_agent);

  OverheadReport report;
  for (std::size_t m = 0; m < 3; ++m) report.modes[m].mode = kModes[m];
  std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
  EmulatedConnection* conn = nullptr;

  const std::size_t total = cfg.warmup + cfg.packets;
  const TimePoint bench_start = steady_now();
  for (std::size_t k = 0; k < total; ++k) {
    Bytes pkt;
    if (k == 0) {
      auto opened = emu.open(server, 8, cfg.payload_len);
      conn = opened.first;
      pkt = std::move(opened.second);
    } else {
      if (cfg.migrate_every && conn->packets_sent % cfg.migrate_every == 0) emu.migrate(*conn, true);
      pkt = emu.send_data(*conn, cfg.payload_len);
    }
    std::this_thread::sleep_until(std::chrono::steady_clock::time_point(last_control + cfg.settle));

    for (int m : kOrders[k % kOrders.size()]) {
      client.send_to(pkt, eps[m]);
      auto got = socks[m].recv_from(buf, std::chrono::milliseconds(1000));
      if (!got) throw std::runtime_error("loopback datagram lost");
      TimePoint t0 = steady_now();
      ProcessResult res = nats[m]->process(ByteView(buf.data(), got->size), Direction::Outbound, t0);
      if (auto* f = std::get_if<Forward>(&res.action)) socks[m].send_to(f->bytes, sink_ep);
      TimePoint t1 = steady_now();
      if (forwarded(res.action)) {
        if (!sink.recv_from(buf, std::chrono::milliseconds(1000))) throw std::runtime_error("loopback datagram lost");
      }
      if (k < cfg.warmup) continue;
      auto& mt = report.modes[m];
      mt.samples_us.push_back(to_micros(t1 - t0));
      mt.start_us.push_back(to_micros(t0 - bench_start));
      mt.forwarded += forwarded(res.action);
      if (res.phases.created) mt.create_us.push_back(to_micros(res.phases.create));
      if (res.phases.updated) mt.update_us.push_back(to_micros(res.phases.update));
      mt.lookup_us.push_back(to_micros(res.phases.lookup));
    }
  }
  for (auto& l : links) l->stop();
  agent.stop();
  return report;
}

}  // namespace qasm::harness
