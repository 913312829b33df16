#pragma once

#include <functional>
#include <memory>
#include <queue>
#include <random>
#include <vector>

#include "qasm/harness/metrics.hpp"
#include "qasm/harness/scenario.hpp"
#include "qasm/tracking_agent.hpp"

namespace qasm::harness {

/// Deterministic per-packet processing cost used on the virtual clock in
/// place of measured times.
struct CostModel {
  Duration base = std::chrono::microseconds(2);
  Duration lookup = std::chrono::microseconds(1);
  Duration create = std::chrono::microseconds(3);
  Duration update = std::chrono::microseconds(1);
};

/// Discrete-event run of a scenario on a virtual clock. Links and the control
/// channel have fixed delays; each middlebox is a single FIFO server whose
/// service time comes from the cost model, plus one control round trip for
/// every synchronous agent query. Identical configurations produce identical
/// reports.
class Simulator {
 public:
  explicit Simulator(ScenarioConfig cfg, CostModel cost = {})
      : cfg_(std::move(cfg)),
        cost_(cost),
        agent_(AgentConfig{}),
        addresses_(make_address_source(cfg_)),
        client_agent_([this](Bytes b) { send_update(std::move(b)); }),
        emulator_(cfg_.seed, *addresses_, client_agent_),
        echo_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL, cfg_.dcid_len),
        loss_rng_(cfg_.seed * 0x2545f4914f6cdd1dULL + 1),
        collector_(cfg_.dcid_len, cfg_.chain.size()) {
    cfg_.validate();
    for (std::size_t i = 0; i < cfg_.chain.size(); ++i) {
      links_.push_back(std::make_unique<SimAgentLink>(*this, i));
      hops_.push_back(make_middlebox(cfg_, i, links_.back().get()));
      busy_.push_back(Duration{});
    }
  }

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  MetricsReport run() {
    if (ran_) throw std::logic_error("simulator already ran");
    ran_ = true;
    schedule_traffic();
    for (Duration t{}; t <= traffic_end_; t += cfg_.table_sample_interval)
      at(t, [this] { sample_tables(); });
    while (!queue_.empty()) {
      Event ev = queue_.top();
      queue_.pop();
      now_ = ev.t;
      ev.fn();
    }
    sample_tables();

    std::vector<const Middlebox*> chain;
    for (const auto& h : hops_) chain.push_back(h.get());
    MetricsReport rep = collector_.finish(cfg_.name, chain, updates_sent_, updates_lost_);
    auto c = agent_.counters();
    rep.summary.emplace_back("agent_updates", static_cast<double>(c.updates));
    rep.summary.emplace_back("agent_queries", static_cast<double>(c.queries));
    rep.summary.emplace_back("agent_query_hits", static_cast<double>(c.query_hits));
    rep.summary.emplace_back("agent_pushes", static_cast<double>(c.pushes));
    rep.summary.emplace_back("agent_records", static_cast<double>(agent_.table().size()));
    rep.summary.emplace_back("duration_s", to_seconds(now_));
    return rep;
  }

  const ScenarioConfig& config() const noexcept { return cfg_; }
  TrackingAgent& agent() noexcept { return agent_; }
  Middlebox& middlebox(std::size_t i) { return *hops_.at(i); }
  std::size_t hop_count() const noexcept { return hops_.size(); }
  const ClientEmulator& emulator() const noexcept { return emulator_; }
  const EchoServer& echo() const noexcept { return echo_; }

 private:
  struct Event {
    Duration t;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const { return a.t != b.t ? a.t > b.t : a.seq > b.seq; }
  };

  /// Agent link whose queries are answered on the spot (the caller is charged
  /// a round trip) and whose subscriptions and pushes travel with the
  /// control-channel delay.
  class SimAgentLink final : public AgentLink {
   public:
    SimAgentLink(Simulator& sim, std::size_t hop) : sim_(sim), hop_(hop), self_(mbox_endpoint(hop)) {}

    std::optional<wire::TrackingInfo> query(const wire::Query& q) override {
      auto result = sim_.agent_.on_middlebox_datagram(wire::encode(q), self_);
      sim_.route_pushes(std::move(result.pushes), sim_.now_ + sim_.cfg_.control_delay);
      if (!result.reply) return std::nullopt;
      return std::get<wire::QueryResponse>(wire::decode(result.reply->bytes)).info;
    }

    void subscribe(const ConnectionId& dcid) override {
      Bytes msg = wire::encode(wire::Subscribe{dcid, self_});
      sim_.at(sim_.now_ + sim_.cfg_.control_delay, [this, msg = std::move(msg)] {
        auto result = sim_.agent_.on_middlebox_datagram(msg, self_);
        sim_.route_pushes(std::move(result.pushes), sim_.now_ + sim_.cfg_.control_delay);
      });
    }

   private:
    Simulator& sim_;
    std::size_t hop_;
    Endpoint self_;
  };

  static Endpoint mbox_endpoint(std::size_t hop) {
    return Endpoint{Ipv4Addr(127, 0, 0, 1), static_cast<std::uint16_t>(40000 + hop)};
  }

  void at(Duration t, std::function<void()> fn) { queue_.push(Event{t, next_seq_++, std::move(fn)}); }

  void route_pushes(std::vector<Outbound> pushes, Duration when) {
    for (auto& p : pushes) {
      std::size_t hop = p.to.port - 40000;
      if (hop >= hops_.size()) continue;
      at(when, [this, hop, bytes = std::move(p.bytes)] {
        hops_[hop]->on_push(std::get<wire::PushUpdate>(wire::decode(bytes)));
      });
    }
  }

  void send_update(Bytes msg) {
    ++updates_sent_;
    if (cfg_.control_loss > 0 && unit(loss_rng_) < cfg_.control_loss) {
      ++updates_lost_;
      return;
    }
    at(now_ + cfg_.control_delay, [this, msg = std::move(msg)] {
      route_pushes(agent_.on_client_datagram(msg, TimePoint(now_)), now_ + cfg_.control_delay);
    });
  }

  void schedule_traffic() {
    timeline_ = client_timeline(cfg_);
    for (const auto& a : timeline_) {
      slots_.resize(std::max(slots_.size(), a.slot + 1), nullptr);
      traffic_end_ = std::max(traffic_end_, a.t);
      at(a.t, [this, &a] { perform(a); });
    }
  }

  void perform(const ClientAction& a) {
    using K = ClientAction::Kind;
    const auto& g = cfg_.groups[a.group];
    EmulatedConnection*& conn = slots_[a.slot];
    switch (a.kind) {
      case K::Open: {
        auto [c, pkt] = emulator_.open(cfg_.server, cfg_.dcid_len, cfg_.payload_len);
        conn = c;
        inject(std::move(pkt));
        break;
      }
      case K::Migrate:
        emulator_.migrate(*conn, g.policy.rotate_dcid);
        break;
      case K::Send:
        inject(emulator_.send_data(*conn, cfg_.payload_len));
        break;
      case K::Close:
        emulator_.close(*conn);
        break;
    }
  }

  void inject(Bytes pkt) {
    collector_.on_send(pkt, now_);
    at(now_ + cfg_.link_delay, [this, pkt = std::move(pkt)] { arrive(0, Direction::Outbound, pkt); });
  }

  void arrive(std::ptrdiff_t hop, Direction dir, const Bytes& pkt) {
    const auto n = static_cast<std::ptrdiff_t>(hops_.size());
    if (dir == Direction::Outbound && hop == n) {
      collector_.on_server(pkt, now_);
      if (!cfg_.echo) return;
      if (auto reply = echo_.reply(pkt))
        at(now_ + cfg_.link_delay, [this, hop, r = std::move(*reply)] { arrive(hop - 1, Direction::Inbound, r); });
      return;
    }
    if (dir == Direction::Inbound && hop < 0) {
      collector_.on_client(pkt);
      return;
    }

    const auto i = static_cast<std::size_t>(hop);
    Duration start = std::max(now_, busy_[i]);
    Duration saved = now_;
    now_ = start;
    ProcessResult res = hops_[i]->process(pkt, dir, TimePoint(start));
    now_ = saved;
    model(res);
    Duration done = start + res.phases.lookup + res.phases.create + res.phases.update + cost_.base;
    busy_[i] = done;
    collector_.on_hop(i, pkt, dir, res, start, cfg_.chain[i].kind == MiddleboxKind::LoadBalancer);
    if (auto* f = std::get_if<Forward>(&res.action)) {
      std::ptrdiff_t next = dir == Direction::Outbound ? hop + 1 : hop - 1;
      at(done + cfg_.link_delay, [this, next, dir, b = std::move(f->bytes)] { arrive(next, dir, b); });
    }
  }

  /// Replaces measured phase times with the cost model.
  void model(ProcessResult& res) const {
    auto& ph = res.phases;
    Duration rtt = ph.queried ? 2 * cfg_.control_delay : Duration{};
    ph.lookup = cost_.lookup;
    ph.create = ph.created ? cost_.create : Duration{};
    ph.update = ph.updated ? cost_.update : Duration{};
    if (ph.created)
      ph.create += rtt;
    else if (ph.updated)
      ph.update += rtt;
    else
      ph.lookup += rtt;
  }

  void sample_tables() {
    for (std::size_t i = 0; i < hops_.size(); ++i) collector_.on_table_sample(now_, i, hops_[i]->table_size());
  }

  ScenarioConfig cfg_;
  CostModel cost_;
  TrackingAgent agent_;
  std::unique_ptr<AddressSource> addresses_;
  ClientAgent client_agent_;
  ClientEmulator emulator_;
  EchoServer echo_;
  std::mt19937_64 loss_rng_;
  Collector collector_;

  std::vector<std::unique_ptr<SimAgentLink>> links_;
  std::vector<std::unique_ptr<Middlebox>> hops_;
  std::vector<Duration> busy_;

  std::vector<ClientAction> timeline_;
  std::vector<EmulatedConnection*> slots_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t next_seq_ = 0;
  Duration now_{};
  Duration traffic_end_{};
  std::uint64_t updates_sent_ = 0;
  std::uint64_t updates_lost_ = 0;
  bool ran_ = false;
};

/// Runs `cfg` on the virtual clock.
inline MetricsReport run_scenario(const ScenarioConfig& cfg) { return Simulator(cfg).run(); }

}  // namespace qasm::harness
