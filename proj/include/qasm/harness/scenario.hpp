#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "qasm/client_emulator.hpp"
#include "qasm/conntrack.hpp"
#include "qasm/load_balancer.hpp"
#include "qasm/nat.hpp"
#include "qasm/rate_limiter.hpp"

namespace qasm::harness {

enum class MiddleboxKind : std::uint8_t { Forwarder, Nat, RateLimiter, LoadBalancer, Conntrack };

inline std::string_view to_string(MiddleboxKind k) {
  switch (k) {
    case MiddleboxKind::Forwarder: return "forwarder";
    case MiddleboxKind::Nat: return "nat";
    case MiddleboxKind::RateLimiter: return "rl";
    case MiddleboxKind::LoadBalancer: return "lb";
    case MiddleboxKind::Conntrack: return "conntrack";
  }
  return "unknown";
}

struct MiddleboxSpec {
  MiddleboxKind kind = MiddleboxKind::Forwarder;
  MiddleboxMode mode = MiddleboxMode::Default;
};

/// A batch of identical connections. Connection c of the group opens at
/// start + c * stagger and sends `packets` packets at `rate_pps`.
struct TrafficGroup {
  std::size_t connections = 1;
  double start_s = 0.0;
  double stagger_s = 0.0;
  std::uint64_t packets = 100;
  double rate_pps = 100.0;
  MigrationPolicy policy;
  bool close_at_end = false;
};

struct ScenarioConfig {
  std::string name = "custom";
  std::vector<MiddleboxSpec> chain;
  std::vector<TrafficGroup> groups{TrafficGroup{}};

  std::uint64_t seed = 1;
  std::size_t payload_len = 64;
  std::uint8_t dcid_len = 8;
  bool echo = true;
  /// Probability that a ClientUpdate is lost on its way to the agent.
  double control_loss = 0.0;

  Endpoint server{Ipv4Addr(203, 0, 113, 10), 443};
  Endpoint client_base{Ipv4Addr(10, 0, 0, 2), 10000};
  std::uint32_t client_ips = 200;
  /// Explicit client endpoints, handed out in order; overrides client_base.
  std::vector<Endpoint> client_addresses;

  std::uint32_t pool_size = 1024;
  Duration nat_timeout = std::chrono::seconds(300);
  double rate_limit = 5.0;
  double rl_capacity = 0.0;
  std::size_t backends = 4;
  std::size_t conntrack_capacity = 65536;

  Duration link_delay = std::chrono::microseconds(100);
  Duration control_delay = std::chrono::microseconds(20);
  Duration table_sample_interval = std::chrono::milliseconds(100);

  static constexpr std::size_t kMaxChain = 5;

  void validate() const {
    if (chain.size() > kMaxChain) throw std::invalid_argument("at most 5 middleboxes per chain");
    if (groups.empty()) throw std::invalid_argument("scenario has no traffic");
    for (const auto& g : groups) {
      g.policy.validate();
      if (g.connections == 0) throw std::invalid_argument("traffic group without connections");
      if (!(g.rate_pps > 0)) throw std::invalid_argument("packet rate must be > 0");
      if (g.start_s < 0 || g.stagger_s < 0) throw std::invalid_argument("negative start time");
    }
    if (dcid_len < 1 || dcid_len > ConnectionId::kMaxLength) throw std::invalid_argument("dcid_len must be in [1, 20]");
    if (control_loss < 0 || control_loss > 1) throw std::invalid_argument("control_loss must be in [0, 1]");
    if (pool_size == 0) throw std::invalid_argument("pool size must be positive");
    if (!(rate_limit > 0)) throw std::invalid_argument("rate limit must be positive");
    if (client_ips == 0) throw std::invalid_argument("client_ips must be positive");
    if (std::uint32_t{client_base.port} + 1 > 65536) throw std::invalid_argument("bad client base port");
    std::size_t lbs = 0;
    for (const auto& m : chain) lbs += m.kind == MiddleboxKind::LoadBalancer;
    if (lbs > 0 && backends == 0) throw std::invalid_argument("load balancer needs at least one backend");
    if (lbs > 1) throw std::invalid_argument("at most one load balancer per chain");
  }

  std::vector<Endpoint> backend_endpoints() const {
    std::vector<Endpoint> out;
    for (std::size_t i = 0; i < backends; ++i)
      out.push_back(Endpoint{Ipv4Addr(10, 1, 0, static_cast<std::uint8_t>(1 + i % 250)), server.port});
    return out;
  }
};

/// One step of the client side of a scenario.
struct ClientAction {
  enum class Kind : std::uint8_t { Open, Migrate, Send, Close };
  Duration t{};
  Kind kind = Kind::Send;
  /// Connection slot, numbered in group order.
  std::size_t slot = 0;
  std::size_t group = 0;
};

/// Time-ordered client actions for all traffic groups. Open emits the first
/// packet; a packet-count migration happens right before the packet that
/// starts a new path; time-based migrations fire strictly before the last
/// packet. Ties keep Open, Migrate, Send, Close order.
inline std::vector<ClientAction> client_timeline(const ScenarioConfig& cfg) {
  using K = ClientAction::Kind;
  std::vector<ClientAction> out;
  std::size_t slot = 0;
  for (std::size_t gi = 0; gi < cfg.groups.size(); ++gi) {
    const auto& g = cfg.groups[gi];
    const Duration gap = from_seconds(1.0 / g.rate_pps);
    for (std::size_t c = 0; c < g.connections; ++c, ++slot) {
      const Duration open_t = from_seconds(g.start_s + static_cast<double>(c) * g.stagger_s);
      if (g.packets == 0) continue;
      out.push_back({open_t, K::Open, slot, gi});
      const auto n = g.policy.packet_interval();
      for (std::uint64_t k = 1; k < g.packets; ++k) {
        Duration t = open_t + gap * static_cast<std::int64_t>(k);
        if (n && k % *n == 0) out.push_back({t, K::Migrate, slot, gi});
        out.push_back({t, K::Send, slot, gi});
      }
      const Duration last = open_t + gap * static_cast<std::int64_t>(g.packets - 1);
      if (auto period = g.policy.period())
        for (Duration t = open_t + *period; t < last; t += *period) out.push_back({t, K::Migrate, slot, gi});
      if (g.close_at_end) out.push_back({last, K::Close, slot, gi});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ClientAction& a, const ClientAction& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.slot < b.slot;
  });
  return out;
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Passes every packet unchanged.
class Forwarder final : public Middlebox {
 public:
  std::string name() const override { return "forwarder"; }
  std::size_t table_size() const override { return 0; }

 protected:
  ProcessResult do_process(ByteView datagram, Direction, TimePoint) override {
    return {Forward{Bytes(datagram.begin(), datagram.end()), 0}, {}};
  }
};

inline std::unique_ptr<AddressSource> make_address_source(const ScenarioConfig& cfg) {
  if (!cfg.client_addresses.empty()) return std::make_unique<ListAddressSource>(cfg.client_addresses);
  return std::make_unique<SequentialAddressSource>(cfg.client_base, cfg.client_ips, 65536u - cfg.client_base.port);
}

/// Builds hop `index` of the chain. Each NAT gets its own public address so
/// chained NATs never hand out overlapping endpoints.
inline std::unique_ptr<Middlebox> make_middlebox(const ScenarioConfig& cfg, std::size_t index, AgentLink* link) {
  const MiddleboxSpec& spec = cfg.chain.at(index);
  QuicOptions q;
  q.mode = spec.mode;
  q.agent = link;
  q.default_dcid_len = cfg.dcid_len;
  q.classifier.ports = {cfg.server.port};
  switch (spec.kind) {
    case MiddleboxKind::Forwarder:
      return std::make_unique<Forwarder>();
    case MiddleboxKind::Nat: {
      NatConfig n;
      n.public_ips = {Ipv4Addr(65, 12, 81, static_cast<std::uint8_t>(14 + index))};
      n.ports_per_ip = cfg.pool_size;
      n.binding_timeout = cfg.nat_timeout;
      n.quic = q;
      return std::make_unique<Nat>(n);
    }
    case MiddleboxKind::RateLimiter: {
      RateLimiterConfig r;
      r.rate = cfg.rate_limit;
      r.capacity = cfg.rl_capacity;
      r.quic = q;
      return std::make_unique<RateLimiter>(r);
    }
    case MiddleboxKind::LoadBalancer: {
      LoadBalancerConfig l;
      l.vip = cfg.server;
      l.backends = cfg.backend_endpoints();
      l.quic = q;
      return std::make_unique<LoadBalancer>(l);
    }
    case MiddleboxKind::Conntrack: {
      ConntrackConfig c;
      c.capacity = cfg.conntrack_capacity;
      c.quic = q;
      return std::make_unique<Conntrack>(c);
    }
  }
  throw std::invalid_argument("unknown middlebox kind");
}

}  // namespace qasm::harness
