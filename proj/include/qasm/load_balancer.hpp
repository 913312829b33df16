#pragma once

#include <vector>

#include "qasm/quic_aware.hpp"

namespace qasm {

/// Backend index from the client's source IP (4 bytes, network order).
inline std::size_t lb_select_default(const Ipv4Addr& src, std::size_t backend_count) {
  if (backend_count == 0) throw std::invalid_argument("empty backend list");
  std::uint8_t raw[4];
  store_be32(raw, src.value);
  return static_cast<std::size_t>(fnv1a64(ByteView(raw, 4)) % backend_count);
}

/// Backend index from the connection's O-DCID bytes.
inline std::size_t lb_select_connection(const ConnectionId& o_dcid, std::size_t backend_count) {
  if (backend_count == 0) throw std::invalid_argument("empty backend list");
  return static_cast<std::size_t>(fnv1a64(o_dcid.bytes()) % backend_count);
}

struct LoadBalancerConfig {
  Endpoint vip{Ipv4Addr(198, 51, 100, 1), 443};
  std::vector<Endpoint> backends;
  QuicOptions quic;
};

/// Stateless hash-based L4 load balancer in front of a virtual IP.
///
/// Outbound (client to VIP): the destination is rewritten to the selected
/// backend and the egress is the backend index. Inbound (backend to client):
/// the source is rewritten back to the VIP. QUIC-aware modes hash the
/// resolved O-DCID. An unresolved QUIC packet is a new connection, keyed by
/// its own DCID. Non-QUIC traffic uses the source-IP hash.
class LoadBalancer final : public QuicAwareMiddlebox {
 public:
  explicit LoadBalancer(LoadBalancerConfig cfg) : QuicAwareMiddlebox(cfg.quic), cfg_(std::move(cfg)) {}

  std::string name() const override { return std::string("lb/") + std::string(to_string(mode())); }
  std::size_t table_size() const override { return resolver() ? resolver()->cache().size() : 0; }

  const LoadBalancerConfig& config() const noexcept { return cfg_; }

 protected:
  ProcessResult do_process(ByteView datagram, Direction dir, TimePoint now) override {
    ip::PacketView p;
    try {
      p = ip::parse(datagram);
    } catch (const DecodeError&) {
      return {Drop{DropReason::Malformed}, {}};
    }
    if (cfg_.backends.empty()) return {Drop{DropReason::NoBackend}, {}};

    ProcessResult r{Drop{DropReason::NoBackend}, {}};
    PhaseClock clock;
    Bytes out(datagram.begin(), datagram.end());
    if (dir == Direction::Inbound) {
      ip::rewrite_src(out, cfg_.vip);
      r.phases.lookup = clock.lap();
      r.action = Forward{std::move(out), 0};
      return r;
    }

    std::size_t backend;
    auto res = resolve_outbound(p, now);
    if (res) {
      r.phases.quic = true;
      r.phases.queried = res->queried;
    }
    if (res)
      backend = lb_select_connection(res->key, cfg_.backends.size());
    else
      backend = lb_select_default(p.tuple.src.ip, cfg_.backends.size());
    r.phases.lookup = clock.lap();
    ip::rewrite_dst(out, cfg_.backends[backend]);
    r.action = Forward{std::move(out), backend};
    return r;
  }

 private:
  LoadBalancerConfig cfg_;
};

}  // namespace qasm
