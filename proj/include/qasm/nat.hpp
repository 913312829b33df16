#pragma once

#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "qasm/quic_aware.hpp"

namespace qasm {

/// Public (ip, port) pairs handed out by a NAT. Allocation always returns the
/// lowest free slot, IPs in list order and ports ascending within an IP.
class PublicPool {
 public:
  PublicPool(std::vector<Ipv4Addr> ips, std::uint16_t port_lo, std::uint32_t ports_per_ip)
      : ips_(std::move(ips)), port_lo_(port_lo), ports_per_ip_(ports_per_ip) {
    if (std::uint32_t{port_lo} + ports_per_ip > 65536) throw std::invalid_argument("port range exceeds 65535");
  }

  std::size_t capacity() const noexcept { return ips_.size() * ports_per_ip_; }
  std::size_t allocated() const noexcept { return next_ - released_.size(); }
  std::size_t free() const noexcept { return capacity() - allocated(); }

  std::optional<Endpoint> allocate() {
    std::size_t slot;
    if (!released_.empty()) {
      slot = *released_.begin();
      released_.erase(released_.begin());
    } else if (next_ < capacity()) {
      slot = next_++;
    } else {
      return std::nullopt;
    }
    return endpoint_of(slot);
  }

  void release(const Endpoint& ep) {
    auto slot = slot_of(ep);
    if (!slot || *slot >= next_) throw std::invalid_argument("endpoint not allocated from this pool: " + ep.to_string());
    if (!released_.insert(*slot).second) throw std::invalid_argument("double release: " + ep.to_string());
  }

 private:
  Endpoint endpoint_of(std::size_t slot) const {
    return Endpoint{ips_[slot / ports_per_ip_], static_cast<std::uint16_t>(port_lo_ + slot % ports_per_ip_)};
  }

  std::optional<std::size_t> slot_of(const Endpoint& ep) const {
    if (ep.port < port_lo_ || std::uint32_t(ep.port - port_lo_) >= ports_per_ip_) return std::nullopt;
    for (std::size_t i = 0; i < ips_.size(); ++i)
      if (ips_[i] == ep.ip) return i * ports_per_ip_ + (ep.port - port_lo_);
    return std::nullopt;
  }

  std::vector<Ipv4Addr> ips_;
  std::uint16_t port_lo_;
  std::uint32_t ports_per_ip_;
  std::size_t next_ = 0;
  std::set<std::size_t> released_;
};

struct NatBinding {
  std::optional<ConnectionId> o_dcid;
  Protocol protocol = Protocol::Udp;
  /// Every private endpoint seen, most recent (active) last.
  std::vector<Endpoint> private_endpoints;
  Endpoint public_ep;
  TimePoint last_used{};

  const Endpoint& active() const { return private_endpoints.back(); }
};

struct NatConfig {
  std::vector<Ipv4Addr> public_ips{Ipv4Addr(65, 12, 81, 14)};
  std::uint16_t port_lo = 19450;
  std::uint32_t ports_per_ip = 1024;
  Duration binding_timeout = std::chrono::seconds(300);
  QuicOptions quic;
};

/// Source NAT. Outbound packets get their source rewritten to a public
/// endpoint, inbound packets addressed to a public endpoint get their
/// destination rewritten to the binding's active private endpoint.
///
/// Default mode keys bindings by 5-tuple. QUIC-aware modes key QUIC flows by
/// O-DCID so a migrating connection keeps one public endpoint; everything
/// else is handled as in default mode.
class Nat final : public QuicAwareMiddlebox {
 public:
  explicit Nat(NatConfig cfg = {})
      : QuicAwareMiddlebox(cfg.quic), cfg_(cfg), pool_(cfg.public_ips, cfg.port_lo, cfg.ports_per_ip) {}

  std::string name() const override { return std::string("nat/") + std::string(to_string(mode())); }
  std::size_t table_size() const override { return bindings_.size(); }

  const PublicPool& pool() const noexcept { return pool_; }

  const NatBinding* binding_for_public(const Endpoint& pub) const {
    auto it = bindings_.find(pub);
    return it == bindings_.end() ? nullptr : &it->second;
  }

  const NatBinding* binding_for_connection(const ConnectionId& o_dcid) const {
    auto it = by_odcid_.find(o_dcid);
    return it == by_odcid_.end() ? nullptr : binding_for_public(it->second);
  }

  const NatBinding* binding_for_tuple(const FiveTuple& t) const {
    auto it = by_tuple_.find(t);
    return it == by_tuple_.end() ? nullptr : binding_for_public(it->second);
  }

  std::vector<NatBinding> bindings() const {
    std::vector<NatBinding> out;
    out.reserve(bindings_.size());
    for (const auto& [_, b] : bindings_) out.push_back(b);
    return out;
  }

 protected:
  ProcessResult do_process(ByteView datagram, Direction dir, TimePoint now) override {
    ip::PacketView p;
    try {
      p = ip::parse(datagram);
    } catch (const DecodeError&) {
      return {Drop{DropReason::Malformed}, {}};
    }
    if (!is_supported(p.tuple.protocol)) return {Drop{DropReason::UnsupportedProtocol}, {}};
    return dir == Direction::Outbound ? outbound(datagram, p, now) : inbound(datagram, p, now);
  }

 private:
  ProcessResult outbound(ByteView datagram, const ip::PacketView& p, TimePoint now) {
    ProcessResult r{Drop{DropReason::PoolExhausted}, {}};
    PhaseClock clock;
    auto res = resolve_outbound(p, now);
    r.phases.quic = res.has_value();
    r.phases.queried = res && res->queried;

    NatBinding* b = res ? find_by_odcid(res->key, now) : find_by_tuple(p.tuple, now);
    Duration lookup = clock.lap();
    Duration carried = res ? res->query_time : Duration{};
    r.phases.lookup = lookup - carried;

    if (b) {
      r.phases.updated = true;
      touch(*b, p.tuple.src, now);
      r.phases.update = clock.lap() + carried;
    } else {
      r.phases.created = true;
      b = res ? create(res->key, p.tuple, now) : create(std::nullopt, p.tuple, now);
      r.phases.create = clock.lap() + carried;
      if (!b) return r;
    }

    Bytes out(datagram.begin(), datagram.end());
    ip::rewrite_src(out, b->public_ep);
    r.action = Forward{std::move(out), 0};
    return r;
  }

  ProcessResult inbound(ByteView datagram, const ip::PacketView& p, TimePoint now) {
    ProcessResult r{Drop{DropReason::NoBinding}, {}};
    PhaseClock clock;
    NatBinding* b = find_live(p.tuple.dst, now);
    r.phases.lookup = clock.lap();
    if (!b || b->protocol != p.tuple.protocol) return r;
    b->last_used = now;
    r.phases.updated = true;
    Bytes out(datagram.begin(), datagram.end());
    ip::rewrite_dst(out, b->active());
    r.action = Forward{std::move(out), 0};
    r.phases.update = clock.lap();
    return r;
  }

  bool expired(const NatBinding& b, TimePoint now) const { return now - b.last_used >= cfg_.binding_timeout; }

  NatBinding* find_live(const Endpoint& pub, TimePoint now) {
    auto it = bindings_.find(pub);
    if (it == bindings_.end()) return nullptr;
    if (expired(it->second, now)) {
      erase(it->first);
      return nullptr;
    }
    return &it->second;
  }

  NatBinding* find_by_tuple(const FiveTuple& t, TimePoint now) {
    auto it = by_tuple_.find(t);
    return it == by_tuple_.end() ? nullptr : find_live(it->second, now);
  }

  NatBinding* find_by_odcid(const ConnectionId& o, TimePoint now) {
    auto it = by_odcid_.find(o);
    return it == by_odcid_.end() ? nullptr : find_live(it->second, now);
  }

  static void touch(NatBinding& b, const Endpoint& src, TimePoint now) {
    b.last_used = now;
    if (b.active() == src) return;
    auto& eps = b.private_endpoints;
    eps.erase(std::remove(eps.begin(), eps.end(), src), eps.end());
    eps.push_back(src);
  }

  NatBinding* create(const std::optional<ConnectionId>& o_dcid, const FiveTuple& t, TimePoint now) {
    auto pub = pool_.allocate();
    if (!pub) {
      sweep(now);
      pub = pool_.allocate();
      if (!pub) return nullptr;
    }
    NatBinding b{o_dcid, t.protocol, {t.src}, *pub, now};
    if (o_dcid)
      by_odcid_.insert_or_assign(*o_dcid, *pub);
    else
      by_tuple_.insert_or_assign(t, *pub);
    tuple_of_.insert_or_assign(*pub, t);
    return &bindings_.insert_or_assign(*pub, std::move(b)).first->second;
  }

  void erase(Endpoint pub) {
    auto it = bindings_.find(pub);
    if (it->second.o_dcid)
      by_odcid_.erase(*it->second.o_dcid);
    else
      by_tuple_.erase(tuple_of_.at(pub));
    tuple_of_.erase(pub);
    bindings_.erase(it);
    pool_.release(pub);
  }

  void sweep(TimePoint now) {
    std::vector<Endpoint> dead;
    for (const auto& [pub, b] : bindings_)
      if (expired(b, now)) dead.push_back(pub);
    for (const auto& pub : dead) erase(pub);
  }

  NatConfig cfg_;
  PublicPool pool_;
  std::unordered_map<Endpoint, NatBinding> bindings_;
  std::unordered_map<FiveTuple, Endpoint> by_tuple_;
  std::unordered_map<ConnectionId, Endpoint> by_odcid_;
  std::unordered_map<Endpoint, FiveTuple> tuple_of_;
};

}  // namespace qasm
