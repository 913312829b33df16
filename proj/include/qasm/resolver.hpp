#pragma once

#include <algorithm>
#include <functional>
#include <mutex>
#include <optional>
#include <array>
#include <atomic>
#include <unordered_map>
#include <unordered_set>

#include "qasm/middlebox.hpp"
#include "qasm/quic_wire.hpp"
#include "qasm/tracking_agent.hpp"
#include "qasm/wire_protocol.hpp"

namespace qasm {

enum class TrackingMode : std::uint8_t { Reactive, Proactive };

inline std::string_view to_string(TrackingMode m) {
  return m == TrackingMode::Reactive ? "reactive" : "proactive";
}

/// Middlebox side of the Tracking Agent protocol.
class AgentLink {
 public:
  virtual ~AgentLink() = default;
  /// Blocking query; nullopt when the agent has no record (or did not answer).
  virtual std::optional<wire::TrackingInfo> query(const wire::Query& q) = 0;
  /// Fire-and-forget registration for pushes about the connection of `dcid`.
  virtual void subscribe(const ConnectionId& dcid) = 0;
};

/// In-process link. Messages still go through the wire codec; pushes the
/// agent emits are handed to `deliver` (the simulator schedules them, tests
/// may deliver immediately).
class DirectAgentLink final : public AgentLink {
 public:
  using Deliver = std::function<void(Outbound)>;

  DirectAgentLink(TrackingAgent& agent, Endpoint self, Deliver deliver)
      : agent_(agent), self_(self), deliver_(std::move(deliver)) {}

  std::optional<wire::TrackingInfo> query(const wire::Query& q) override {
    auto result = agent_.on_middlebox_datagram(wire::encode(q), self_);
    dispatch(std::move(result.pushes));
    if (!result.reply) return std::nullopt;
    auto msg = wire::decode(result.reply->bytes);
    return std::get<wire::QueryResponse>(msg).info;
  }

  void subscribe(const ConnectionId& dcid) override {
    auto result = agent_.on_middlebox_datagram(wire::encode(wire::Subscribe{dcid, self_}), self_);
    dispatch(std::move(result.pushes));
  }

  const Endpoint& self() const noexcept { return self_; }

 private:
  void dispatch(std::vector<Outbound> pushes) {
    if (!deliver_) return;
    for (auto& p : pushes) deliver_(std::move(p));
  }

  TrackingAgent& agent_;
  Endpoint self_;
  Deliver deliver_;
};

/// DCID -> O-DCID knowledge held by a QUIC-aware middlebox. Entries only ever
/// come from QueryResponse or PushUpdate bodies.
class LocalDcidCache {
 public:
  struct Entry {
    ConnectionId o_dcid;
    std::uint8_t dcid_len = 0;
  };

  std::optional<Entry> find(const ConnectionId& dcid) const {
    std::lock_guard lock(mu_);
    auto it = by_dcid_.find(dcid);
    if (it == by_dcid_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<Entry> find_addr(const Endpoint& addr) const {
    std::lock_guard lock(mu_);
    auto it = by_addr_.find(addr);
    if (it == by_addr_.end()) return std::nullopt;
    return it->second;
  }

  /// DCID of a client packet plus whatever the cache knows about it, under a
  /// single read lock. Short headers are parsed with the DCID length known
  /// for the source address, else `default_len`.
  struct Probe {
    ConnectionId dcid;
    std::optional<Entry> hit;
  };

  Probe probe(ByteView quic_packet, const Endpoint& src, std::uint8_t default_len) const {
    std::lock_guard lock(mu_);
    Probe p;
    std::uint8_t len = default_len;
    // The per-address length only matters once some sender uses a
    // non-default length.
    const bool uniform = default_len <= ConnectionId::kMaxLength && len_count_[default_len] == by_addr_.size();
    if (!uniform && !quic_packet.empty() && !(quic_packet[0] & quic::kLongFormBit)) {
      if (auto it = by_addr_.find(src); it != by_addr_.end()) len = it->second.dcid_len;
    }
    p.dcid = quic::extract_dcid(quic_packet, len);
    if (auto it = by_dcid_.find(p.dcid); it != by_dcid_.end()) p.hit = it->second;
    return p;
  }

  void learn(const wire::TrackingInfo& info) {
    std::lock_guard lock(mu_);
    learn_locked(info);
  }

  /// Applies a push unless an equal-or-newer push for the same connection was
  /// already applied. Returns whether it was applied.
  bool apply_push(const wire::PushUpdate& push) {
    std::lock_guard lock(mu_);
    auto [it, fresh] = last_seq_.try_emplace(push.info.o_dcid, push.seq);
    if (!fresh) {
      if (push.seq <= it->second) return false;
      it->second = push.seq;
    }
    learn_locked(push.info);
    return true;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return by_dcid_.size();
  }

  /// Bumped after every change. Equal readings mean nothing changed between them.
  std::uint64_t version() const noexcept { return version_.load(std::memory_order_acquire); }

 private:
  void learn_locked(const wire::TrackingInfo& info) {
    version_.fetch_add(1, std::memory_order_release);
    for (const auto& d : info.dcids)
      by_dcid_.insert_or_assign(d, Entry{info.o_dcid, static_cast<std::uint8_t>(d.size())});
    by_dcid_.insert_or_assign(info.o_dcid, Entry{info.o_dcid, static_cast<std::uint8_t>(info.o_dcid.size())});
    for (const auto& a : info.client_addrs) set_addr(a, Entry{info.o_dcid, info.dcid_len});
  }

  void set_addr(const Endpoint& addr, Entry e) {
    if (e.dcid_len > ConnectionId::kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
    auto [it, fresh] = by_addr_.try_emplace(addr, e);
    if (!fresh) {
      --len_count_[it->second.dcid_len];
      it->second = e;
    }
    ++len_count_[e.dcid_len];
  }

  mutable std::mutex mu_;
  std::unordered_map<ConnectionId, Entry> by_dcid_;
  std::unordered_map<Endpoint, Entry> by_addr_;
  /// Number of by_addr_ entries per DCID length.
  std::array<std::size_t, ConnectionId::kMaxLength + 1> len_count_{};
  std::unordered_map<ConnectionId, std::uint32_t> last_seq_;
  std::atomic<std::uint64_t> version_{0};
};

struct ResolverConfig {
  TrackingMode mode = TrackingMode::Reactive;
  /// Short-header DCID length used when nothing is known about the sender.
  std::uint8_t default_dcid_len = 8;
  Duration negative_ttl = std::chrono::milliseconds(50);
};

/// Outcome of resolving one QUIC packet. `key` is the O-DCID when tracking
/// information was found, otherwise the packet's own DCID (a new flow).
struct Resolution {
  ConnectionId dcid;
  ConnectionId key;
  bool tracked = false;
  bool queried = false;
  Duration query_time{};
};

/// O-DCID resolution shared by every QUIC-aware middlebox: local cache
/// first, then the Tracking Agent according to the mode.
class QuicResolver {
 public:
  QuicResolver(ResolverConfig cfg, AgentLink* link) : cfg_(cfg), link_(link) {}

  const ResolverConfig& config() const noexcept { return cfg_; }
  LocalDcidCache& cache() noexcept { return cache_; }
  const LocalDcidCache& cache() const noexcept { return cache_; }

  /// Client-to-server packet. Throws DecodeError when the QUIC header is too
  /// short for the DCID length in use.
  Resolution resolve_forward(ByteView quic_packet, const FiveTuple& tuple, TimePoint now) {
    const bool is_long = quic_packet[0] & quic::kLongFormBit;
    Resolution res;
    const std::uint64_t version = cache_.version();
    if (last_hit_.version == version && last_hit_.src == tuple.src && last_hit_.is_long == is_long) {
      res.dcid = quic::extract_dcid(quic_packet, last_hit_.len);
      if (res.dcid == last_hit_.dcid) {
        res.key = last_hit_.o_dcid;
        res.tracked = true;
        return res;
      }
    }

    auto probe = cache_.probe(quic_packet, tuple.src, cfg_.default_dcid_len);
    const std::uint8_t len = static_cast<std::uint8_t>(probe.dcid.size());
    res.dcid = probe.dcid;
    res.key = res.dcid;
    if (probe.hit) {
      res.key = probe.hit->o_dcid;
      res.tracked = true;
      last_hit_ = {version, tuple.src, is_long, len, res.dcid, res.key};
      return res;
    }
    if (!link_) return res;

    if (cfg_.mode == TrackingMode::Reactive) {
      if (negative_hit(negative_dcid_, res.dcid, now)) return res;
      PhaseClock clock;
      auto info = link_->query(wire::Query{res.dcid, tuple.src, tuple.dst});
      res.queried = true;
      res.query_time = clock.lap();
      if (!info) {
        negative_dcid_.insert_or_assign(res.dcid, now + cfg_.negative_ttl);
        return res;
      }
      cache_.learn(*info);
      if (!is_long && info->dcid_len != len && quic_packet.size() > info->dcid_len) {
        // The default length was wrong; the address fallback told us the right one.
        ConnectionId reparsed = quic::extract_dcid(quic_packet, info->dcid_len);
        if (std::find(info->dcids.begin(), info->dcids.end(), reparsed) != info->dcids.end()) res.dcid = reparsed;
      }
      res.key = info->o_dcid;
      res.tracked = true;
      return res;
    }

    // Proactive: register once, then rely on pushes.
    if (subscribed_.insert(res.dcid).second) link_->subscribe(res.dcid);
    if (auto hit = cache_.find(res.dcid)) {
      res.key = hit->o_dcid;
      res.tracked = true;
    }
    return res;
  }

  /// Server-to-client packet: the flow is identified by its destination
  /// (client) address.
  std::optional<ConnectionId> resolve_reverse(const FiveTuple& tuple, TimePoint now, bool* queried = nullptr) {
    if (auto hit = cache_.find_addr(tuple.dst)) return hit->o_dcid;
    if (!link_ || cfg_.mode != TrackingMode::Reactive) return std::nullopt;
    if (auto it = negative_addr_.find(tuple.dst); it != negative_addr_.end() && it->second > now) return std::nullopt;
    auto info = link_->query(wire::Query{ConnectionId{}, tuple.dst, tuple.src});
    if (queried) *queried = true;
    if (!info) {
      negative_addr_.insert_or_assign(tuple.dst, now + cfg_.negative_ttl);
      return std::nullopt;
    }
    cache_.learn(*info);
    return info->o_dcid;
  }

  void on_push(const wire::PushUpdate& push) { cache_.apply_push(push); }

 private:
  static bool negative_hit(const std::unordered_map<ConnectionId, TimePoint>& m, const ConnectionId& d, TimePoint now) {
    auto it = m.find(d);
    return it != m.end() && it->second > now;
  }

  // The previous cache hit. Reused while the cache is unchanged and the
  // packet comes from the same sender with the same DCID, which skips the
  // cache lock on a connection's steady-state packets.
  struct LastHit {
    std::uint64_t version = ~std::uint64_t{0};
    Endpoint src;
    bool is_long = false;
    std::uint8_t len = 0;
    ConnectionId dcid;
    ConnectionId o_dcid;
  };

  ResolverConfig cfg_;
  AgentLink* link_;
  LocalDcidCache cache_;
  LastHit last_hit_;
  std::unordered_map<ConnectionId, TimePoint> negative_dcid_;
  std::unordered_map<Endpoint, TimePoint> negative_addr_;
  std::unordered_set<ConnectionId> subscribed_;
};

}  // namespace qasm
