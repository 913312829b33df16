#pragma once

#include <algorithm>
#include <unordered_map>

#include "qasm/quic_aware.hpp"

namespace qasm {

/// Continuously refilled token bucket with real-valued tokens. A new bucket
/// starts full.
struct TokenBucket {
  double tokens = 0;
  double capacity = 0;
  double rate = 0;
  TimePoint last{};

  static TokenBucket full(double capacity, double rate, TimePoint now) { return {capacity, capacity, rate, now}; }

  void refill(TimePoint now) {
    if (now < last) throw std::invalid_argument("token bucket time went backwards");
    tokens = std::min(capacity, tokens + rate * to_seconds(now - last));
    last = now;
  }

  bool take(TimePoint now) {
    refill(now);
    if (tokens < 1.0) return false;
    tokens -= 1.0;
    return true;
  }
};

struct RateLimiterConfig {
  double rate = 5.0;
  /// Bucket size; zero means one second worth of tokens.
  double capacity = 0.0;
  QuicOptions quic;

  double effective_capacity() const { return capacity > 0 ? capacity : rate; }
};

/// Per-flow token-bucket rate limiter. Default mode identifies a flow by its
/// 5-tuple (ports are zero for protocols without them). QUIC-aware modes
/// identify QUIC flows by O-DCID and direction; server-to-client packets are
/// resolved through their destination address and fall back to the 5-tuple
/// when that address is unknown.
class RateLimiter final : public QuicAwareMiddlebox {
 public:
  explicit RateLimiter(RateLimiterConfig cfg = {}) : QuicAwareMiddlebox(cfg.quic), cfg_(cfg) {
    if (!(cfg_.rate > 0)) throw std::invalid_argument("rate must be positive");
  }

  std::string name() const override { return std::string("rl/") + std::string(to_string(mode())); }
  std::size_t table_size() const override { return by_tuple_.size() + by_conn_.size(); }

  const RateLimiterConfig& config() const noexcept { return cfg_; }

 protected:
  ProcessResult do_process(ByteView datagram, Direction dir, TimePoint now) override {
    ip::PacketView p;
    try {
      p = ip::parse(datagram);
    } catch (const DecodeError&) {
      return {Drop{DropReason::Malformed}, {}};
    }

    ProcessResult r{Drop{DropReason::RateLimited}, {}};
    PhaseClock clock;
    std::optional<ConnectionId> conn;
    Duration carried{};
    if (dir == Direction::Outbound) {
      if (auto res = resolve_outbound(p, now)) {
        r.phases.quic = true;
        r.phases.queried = res->queried;
        carried = res->query_time;
        conn = res->key;
      }
    } else {
      bool queried = false;
      conn = resolve_inbound(p, now, &queried);
      r.phases.quic = is_quic(p, dir);
      r.phases.queried = queried;
    }

    TokenBucket* bucket = nullptr;
    if (conn) {
      bucket = find(by_conn_, ConnKey{*conn, dir});
    } else {
      bucket = find(by_tuple_, p.tuple);
    }
    Duration lookup = clock.lap();
    r.phases.lookup = lookup - std::min(lookup, carried);

    if (bucket) {
      r.phases.updated = true;
    } else {
      r.phases.created = true;
      auto fresh = TokenBucket::full(cfg_.effective_capacity(), cfg_.rate, now);
      bucket = conn ? &by_conn_.emplace(ConnKey{*conn, dir}, fresh).first->second
                    : &by_tuple_.emplace(p.tuple, fresh).first->second;
    }
    bool ok = bucket->take(now);
    (r.phases.created ? r.phases.create : r.phases.update) = clock.lap() + std::min(lookup, carried);
    if (ok) r.action = Forward{Bytes(datagram.begin(), datagram.end()), 0};
    return r;
  }

 private:
  struct ConnKey {
    ConnectionId o_dcid;
    Direction dir;
    friend bool operator==(const ConnKey&, const ConnKey&) = default;
  };
  struct ConnKeyHash {
    std::size_t operator()(const ConnKey& k) const noexcept {
      return std::hash<ConnectionId>{}(k.o_dcid) ^ static_cast<std::size_t>(k.dir);
    }
  };

  template <typename Map, typename Key>
  static TokenBucket* find(Map& m, const Key& k) {
    auto it = m.find(k);
    return it == m.end() ? nullptr : &it->second;
  }

  RateLimiterConfig cfg_;
  std::unordered_map<FiveTuple, TokenBucket> by_tuple_;
  std::unordered_map<ConnKey, TokenBucket, ConnKeyHash> by_conn_;
};

}  // namespace qasm
