#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "qasm/tracking_table.hpp"
#include "qasm/wire_protocol.hpp"

namespace qasm {

struct AgentConfig {
  Endpoint client_bind{Ipv4Addr(127, 0, 0, 1), 0};
  Endpoint middlebox_bind{Ipv4Addr(127, 0, 0, 1), 0};
  std::size_t shards = 4;
  Duration idle_timeout = TrackingTable::kDefaultIdleTimeout;
  bool push_enabled = true;
};

struct Outbound {
  Endpoint to;
  Bytes bytes;
};

/// Result of a middlebox-facing datagram: an optional direct reply to the
/// sender (query answers) and pushes for the push path.
struct MiddleboxResult {
  std::optional<Outbound> reply;
  std::vector<Outbound> pushes;
};

struct AgentCounters {
  std::uint64_t updates = 0;
  std::uint64_t closes = 0;
  std::uint64_t queries = 0;
  std::uint64_t query_hits = 0;
  std::uint64_t subscribes = 0;
  std::uint64_t pushes = 0;
  std::uint64_t dropped_malformed = 0;
  std::uint64_t dropped_collision = 0;
  std::uint64_t dropped_protocol = 0;
  std::uint64_t dropped_wrong_channel = 0;

  std::uint64_t dropped_total() const {
    return dropped_malformed + dropped_collision + dropped_protocol + dropped_wrong_channel;
  }
};

/// Middlebox endpoints registered per O-DCID, plus subscriptions parked on
/// DCIDs the agent has not seen yet.
class SubscriptionRegistry {
 public:
  bool add(const ConnectionId& o_dcid, const Endpoint& mbox) {
    std::lock_guard lock(mu_);
    return insert_unique(active_[o_dcid], mbox);
  }

  bool park(const ConnectionId& dcid, const Endpoint& mbox) {
    std::lock_guard lock(mu_);
    return insert_unique(parked_[dcid], mbox);
  }

  /// Moves subscriptions parked on any of `dcids` under `o_dcid`.
  void promote(const ConnectionId& o_dcid, std::initializer_list<ConnectionId> dcids) {
    std::lock_guard lock(mu_);
    for (const auto& d : dcids) {
      auto it = parked_.find(d);
      if (it == parked_.end()) continue;
      auto& dst = active_[o_dcid];
      for (const auto& ep : it->second) insert_unique(dst, ep);
      parked_.erase(it);
    }
  }

  std::vector<Endpoint> subscribers(const ConnectionId& o_dcid) const {
    std::lock_guard lock(mu_);
    auto it = active_.find(o_dcid);
    return it == active_.end() ? std::vector<Endpoint>{} : it->second;
  }

  void remove(const ConnectionId& o_dcid) {
    std::lock_guard lock(mu_);
    active_.erase(o_dcid);
  }

  std::size_t active_connections() const {
    std::lock_guard lock(mu_);
    return active_.size();
  }
  std::size_t parked_dcids() const {
    std::lock_guard lock(mu_);
    return parked_.size();
  }

 private:
  static bool insert_unique(std::vector<Endpoint>& v, const Endpoint& ep) {
    if (std::find(v.begin(), v.end(), ep) != v.end()) return false;
    v.push_back(ep);
    return true;
  }

  mutable std::mutex mu_;
  std::unordered_map<ConnectionId, std::vector<Endpoint>> active_;
  std::unordered_map<ConnectionId, std::vector<Endpoint>> parked_;
};

/// Tracking Agent logic, independent of transport. The datagram entry points
/// return whatever must be sent in response: a QueryResponse to the querier,
/// PushUpdates to subscribers. Every rejected message is counted and dropped.
class TrackingAgent {
 public:
  explicit TrackingAgent(AgentConfig cfg = {})
      : cfg_(cfg), table_(cfg.shards, cfg.idle_timeout) {}

  const AgentConfig& config() const noexcept { return cfg_; }
  const TrackingTable& table() const noexcept { return table_; }
  TrackingTable& table() noexcept { return table_; }
  const SubscriptionRegistry& registry() const noexcept { return registry_; }

  AgentCounters counters() const {
    AgentCounters c;
    c.updates = updates_.load();
    c.closes = closes_.load();
    c.queries = queries_.load();
    c.query_hits = query_hits_.load();
    c.subscribes = subscribes_.load();
    c.pushes = pushes_.load();
    c.dropped_malformed = dropped_malformed_.load();
    c.dropped_collision = dropped_collision_.load();
    c.dropped_protocol = dropped_protocol_.load();
    c.dropped_wrong_channel = dropped_wrong_channel_.load();
    return c;
  }

  // Client-facing API.

  std::vector<Outbound> handle_client_update(const wire::ClientUpdate& m, TimePoint now = {}) {
    if (m.tuple.protocol != Protocol::Udp) {
      ++dropped_protocol_;
      return {};
    }
    std::lock_guard lock(push_mu_);
    TrackingRecord rec;
    try {
      rec = table_.upsert(m.dcid, m.o_dcid, m.tuple, now);
    } catch (const DcidCollision&) {
      ++dropped_collision_;
      return {};
    }
    ++updates_;
    registry_.promote(rec.o_dcid, {m.dcid, m.o_dcid});
    if (!cfg_.push_enabled) return {};
    return push_locked(rec, registry_.subscribers(rec.o_dcid));
  }

  void handle_conn_close(const wire::ConnClose& m) {
    std::lock_guard lock(push_mu_);
    if (table_.close(m.o_dcid)) ++closes_;
    registry_.remove(m.o_dcid);
  }

  // Middlebox-facing API.

  /// DCID first, then the query's source address, else not found.
  wire::QueryResponse handle_query(const wire::Query& m) {
    ++queries_;
    auto rec = table_.lookup_by_dcid(m.dcid);
    if (!rec) rec = table_.lookup_by_client_addr(m.src);
    if (!rec) return {};
    ++query_hits_;
    return wire::QueryResponse{wire::to_tracking_info(*rec)};
  }

  /// Registers the middlebox for pushes. A subscription on a DCID the agent
  /// does not know yet is parked until that DCID shows up in an update.
  /// A new registration on a known connection receives the current record
  /// immediately.
  std::vector<Outbound> handle_subscribe(const wire::Subscribe& m) {
    ++subscribes_;
    std::lock_guard lock(push_mu_);
    auto rec = table_.lookup_by_dcid(m.dcid);
    if (!rec) {
      registry_.park(m.dcid, m.mbox);
      return {};
    }
    if (!registry_.add(rec->o_dcid, m.mbox) || !cfg_.push_enabled) return {};
    return push_locked(*rec, {m.mbox});
  }

  // Datagram entry points.

  std::vector<Outbound> on_client_datagram(ByteView datagram, TimePoint now = {}) {
    auto msg = decode_or_count(datagram);
    if (!msg) return {};
    if (auto* u = std::get_if<wire::ClientUpdate>(&*msg)) return handle_client_update(*u, now);
    if (auto* c = std::get_if<wire::ConnClose>(&*msg)) {
      handle_conn_close(*c);
      return {};
    }
    ++dropped_wrong_channel_;
    return {};
  }

  MiddleboxResult on_middlebox_datagram(ByteView datagram, const Endpoint& from) {
    MiddleboxResult result;
    auto msg = decode_or_count(datagram);
    if (!msg) return result;
    if (auto* q = std::get_if<wire::Query>(&*msg)) {
      result.reply = Outbound{from, wire::encode(handle_query(*q))};
    } else if (auto* s = std::get_if<wire::Subscribe>(&*msg)) {
      result.pushes = handle_subscribe(*s);
    } else {
      ++dropped_wrong_channel_;
    }
    return result;
  }

  /// Evicts idle records together with their subscriptions.
  std::size_t expire_idle(TimePoint now) {
    std::lock_guard lock(push_mu_);
    auto evicted = table_.expire_idle(now);
    for (const auto& o : evicted) registry_.remove(o);
    return evicted.size();
  }

 private:
  std::optional<wire::Message> decode_or_count(ByteView datagram) {
    try {
      return wire::decode(datagram);
    } catch (const DecodeError&) {
      ++dropped_malformed_;
      return std::nullopt;
    }
  }

  // Caller holds push_mu_, so sequence order matches record order.
  std::vector<Outbound> push_locked(const TrackingRecord& rec, const std::vector<Endpoint>& to) {
    if (to.empty()) return {};
    wire::PushUpdate push{++seq_, wire::to_tracking_info(rec)};
    Bytes encoded = wire::encode(push);
    std::vector<Outbound> out;
    out.reserve(to.size());
    for (const auto& ep : to) out.push_back(Outbound{ep, encoded});
    pushes_ += to.size();
    return out;
  }

  AgentConfig cfg_;
  TrackingTable table_;
  SubscriptionRegistry registry_;
  std::mutex push_mu_;
  std::uint32_t seq_ = 0;

  std::atomic<std::uint64_t> updates_{0}, closes_{0}, queries_{0}, query_hits_{0}, subscribes_{0}, pushes_{0};
  std::atomic<std::uint64_t> dropped_malformed_{0}, dropped_collision_{0}, dropped_protocol_{0},
      dropped_wrong_channel_{0};
};

}  // namespace qasm
