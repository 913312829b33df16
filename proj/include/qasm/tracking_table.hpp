#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "qasm/connection_id.hpp"
#include "qasm/net.hpp"
#include "qasm/time.hpp"

namespace qasm {

/// Per-connection tracking state: O-DCID, every DCID and client address the
/// connection has used (insertion order), the server endpoint and the length
/// of the DCID currently in use.
struct TrackingRecord {
  ConnectionId o_dcid;
  std::vector<ConnectionId> dcids;
  std::vector<Endpoint> client_addrs;
  Endpoint server;
  std::uint8_t dcid_len = 0;
  TimePoint last_update{};

  bool has_dcid(const ConnectionId& d) const { return std::find(dcids.begin(), dcids.end(), d) != dcids.end(); }
  bool has_client_addr(const Endpoint& a) const {
    return std::find(client_addrs.begin(), client_addrs.end(), a) != client_addrs.end();
  }

  friend bool operator==(const TrackingRecord&, const TrackingRecord&) = default;
};

class DcidCollision : public std::runtime_error {
 public:
  DcidCollision(const ConnectionId& dcid, const ConnectionId& owner)
      : std::runtime_error("dcid " + dcid.hex() + " already belongs to " + owner.hex()), dcid_(dcid), owner_(owner) {}
  const ConnectionId& dcid() const noexcept { return dcid_; }
  const ConnectionId& owner() const noexcept { return owner_; }

 private:
  ConnectionId dcid_;
  ConnectionId owner_;
};

/// Stable shard index for a DCID: FNV-1a 64 over the DCID bytes, modulo
/// shard_count.
inline std::size_t shard_for(const ConnectionId& dcid, std::size_t shard_count) {
  if (shard_count == 0) throw std::invalid_argument("shard_count must be positive");
  return static_cast<std::size_t>(fnv1a64(dcid.bytes()) % shard_count);
}

/// Connection tracking table keyed by O-DCID with secondary indexes by DCID
/// and by client address.
///
/// Storage is split into independently locked shards. A record lives in the
/// shard of its O-DCID, a DCID index entry in the shard of that DCID and an
/// address index entry in the shard of the address hash. Writers lock the
/// shards they touch in ascending order; readers take shared locks one shard
/// at a time and always copy out whole records.
///
/// A client address may be shared by several live connections. The address
/// index keeps every owner, most recent last, and lookups return the most
/// recent one.
class TrackingTable {
 public:
  static constexpr Duration kDefaultIdleTimeout = std::chrono::seconds(300);

  explicit TrackingTable(std::size_t shard_count = 1, Duration idle_timeout = kDefaultIdleTimeout)
      : idle_timeout_(idle_timeout) {
    if (shard_count == 0) throw std::invalid_argument("shard_count must be positive");
    shards_.reserve(shard_count);
    for (std::size_t i = 0; i < shard_count; ++i) shards_.push_back(std::make_unique<Shard>());
  }

  std::size_t shard_count() const noexcept { return shards_.size(); }
  Duration idle_timeout() const noexcept { return idle_timeout_; }

  /// Records that `dcid` and `tuple.src` belong to the connection `o_dcid`.
  /// Throws DcidCollision, leaving the table untouched, when `dcid` (or the
  /// O-DCID of a new record) already belongs to another connection.
  TrackingRecord upsert(const ConnectionId& dcid, const ConnectionId& o_dcid, const FiveTuple& tuple,
                        TimePoint now = {}) {
    if (tuple.protocol != Protocol::Udp) throw std::invalid_argument("tracking requires UDP");
    const std::size_t rec_shard = shard_of(o_dcid);
    const std::size_t dcid_shard = shard_of(dcid);
    const std::size_t addr_shard = shard_of(tuple.src);
    auto locks = lock_exclusive({rec_shard, dcid_shard, addr_shard});

    Shard& rs = *shards_[rec_shard];
    Shard& ds = *shards_[dcid_shard];
    Shard& as = *shards_[addr_shard];

    if (auto it = ds.by_dcid.find(dcid); it != ds.by_dcid.end() && it->second != o_dcid)
      throw DcidCollision(dcid, it->second);

    auto rec_it = rs.records.find(o_dcid);
    if (rec_it == rs.records.end()) {
      // The O-DCID is itself a DCID of the new record; it lives in rec_shard.
      if (auto it = rs.by_dcid.find(o_dcid); it != rs.by_dcid.end() && it->second != o_dcid)
        throw DcidCollision(o_dcid, it->second);
      TrackingRecord fresh;
      fresh.o_dcid = o_dcid;
      fresh.dcids.push_back(o_dcid);
      fresh.dcid_len = static_cast<std::uint8_t>(o_dcid.size());
      rs.by_dcid.emplace(o_dcid, o_dcid);
      rec_it = rs.records.emplace(o_dcid, std::move(fresh)).first;
    }

    TrackingRecord& rec = rec_it->second;
    if (!rec.has_dcid(dcid)) {
      rec.dcids.push_back(dcid);
      ds.by_dcid.emplace(dcid, o_dcid);
    }
    if (!rec.has_client_addr(tuple.src)) rec.client_addrs.push_back(tuple.src);
    auto& owners = as.by_addr[tuple.src];
    owners.erase(std::remove(owners.begin(), owners.end(), o_dcid), owners.end());
    owners.push_back(o_dcid);

    rec.server = tuple.dst;
    rec.dcid_len = static_cast<std::uint8_t>(dcid.size());
    rec.last_update = now;
    return rec;
  }

  std::optional<TrackingRecord> lookup_by_dcid(const ConnectionId& dcid) const {
    std::optional<ConnectionId> owner;
    {
      const Shard& s = *shards_[shard_of(dcid)];
      std::shared_lock lock(s.mu);
      if (auto it = s.by_dcid.find(dcid); it != s.by_dcid.end()) owner = it->second;
    }
    return owner ? find_record(*owner) : std::nullopt;
  }

  std::optional<TrackingRecord> lookup_by_client_addr(const Endpoint& addr) const {
    std::optional<ConnectionId> owner;
    {
      const Shard& s = *shards_[shard_of(addr)];
      std::shared_lock lock(s.mu);
      if (auto it = s.by_addr.find(addr); it != s.by_addr.end() && !it->second.empty()) owner = it->second.back();
    }
    return owner ? find_record(*owner) : std::nullopt;
  }

  std::optional<TrackingRecord> find_record(const ConnectionId& o_dcid) const {
    const Shard& s = *shards_[shard_of(o_dcid)];
    std::shared_lock lock(s.mu);
    if (auto it = s.records.find(o_dcid); it != s.records.end()) return it->second;
    return std::nullopt;
  }

  /// Removes the record and all of its index entries. Returns whether a
  /// record existed.
  bool close(const ConnectionId& o_dcid) {
    auto locks = lock_all();
    return erase_locked(o_dcid);
  }

  /// Evicts records idle for longer than the idle timeout. Returns the
  /// evicted O-DCIDs.
  std::vector<ConnectionId> expire_idle(TimePoint now) {
    auto locks = lock_all();
    std::vector<ConnectionId> stale;
    for (auto& shard : shards_)
      for (auto& [o_dcid, rec] : shard->records)
        if (now - rec.last_update > idle_timeout_) stale.push_back(o_dcid);
    for (const auto& o : stale) erase_locked(o);
    return stale;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& shard : shards_) {
      std::shared_lock lock(shard->mu);
      n += shard->records.size();
    }
    return n;
  }

  std::vector<TrackingRecord> snapshot() const {
    auto locks = lock_all_shared();
    std::vector<TrackingRecord> out;
    for (const auto& shard : shards_)
      for (const auto& [_, rec] : shard->records) out.push_back(rec);
    return out;
  }

  /// DCID -> O-DCID index contents, merged across shards.
  std::unordered_map<ConnectionId, ConnectionId> dcid_index() const {
    auto locks = lock_all_shared();
    std::unordered_map<ConnectionId, ConnectionId> out;
    for (const auto& shard : shards_) out.insert(shard->by_dcid.begin(), shard->by_dcid.end());
    return out;
  }

  /// Address -> owning O-DCIDs (most recent last), merged across shards.
  std::unordered_map<Endpoint, std::vector<ConnectionId>> addr_index() const {
    auto locks = lock_all_shared();
    std::unordered_map<Endpoint, std::vector<ConnectionId>> out;
    for (const auto& shard : shards_)
      for (const auto& [addr, owners] : shard->by_addr)
        if (!owners.empty()) out.emplace(addr, owners);
    return out;
  }

 private:
  struct Shard {
    mutable std::shared_mutex mu;
    std::unordered_map<ConnectionId, TrackingRecord> records;
    std::unordered_map<ConnectionId, ConnectionId> by_dcid;
    std::unordered_map<Endpoint, std::vector<ConnectionId>> by_addr;
  };

  std::size_t shard_of(const ConnectionId& cid) const { return shard_for(cid, shards_.size()); }
  std::size_t shard_of(const Endpoint& ep) const { return static_cast<std::size_t>(hash_endpoint(ep) % shards_.size()); }

  std::vector<std::unique_lock<std::shared_mutex>> lock_exclusive(std::initializer_list<std::size_t> ids) const {
    std::vector<std::size_t> order(ids);
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());
    std::vector<std::unique_lock<std::shared_mutex>> locks;
    locks.reserve(order.size());
    for (std::size_t i : order) locks.emplace_back(shards_[i]->mu);
    return locks;
  }

  std::vector<std::unique_lock<std::shared_mutex>> lock_all() const {
    std::vector<std::unique_lock<std::shared_mutex>> locks;
    locks.reserve(shards_.size());
    for (const auto& s : shards_) locks.emplace_back(s->mu);
    return locks;
  }

  std::vector<std::shared_lock<std::shared_mutex>> lock_all_shared() const {
    std::vector<std::shared_lock<std::shared_mutex>> locks;
    locks.reserve(shards_.size());
    for (const auto& s : shards_) locks.emplace_back(s->mu);
    return locks;
  }

  // Caller holds every shard lock.
  bool erase_locked(const ConnectionId& o_dcid) {
    Shard& rs = *shards_[shard_of(o_dcid)];
    auto it = rs.records.find(o_dcid);
    if (it == rs.records.end()) return false;
    const TrackingRecord& rec = it->second;
    for (const auto& d : rec.dcids) {
      Shard& ds = *shards_[shard_of(d)];
      if (auto di = ds.by_dcid.find(d); di != ds.by_dcid.end() && di->second == o_dcid) ds.by_dcid.erase(di);
    }
    for (const auto& a : rec.client_addrs) {
      Shard& as = *shards_[shard_of(a)];
      if (auto ai = as.by_addr.find(a); ai != as.by_addr.end()) {
        auto& owners = ai->second;
        owners.erase(std::remove(owners.begin(), owners.end(), o_dcid), owners.end());
        if (owners.empty()) as.by_addr.erase(ai);
      }
    }
    rs.records.erase(it);
    return true;
  }

  std::vector<std::unique_ptr<Shard>> shards_;
  Duration idle_timeout_;
};

}  // namespace qasm
