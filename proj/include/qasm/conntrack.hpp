#pragma once

#include <unordered_set>

#include "qasm/quic_aware.hpp"

namespace qasm {

struct ConntrackConfig {
  std::size_t capacity = 65536;
  QuicOptions quic;
};

/// Flow table with a hard entry cap. Flows are keyed in client-to-server
/// orientation, so an inbound packet matches the entry of its outbound flow.
/// A packet of a flow that is not yet tracked is dropped once the table is
/// full. QUIC-aware modes key QUIC flows by O-DCID.
class Conntrack final : public QuicAwareMiddlebox {
 public:
  explicit Conntrack(ConntrackConfig cfg = {}) : QuicAwareMiddlebox(cfg.quic), cfg_(cfg) {}

  std::string name() const override { return std::string("conntrack/") + std::string(to_string(mode())); }
  std::size_t table_size() const override { return tuples_.size() + conns_.size(); }
  std::size_t capacity() const noexcept { return cfg_.capacity; }

 protected:
  ProcessResult do_process(ByteView datagram, Direction dir, TimePoint now) override {
    ip::PacketView p;
    try {
      p = ip::parse(datagram);
    } catch (const DecodeError&) {
      return {Drop{DropReason::Malformed}, {}};
    }

    ProcessResult r{Drop{DropReason::TableFull}, {}};
    PhaseClock clock;
    std::optional<ConnectionId> conn;
    if (dir == Direction::Outbound) {
      if (auto res = resolve_outbound(p, now)) {
        r.phases.quic = true;
        r.phases.queried = res->queried;
        conn = res->key;
      }
    } else {
      bool queried = false;
      conn = resolve_inbound(p, now, &queried);
      r.phases.quic = is_quic(p, dir);
      r.phases.queried = queried;
    }
    const FiveTuple key = dir == Direction::Outbound ? p.tuple : p.tuple.reversed();
    bool known = conn ? conns_.contains(*conn) : tuples_.contains(key);
    r.phases.lookup = clock.lap();

    if (known) {
      r.phases.updated = true;
    } else {
      if (table_size() >= cfg_.capacity) return r;
      r.phases.created = true;
      if (conn)
        conns_.insert(*conn);
      else
        tuples_.insert(key);
      r.phases.create = clock.lap();
    }
    r.action = Forward{Bytes(datagram.begin(), datagram.end()), 0};
    return r;
  }

 private:
  ConntrackConfig cfg_;
  std::unordered_set<FiveTuple> tuples_;
  std::unordered_set<ConnectionId> conns_;
};

}  // namespace qasm
