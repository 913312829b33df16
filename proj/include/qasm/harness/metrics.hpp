#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qasm/client_emulator.hpp"
#include "qasm/middlebox.hpp"

namespace qasm::harness {

/// One client-originated packet, from pipeline ingress to egress.
struct PacketRecord {
  std::uint64_t id = 0;
  std::uint32_t conn = 0;
  std::uint32_t seq = 0;
  /// Migrations the connection had performed when the packet was sent.
  std::uint64_t epoch = 0;
  std::size_t bytes = 0;
  Duration t_in{};
  std::optional<Duration> t_out;
  Duration lookup{};
  Duration create{};
  Duration update{};
  std::optional<std::size_t> backend;
  std::optional<std::size_t> dropped_at;
};

struct ThroughputBin {
  std::uint64_t second = 0;
  std::uint64_t pkts = 0;
  std::uint64_t bytes = 0;
};

struct TableSample {
  Duration t{};
  std::size_t middlebox = 0;
  std::size_t entries = 0;
};

struct MiddleboxSummary {
  std::string name;
  MiddleboxStats stats;
  std::size_t table_final = 0;
  std::size_t table_max = 0;
  /// Times at which the middlebox decided to forward client-to-server packets.
  std::vector<Duration> forward_times;
};

struct MetricsReport {
  std::string scenario;
  std::vector<PacketRecord> packets;
  std::vector<ThroughputBin> throughput;
  std::vector<TableSample> tables;
  std::vector<MiddleboxSummary> middleboxes;
  std::vector<std::pair<std::string, double>> summary;

  std::uint64_t misroutes = 0;
  std::uint64_t stale_deliveries = 0;
  std::uint64_t delivered_server = 0;
  std::uint64_t delivered_client = 0;
  std::uint64_t updates_sent = 0;
  std::uint64_t updates_lost = 0;
  double remap_fraction = 0.0;
  std::uint64_t remap_boundaries = 0;

  std::optional<double> metric(std::string_view name) const {
    for (const auto& [k, v] : summary)
      if (k == name) return v;
    return std::nullopt;
  }

  /// offered = forwarded + dropped at every hop.
  bool conserved() const {
    return std::all_of(middleboxes.begin(), middleboxes.end(), [](const MiddleboxSummary& m) {
      return m.stats.offered == m.stats.forwarded + m.stats.dropped();
    });
  }
};

/// Tag and DCID of an emulated QUIC datagram.
struct Tagged {
  PayloadTag tag;
  ConnectionId dcid;
};

inline std::optional<Tagged> read_tagged(ByteView datagram, std::uint8_t dcid_len) {
  try {
    auto p = ip::parse(datagram);
    auto form = quic::peek_form(p.payload);
    if (!form) return std::nullopt;
    auto h = *form == quic::HeaderForm::Long ? quic::decode_long_header(p.payload)
                                              : quic::decode_short_header(p.payload, dcid_len);
    auto tag = PayloadTag::read(h.payload);
    if (!tag) return std::nullopt;
    return Tagged{*tag, h.dcid};
  } catch (const DecodeError&) {
    return std::nullopt;
  }
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t idx = static_cast<std::size_t>(std::ceil(p / 100.0 * v.size()));
  return v[std::clamp<std::size_t>(idx, 1, v.size()) - 1];
}

/// Gathers observations from a run. Packets are identified by their payload
/// tag, so runners only hand over datagrams. Which connection owns which DCID
/// and client address is learned from the datagrams the clients send.
/// All methods may be called from several threads.
class Collector {
 public:
  Collector(std::uint8_t dcid_len, std::size_t hops) : dcid_len_(dcid_len), forward_times_(hops) {}

  /// A client-to-server datagram entered the pipeline.
  void on_send(ByteView datagram, Duration t) {
    auto tg = read_tagged(datagram, dcid_len_);
    if (!tg) return;
    Endpoint src = ip::parse(datagram).tuple.src;
    std::lock_guard lock(mu_);
    Owner& o = owners_[tg->tag.conn];
    if (o.srcs.empty() || o.srcs.back() != src) {
      if (!o.srcs.empty()) ++o.epoch;
      o.srcs.push_back(src);
      addr_owner_.try_emplace(src, tg->tag.conn);
    }
    dcid_owner_.try_emplace(tg->dcid, tg->tag.conn);
    PacketRecord r;
    r.id = report_.packets.size();
    r.conn = tg->tag.conn;
    r.seq = tg->tag.seq;
    r.epoch = o.epoch;
    r.bytes = datagram.size();
    r.t_in = t;
    index_[key(tg->tag)] = r.id;
    report_.packets.push_back(r);
  }

  /// Outcome of one hop for a datagram travelling in `dir`, decided at
  /// `t_decided`.
  void on_hop(std::size_t hop, ByteView datagram, Direction dir, const ProcessResult& res, Duration t_decided,
              bool is_lb) {
    if (dir != Direction::Outbound) return;
    auto tg = read_tagged(datagram, dcid_len_);
    std::lock_guard lock(mu_);
    if (forwarded(res.action)) forward_times_[hop].push_back(t_decided);
    if (!tg) return;
    PacketRecord* r = find(tg->tag);
    if (!r) return;
    r->lookup += res.phases.lookup;
    r->create += res.phases.create;
    r->update += res.phases.update;
    if (auto* f = std::get_if<Forward>(&res.action)) {
      if (is_lb) r->backend = f->egress;
    } else {
      r->dropped_at = hop;
    }
  }

  /// A client-to-server datagram left the last hop.
  void on_server(ByteView datagram, Duration t) {
    auto tg = read_tagged(datagram, dcid_len_);
    std::lock_guard lock(mu_);
    ++report_.delivered_server;
    std::uint64_t sec = static_cast<std::uint64_t>(std::max(0.0, to_seconds(t)));
    auto& bin = bins_[sec];
    ++bin.pkts;
    bin.bytes += datagram.size();
    auto owner = tg ? dcid_owner_.find(tg->dcid) : dcid_owner_.end();
    if (owner == dcid_owner_.end() || owner->second != tg->tag.conn) {
      ++report_.misroutes;
      return;
    }
    if (PacketRecord* r = find(tg->tag)) r->t_out = t;
  }

  /// A server-to-client datagram left the first hop towards the clients.
  void on_client(ByteView datagram) {
    std::optional<PayloadTag> tag;
    Endpoint dst;
    try {
      auto p = ip::parse(datagram);
      dst = p.tuple.dst;
      auto h = quic::decode_short_header(p.payload, dcid_len_);
      tag = PayloadTag::read(h.payload);
    } catch (const DecodeError&) {
    }
    std::lock_guard lock(mu_);
    ++report_.delivered_client;
    auto owner = addr_owner_.find(dst);
    if (!tag || owner == addr_owner_.end() || owner->second != tag->conn) {
      ++report_.misroutes;
      return;
    }
    if (owners_[tag->conn].srcs.back() != dst) ++report_.stale_deliveries;
  }

  void on_table_sample(Duration t, std::size_t hop, std::size_t entries) {
    std::lock_guard lock(mu_);
    report_.tables.push_back(TableSample{t, hop, entries});
  }

  /// Completes the report once all traffic has drained.
  MetricsReport finish(std::string scenario, const std::vector<const Middlebox*>& chain, std::uint64_t updates_sent,
                       std::uint64_t updates_lost) {
    std::lock_guard lock(mu_);
    MetricsReport rep = std::move(report_);
    rep.scenario = std::move(scenario);
    rep.updates_sent = updates_sent;
    rep.updates_lost = updates_lost;
    for (const auto& [sec, bin] : bins_) rep.throughput.push_back(ThroughputBin{sec, bin.pkts, bin.bytes});

    for (std::size_t i = 0; i < chain.size(); ++i) {
      MiddleboxSummary s;
      s.name = chain[i]->name();
      s.stats = chain[i]->stats();
      s.table_final = chain[i]->table_size();
      s.table_max = s.table_final;
      for (const auto& ts : rep.tables)
        if (ts.middlebox == i) s.table_max = std::max(s.table_max, ts.entries);
      s.forward_times = std::move(forward_times_[i]);
      rep.middleboxes.push_back(std::move(s));
    }
    compute_remap(rep);
    summarize(rep);
    return rep;
  }

 private:
  struct Owner {
    std::vector<Endpoint> srcs;
    std::uint64_t epoch = 0;
  };

  struct Bin {
    std::uint64_t pkts = 0;
    std::uint64_t bytes = 0;
  };

  static std::uint64_t key(const PayloadTag& t) { return (std::uint64_t{t.conn} << 32) | t.seq; }

  PacketRecord* find(const PayloadTag& t) {
    auto it = index_.find(key(t));
    return it == index_.end() ? nullptr : &report_.packets[it->second];
  }

  /// Backend changes across migrations: for every connection compare the
  /// backend of the last forwarded packet before a migration with the first
  /// one after it.
  static void compute_remap(MetricsReport& rep) {
    std::map<std::uint32_t, std::vector<const PacketRecord*>> per_conn;
    for (const auto& p : rep.packets)
      if (p.backend) per_conn[p.conn].push_back(&p);
    std::uint64_t boundaries = 0, changed = 0;
    for (auto& [_, v] : per_conn) {
      std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->seq < b->seq; });
      for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i]->epoch == v[i - 1]->epoch) continue;
        ++boundaries;
        changed += *v[i]->backend != *v[i - 1]->backend;
      }
    }
    rep.remap_boundaries = boundaries;
    rep.remap_fraction = boundaries ? static_cast<double>(changed) / boundaries : 0.0;
  }

  static void summarize(MetricsReport& rep) {
    auto& s = rep.summary;
    std::vector<double> lat;
    for (const auto& p : rep.packets)
      if (p.t_out) lat.push_back(to_micros(*p.t_out - p.t_in));
    s.emplace_back("packets_sent", static_cast<double>(rep.packets.size()));
    s.emplace_back("delivered_server", static_cast<double>(rep.delivered_server));
    s.emplace_back("delivered_client", static_cast<double>(rep.delivered_client));
    s.emplace_back("misroutes", static_cast<double>(rep.misroutes));
    s.emplace_back("stale_deliveries", static_cast<double>(rep.stale_deliveries));
    s.emplace_back("updates_sent", static_cast<double>(rep.updates_sent));
    s.emplace_back("updates_lost", static_cast<double>(rep.updates_lost));
    s.emplace_back("latency_median_us", median(lat));
    s.emplace_back("latency_p99_us", percentile(lat, 99));
    s.emplace_back("remap_fraction", rep.remap_fraction);
    s.emplace_back("remap_boundaries", static_cast<double>(rep.remap_boundaries));
    for (std::size_t i = 0; i < rep.middleboxes.size(); ++i) {
      const auto& m = rep.middleboxes[i];
      std::string pre = "mb" + std::to_string(i) + "_";
      s.emplace_back(pre + "offered", static_cast<double>(m.stats.offered));
      s.emplace_back(pre + "forwarded", static_cast<double>(m.stats.forwarded));
      s.emplace_back(pre + "dropped", static_cast<double>(m.stats.dropped()));
      for (std::size_t r = 0; r < kDropReasonCount; ++r)
        if (m.stats.drops[r])
          s.emplace_back(pre + "drop_" + std::string(to_string(static_cast<DropReason>(r))),
                         static_cast<double>(m.stats.drops[r]));
      s.emplace_back(pre + "table_final", static_cast<double>(m.table_final));
      s.emplace_back(pre + "table_max", static_cast<double>(m.table_max));
    }
  }

  std::uint8_t dcid_len_;
  std::mutex mu_;
  MetricsReport report_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::map<std::uint64_t, Bin> bins_;
  std::unordered_map<std::uint32_t, Owner> owners_;
  std::unordered_map<ConnectionId, std::uint32_t> dcid_owner_;
  std::unordered_map<Endpoint, std::uint32_t> addr_owner_;
  std::vector<std::vector<Duration>> forward_times_;
};

}  // namespace qasm::harness
