#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "qasm/datagram.hpp"
#include "qasm/quic_wire.hpp"
#include "qasm/time.hpp"
#include "qasm/wire_protocol.hpp"

namespace qasm {

class AddressExhausted : public std::runtime_error {
 public:
  AddressExhausted() : std::runtime_error("client address source exhausted") {}
};

/// Generator of fresh client (ip, port) pairs. Never repeats an endpoint.
class AddressSource {
 public:
  virtual ~AddressSource() = default;
  virtual Endpoint next() = 0;
};

/// Walks `ip_count` consecutive addresses from `base`, one address per draw,
/// and moves to the next port after each full round.
class SequentialAddressSource final : public AddressSource {
 public:
  SequentialAddressSource(Endpoint base, std::uint32_t ip_count = 1, std::uint32_t port_count = 50000)
      : base_(base), ip_count_(ip_count), port_count_(port_count) {
    if (ip_count == 0 || port_count == 0) throw std::invalid_argument("empty address range");
    if (std::uint32_t{base.port} + port_count > 65536) throw std::invalid_argument("port range exceeds 65535");
  }

  Endpoint next() override {
    if (drawn_ >= std::uint64_t{ip_count_} * port_count_) throw AddressExhausted();
    std::uint64_t k = drawn_++;
    return Endpoint{Ipv4Addr(base_.ip.value + static_cast<std::uint32_t>(k % ip_count_)),
                    static_cast<std::uint16_t>(base_.port + k / ip_count_)};
  }

 private:
  Endpoint base_;
  std::uint32_t ip_count_;
  std::uint32_t port_count_;
  std::uint64_t drawn_ = 0;
};

class ListAddressSource final : public AddressSource {
 public:
  explicit ListAddressSource(std::vector<Endpoint> list) : list_(std::move(list)) {}

  Endpoint next() override {
    if (pos_ >= list_.size()) throw AddressExhausted();
    return list_[pos_++];
  }

 private:
  std::vector<Endpoint> list_;
  std::size_t pos_ = 0;
};

/// Uniform draws from `host_count` addresses after `base` and ports
/// [port_lo, port_lo + port_count), without repetition.
class RandomAddressSource final : public AddressSource {
 public:
  RandomAddressSource(std::uint64_t seed, Ipv4Addr base, std::uint32_t host_count, std::uint16_t port_lo = 1024,
                      std::uint32_t port_count = 64000)
      : rng_(seed), base_(base), hosts_(host_count), port_lo_(port_lo), ports_(port_count) {
    if (host_count == 0 || port_count == 0) throw std::invalid_argument("empty address range");
  }

  Endpoint next() override {
    const std::uint64_t space = std::uint64_t{hosts_} * ports_;
    if (used_.size() >= space) throw AddressExhausted();
    for (;;) {
      std::uint64_t k = rng_() % space;
      if (!used_.insert(k).second) continue;
      return Endpoint{Ipv4Addr(base_.value + static_cast<std::uint32_t>(k / ports_)),
                      static_cast<std::uint16_t>(port_lo_ + k % ports_)};
    }
  }

 private:
  std::mt19937_64 rng_;
  Ipv4Addr base_;
  std::uint32_t hosts_;
  std::uint16_t port_lo_;
  std::uint32_t ports_;
  std::unordered_set<std::uint64_t> used_;
};

struct MigrationPolicy {
  struct None {};
  struct EveryNPackets {
    std::uint64_t n;
  };
  struct EveryTSeconds {
    double t;
  };
  struct RateHz {
    double f;
  };

  std::variant<None, EveryNPackets, EveryTSeconds, RateHz> trigger = None{};
  bool rotate_dcid = true;

  void validate() const {
    if (auto* p = std::get_if<EveryNPackets>(&trigger); p && p->n < 1)
      throw std::invalid_argument("migration packet interval must be >= 1");
    if (auto* p = std::get_if<EveryTSeconds>(&trigger); p && !(p->t > 0))
      throw std::invalid_argument("migration period must be > 0");
    if (auto* p = std::get_if<RateHz>(&trigger); p && !(p->f > 0))
      throw std::invalid_argument("migration rate must be > 0");
  }

  /// Packet-count trigger, if any.
  std::optional<std::uint64_t> packet_interval() const {
    if (auto* p = std::get_if<EveryNPackets>(&trigger)) return p->n;
    return std::nullopt;
  }

  /// Time trigger, if any.
  std::optional<Duration> period() const {
    if (auto* p = std::get_if<EveryTSeconds>(&trigger)) return from_seconds(p->t);
    if (auto* p = std::get_if<RateHz>(&trigger)) return from_seconds(1.0 / p->f);
    return std::nullopt;
  }
};

/// Client side of the tracking protocol: packs tracking updates and hands the
/// encoded datagrams to `send`.
class ClientAgent {
 public:
  using Sender = std::function<void(Bytes)>;

  explicit ClientAgent(Sender send) : send_(std::move(send)) {}

  void update(const ConnectionId& dcid, const ConnectionId& o_dcid, const FiveTuple& tuple) {
    ++updates_;
    send_(wire::encode(wire::ClientUpdate{dcid, o_dcid, tuple}));
  }

  void close(const ConnectionId& o_dcid) {
    ++closes_;
    send_(wire::encode(wire::ConnClose{o_dcid}));
  }

  std::uint64_t updates_sent() const noexcept { return updates_; }
  std::uint64_t closes_sent() const noexcept { return closes_; }

 private:
  Sender send_;
  std::uint64_t updates_ = 0;
  std::uint64_t closes_ = 0;
};

struct EmulatedConnection {
  std::uint32_t id = 0;
  ConnectionId o_dcid;
  ConnectionId current_dcid;
  ConnectionId scid;
  Endpoint current_src;
  Endpoint server;
  std::uint64_t packets_sent = 0;
  std::uint64_t migrations_done = 0;
  std::vector<ConnectionId> dcid_history;
  std::vector<Endpoint> src_history;
  bool closed = false;

  FiveTuple tuple() const { return FiveTuple{Protocol::Udp, current_src, server}; }
};

/// Identification carried at the start of every emulated QUIC payload:
/// connection id and per-connection packet sequence, both big-endian u32.
struct PayloadTag {
  static constexpr std::size_t kSize = 8;
  std::uint32_t conn = 0;
  std::uint32_t seq = 0;

  static std::optional<PayloadTag> read(ByteView payload) {
    if (payload.size() < kSize) return std::nullopt;
    return PayloadTag{load_be32(payload.data()), load_be32(payload.data() + 4)};
  }
};

/// Migrating QUIC traffic generator. Packets are complete IPv4/UDP datagrams
/// whose payload is a QUIC packet. Every tracking update is sent through the
/// Client Agent before the packet that depends on it is produced.
class ClientEmulator {
 public:
  ClientEmulator(std::uint64_t seed, AddressSource& addresses, ClientAgent& agent)
      : rng_(seed), addresses_(addresses), agent_(agent) {}

  /// Opens a connection and returns its long-header initial packet.
  std::pair<EmulatedConnection*, Bytes> open(const Endpoint& server, std::uint8_t o_dcid_len,
                                             std::size_t payload_len = 0) {
    if (o_dcid_len < 1 || o_dcid_len > ConnectionId::kMaxLength)
      throw std::invalid_argument("o_dcid_len must be in [1, 20]");
    Endpoint src = addresses_.next();
    auto& c = conns_.emplace_back();
    c.id = static_cast<std::uint32_t>(conns_.size() - 1);
    c.o_dcid = random_cid(o_dcid_len);
    c.current_dcid = c.o_dcid;
    c.scid = random_cid(8);
    c.current_src = src;
    c.server = server;
    c.dcid_history.push_back(c.o_dcid);
    c.src_history.push_back(c.current_src);
    agent_.update(c.o_dcid, c.o_dcid, c.tuple());
    Bytes quic = quic::encode_long_header(quic::kVersion1, c.o_dcid, c.scid, payload(c, payload_len));
    ++c.packets_sent;
    return {&c, ip::build(c.tuple(), quic)};
  }

  /// Short-header packet on the connection's current path.
  Bytes send_data(EmulatedConnection& c, std::size_t payload_len) {
    if (c.closed) throw std::logic_error("send on closed connection");
    Bytes quic = quic::encode_short_header(c.current_dcid, payload(c, payload_len));
    ++c.packets_sent;
    return ip::build(c.tuple(), quic);
  }

  void migrate(EmulatedConnection& c, bool rotate_dcid) {
    if (c.closed) throw std::logic_error("migrate on closed connection");
    Endpoint fresh = addresses_.next();
    c.current_src = fresh;
    c.src_history.push_back(fresh);
    if (rotate_dcid) {
      ConnectionId d;
      do {
        d = random_cid(static_cast<std::uint8_t>(c.o_dcid.size()));
      } while (std::find(c.dcid_history.begin(), c.dcid_history.end(), d) != c.dcid_history.end());
      c.current_dcid = d;
      c.dcid_history.push_back(d);
    }
    ++c.migrations_done;
    agent_.update(c.current_dcid, c.o_dcid, c.tuple());
  }

  void close(EmulatedConnection& c) {
    if (c.closed) return;
    c.closed = true;
    agent_.close(c.o_dcid);
  }

  EmulatedConnection& connection(std::uint32_t id) { return conns_.at(id); }
  const std::deque<EmulatedConnection>& connections() const noexcept { return conns_; }

 private:
  ConnectionId random_cid(std::uint8_t len) {
    std::array<std::uint8_t, ConnectionId::kMaxLength> raw{};
    for (std::uint8_t i = 0; i < len; ++i) raw[i] = static_cast<std::uint8_t>(rng_() >> 56);
    return ConnectionId(ByteView(raw.data(), len));
  }

  static Bytes payload(const EmulatedConnection& c, std::size_t len) {
    Bytes p(len, 0);
    std::uint8_t tag[PayloadTag::kSize];
    store_be32(tag, c.id);
    store_be32(tag + 4, static_cast<std::uint32_t>(c.packets_sent));
    std::copy_n(tag, std::min(len, PayloadTag::kSize), p.begin());
    return p;
  }

  std::mt19937_64 rng_;
  AddressSource& addresses_;
  ClientAgent& agent_;
  std::deque<EmulatedConnection> conns_;
};

/// Answers every QUIC packet with a same-size short-header packet on the
/// reversed path, using a DCID the server picked for that connection.
class EchoServer {
 public:
  explicit EchoServer(std::uint64_t seed = 0x5eed, std::uint8_t dcid_len = 8) : rng_(seed), dcid_len_(dcid_len) {}

  /// Returns the reply datagram, or nothing for packets it cannot attribute.
  std::optional<Bytes> reply(ByteView datagram) {
    ip::PacketView p;
    try {
      p = ip::parse(datagram);
    } catch (const DecodeError&) {
      return std::nullopt;
    }
    auto form = quic::peek_form(p.payload);
    if (!form) return std::nullopt;
    quic::QuicHeader h;
    try {
      h = *form == quic::HeaderForm::Long ? quic::decode_long_header(p.payload)
                                           : quic::decode_short_header(p.payload, dcid_len_);
    } catch (const DecodeError&) {
      return std::nullopt;
    }
    auto tag = PayloadTag::read(h.payload);
    if (!tag) return std::nullopt;
    auto [it, fresh] = dcids_.try_emplace(tag->conn);
    if (fresh) it->second = random_cid();
    ++replies_;
    return ip::build(p.tuple.reversed(), quic::encode_short_header(it->second, h.payload));
  }

  std::uint64_t replies() const noexcept { return replies_; }

  /// Server-chosen DCID of a connection, if it has been seen.
  std::optional<ConnectionId> dcid_for(std::uint32_t conn) const {
    auto it = dcids_.find(conn);
    if (it == dcids_.end()) return std::nullopt;
    return it->second;
  }

 private:
  ConnectionId random_cid() {
    std::array<std::uint8_t, ConnectionId::kMaxLength> raw{};
    for (std::uint8_t i = 0; i < dcid_len_; ++i) raw[i] = static_cast<std::uint8_t>(rng_() >> 56);
    return ConnectionId(ByteView(raw.data(), dcid_len_));
  }

  std::mt19937_64 rng_;
  std::uint8_t dcid_len_;
  std::unordered_map<std::uint32_t, ConnectionId> dcids_;
  std::uint64_t replies_ = 0;
};

}  // namespace qasm
