#pragma once

// Random packet traces run through a real middlebox and the reference model
// side by side. Each trace mixes connection opens, migrations (with and
// without a DCID change), lost control updates, closes, reverse traffic,
// non-QUIC noise, malformed datagrams and idle gaps long enough to expire
// NAT bindings.

#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qasm/conntrack.hpp"
#include "qasm/load_balancer.hpp"
#include "qasm/nat.hpp"
#include "qasm/rate_limiter.hpp"
#include "reference_sim.hpp"

namespace trace {

enum class Kind { Nat, RateLimiter, Conntrack, LoadBalancer };

inline const char* name(Kind k) {
  switch (k) {
    case Kind::Nat: return "nat";
    case Kind::RateLimiter: return "rl";
    case Kind::Conntrack: return "conntrack";
    case Kind::LoadBalancer: return "lb";
  }
  return "?";
}

inline const char* name(ref::Mode m) {
  switch (m) {
    case ref::Mode::Default: return "default";
    case ref::Mode::Reactive: return "reactive";
    case ref::Mode::Proactive: return "proactive";
  }
  return "?";
}

struct Result {
  std::size_t packets = 0;
  std::size_t forwarded = 0;
  std::size_t mismatches = 0;
  std::string first_mismatch;
};

// Constants shared by both sides.
inline constexpr std::int64_t kQuantumUs = 15625;  // 1/64 s keeps bucket arithmetic exact
inline constexpr std::int64_t kNatTimeoutUs = 2'000'000;
inline constexpr std::int64_t kStartUs = 1'000'000;
inline constexpr std::uint16_t kNatPortLo = 20000;
inline constexpr std::size_t kNatPorts = 6;
inline constexpr double kRlRate = 4.0;
inline constexpr std::size_t kConntrackCapacity = 12;

class Runner {
 public:
  Runner(Kind kind, ref::Mode mode, std::uint64_t seed) : kind_(kind), mode_(mode), rng_(seed) {
    server_ = qasm::Endpoint{qasm::Ipv4Addr(203, 0, 113, 10), 443};
    vip_ = qasm::Endpoint{qasm::Ipv4Addr(198, 51, 100, 1), 443};
    for (std::uint8_t i = 0; i < 4; ++i) backends_.push_back(qasm::Endpoint{qasm::Ipv4Addr(10, 1, 0, std::uint8_t(i + 1)), 443});
    for (std::uint8_t ip = 1; ip <= 3; ++ip)
      for (std::uint16_t port = 5000; port < 5003; ++port) pool_.push_back(qasm::Endpoint{qasm::Ipv4Addr(10, 0, 0, ip), port});
    if (kind_ == Kind::LoadBalancer) server_ = vip_;

    link_ = std::make_unique<qasm::DirectAgentLink>(agent_, qasm::Endpoint{qasm::Ipv4Addr(192, 0, 2, 1), 7000},
                                                   [this](qasm::Outbound o) {
                                                     auto msg = qasm::wire::decode(o.bytes);
                                                     real_->on_push(std::get<qasm::wire::PushUpdate>(msg));
                                                   });
    qasm::QuicOptions q;
    q.mode = mode_ == ref::Mode::Default    ? qasm::MiddleboxMode::Default
             : mode_ == ref::Mode::Reactive ? qasm::MiddleboxMode::Reactive
                                            : qasm::MiddleboxMode::Proactive;
    q.agent = link_.get();
    const auto nat_ip = qasm::Ipv4Addr(65, 12, 81, 14);
    switch (kind_) {
      case Kind::Nat: {
        qasm::NatConfig c;
        c.public_ips = {nat_ip};
        c.port_lo = kNatPortLo;
        c.ports_per_ip = kNatPorts;
        c.binding_timeout = std::chrono::microseconds(kNatTimeoutUs);
        c.quic = q;
        real_ = std::make_unique<qasm::Nat>(c);
        nat_ = std::make_unique<ref::Nat>(mode_, ref_agent_, nat_ip, kNatPortLo, kNatPorts, kNatTimeoutUs);
        know_ = &nat_->knowledge();
        break;
      }
      case Kind::RateLimiter: {
        qasm::RateLimiterConfig c;
        c.rate = kRlRate;
        c.capacity = kRlRate;
        c.quic = q;
        real_ = std::make_unique<qasm::RateLimiter>(c);
        rl_ = std::make_unique<ref::RateLimiter>(mode_, ref_agent_, kRlRate, kRlRate);
        know_ = &rl_->knowledge();
        break;
      }
      case Kind::Conntrack: {
        qasm::ConntrackConfig c;
        c.capacity = kConntrackCapacity;
        c.quic = q;
        real_ = std::make_unique<qasm::Conntrack>(c);
        ct_ = std::make_unique<ref::Conntrack>(mode_, ref_agent_, kConntrackCapacity);
        know_ = &ct_->knowledge();
        break;
      }
      case Kind::LoadBalancer: {
        qasm::LoadBalancerConfig c;
        c.vip = vip_;
        c.backends = backends_;
        c.quic = q;
        real_ = std::make_unique<qasm::LoadBalancer>(c);
        lb_ = std::make_unique<ref::LoadBalancer>(mode_, ref_agent_, vip_, backends_);
        know_ = &lb_->knowledge();
        break;
      }
    }
  }

  Result run(std::size_t max_packets) {
    Result res;
    const std::size_t target = std::uniform_int_distribution<std::size_t>(1, max_packets)(rng_);
    while (res.packets < target) {
      advance();
      double r = uniform();
      if (r < 0.08) {
        open(res);
      } else if (r < 0.18) {
        migrate();
      } else if (r < 0.21) {
        close();
      } else if (r < 0.62) {
        client_packet(res);
      } else if (r < 0.80) {
        reverse_packet(res);
      } else {
        noise(res);
      }
    }
    return res;
  }

 private:
  struct Conn {
    qasm::ConnectionId o_dcid;
    qasm::ConnectionId dcid;
    std::vector<qasm::ConnectionId> old;
    qasm::Endpoint src;
    bool open = true;
  };

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::uint8_t byte() { return static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 255)(rng_)); }

  qasm::Bytes random_bytes(std::size_t n) {
    qasm::Bytes b(n);
    for (auto& x : b) x = byte();
    return b;
  }

  qasm::ConnectionId random_cid(std::size_t len) { return qasm::ConnectionId(random_bytes(len)); }

  void advance() {
    double r = uniform();
    std::int64_t q = r < 0.3 ? 0 : r < 0.98 ? std::int64_t(1 + pick(3)) : std::int64_t(100 + pick(60));
    now_ += q * kQuantumUs;
  }

  qasm::TimePoint real_now() const { return qasm::TimePoint{} + std::chrono::microseconds(now_); }

  // Both agents see the same update unless the control message is lost.
  void update(const Conn& c) {
    if (uniform() < 0.1) return;
    qasm::wire::ClientUpdate u{c.dcid, c.o_dcid, qasm::FiveTuple{qasm::Protocol::Udp, c.src, server_}};
    for (auto& o : agent_.on_client_datagram(qasm::wire::encode(u))) {
      auto msg = qasm::wire::decode(o.bytes);
      real_->on_push(std::get<qasm::wire::PushUpdate>(msg));
    }
    if (auto rec = ref_agent_.update(c.dcid, c.o_dcid, c.src, server_))
      if (mode_ == ref::Mode::Proactive && ref_agent_.is_subscribed(rec->o_dcid)) know_->learn(*rec);
  }

  void open(Result& res) {
    std::size_t live = 0;
    for (const auto& c : conns_) live += c.open;
    if (live >= 4) return;
    static constexpr std::size_t kLens[] = {8, 8, 4, 12};
    Conn c;
    c.o_dcid = random_cid(kLens[pick(4)]);
    c.dcid = c.o_dcid;
    c.src = pool_[pick(pool_.size())];
    conns_.push_back(c);
    update(c);
    qasm::Bytes q = qasm::quic::encode_long_header(1, c.o_dcid, random_cid(8), random_bytes(pick(16)));
    send(qasm::FiveTuple{qasm::Protocol::Udp, c.src, server_}, q, ref::Dir::Out, res);
  }

  void migrate() {
    if (conns_.empty()) return;
    Conn& c = conns_[pick(conns_.size())];
    if (!c.open) return;
    c.src = pool_[pick(pool_.size())];
    if (uniform() < 0.7) {
      c.old.push_back(c.dcid);
      c.dcid = random_cid(c.o_dcid.size());
    }
    update(c);
  }

  void close() {
    if (conns_.empty()) return;
    Conn& c = conns_[pick(conns_.size())];
    if (!c.open || uniform() < 0.1) return;
    c.open = false;
    agent_.on_client_datagram(qasm::wire::encode(qasm::wire::ConnClose{c.o_dcid}));
    ref_agent_.close(c.o_dcid);
  }

  void client_packet(Result& res) {
    if (conns_.empty()) return noise(res);
    const Conn& c = conns_[pick(conns_.size())];
    qasm::ConnectionId d = c.dcid;
    if (!c.old.empty() && uniform() < 0.1) d = c.old[pick(c.old.size())];
    qasm::Bytes q = qasm::quic::encode_short_header(d, random_bytes(pick(24)));
    q[0] |= byte() & 0x3f;
    send(qasm::FiveTuple{qasm::Protocol::Udp, c.src, server_}, q, ref::Dir::Out, res);
  }

  void reverse_packet(Result& res) {
    qasm::Endpoint dst;
    if (kind_ == Kind::Nat) {
      if (!publics_.empty() && uniform() < 0.85)
        dst = publics_[pick(publics_.size())];
      else
        dst = qasm::Endpoint{qasm::Ipv4Addr(65, 12, 81, 14), static_cast<std::uint16_t>(kNatPortLo + pick(kNatPorts + 1))};
    } else if (!conns_.empty() && uniform() < 0.8) {
      dst = conns_[pick(conns_.size())].src;
    } else {
      dst = pool_[pick(pool_.size())];
    }
    qasm::Endpoint src = kind_ == Kind::LoadBalancer ? backends_[pick(backends_.size())] : server_;
    qasm::Bytes q = random_bytes(1 + pick(24));
    q[0] = uniform() < 0.8 ? std::uint8_t(0x40 | (q[0] & 0x3f)) : std::uint8_t(q[0] & 0x3f);
    auto proto = uniform() < 0.9 ? qasm::Protocol::Udp : qasm::Protocol::Tcp;
    send(qasm::FiveTuple{proto, src, dst}, q, ref::Dir::In, res);
  }

  void noise(Result& res) {
    const qasm::Endpoint src = pool_[pick(pool_.size())];
    switch (pick(8)) {
      case 0:  // DNS-like UDP
        send({qasm::Protocol::Udp, src, qasm::Endpoint{server_.ip, 53}}, random_bytes(pick(30)), ref::Dir::Out, res);
        break;
      case 1:  // TCP to the QUIC port
        send({qasm::Protocol::Tcp, src, server_}, qasm::quic::encode_short_header(random_cid(8), {}), ref::Dir::Out, res);
        break;
      case 2:  // ICMP
        send({qasm::Protocol::Icmp, qasm::Endpoint{src.ip, 0}, qasm::Endpoint{server_.ip, 0}}, random_bytes(8),
             uniform() < 0.5 ? ref::Dir::Out : ref::Dir::In, res);
        break;
      case 3: {  // not an IPv4 datagram
        ref::Packet p;
        p.valid = false;
        ++res.packets;
        compare(random_bytes(pick(20)), p, uniform() < 0.5 ? ref::Dir::Out : ref::Dir::In, res);
        break;
      }
      case 4: {  // QUIC port but no form bits
        qasm::Bytes q = random_bytes(1 + pick(12));
        q[0] &= 0x3f;
        send({qasm::Protocol::Udp, src, server_}, q, ref::Dir::Out, res);
        break;
      }
      case 5: {  // short header too short for any DCID length in use
        qasm::Bytes q = random_bytes(1 + pick(4));
        q[0] = 0x40;
        send({qasm::Protocol::Udp, src, server_}, q, ref::Dir::Out, res);
        break;
      }
      case 6: {  // long header with an invalid or truncated DCID
        qasm::Bytes q{0xC0, 0, 0, 0, 1};
        if (uniform() < 0.5) q.push_back(std::uint8_t(21 + pick(200)));
        auto extra = random_bytes(pick(10));
        q.insert(q.end(), extra.begin(), extra.end());
        send({qasm::Protocol::Udp, src, server_}, q, ref::Dir::Out, res);
        break;
      }
      default: {  // short header for an unknown DCID from a known address
        qasm::Bytes q = qasm::quic::encode_short_header(random_cid(8), random_bytes(pick(8)));
        send({qasm::Protocol::Udp, conns_.empty() ? src : conns_[pick(conns_.size())].src, server_}, q, ref::Dir::Out,
             res);
        break;
      }
    }
  }

  void send(const qasm::FiveTuple& t, const qasm::Bytes& payload, ref::Dir dir, Result& res) {
    ref::Packet p{true, t.protocol, t.src, t.dst, payload};
    ++res.packets;
    compare(qasm::ip::build(t, payload), p, dir, res);
  }

  ref::Decision expect(const ref::Packet& p, ref::Dir dir) {
    switch (kind_) {
      case Kind::Nat: return nat_->process(p, dir, now_);
      case Kind::RateLimiter: return rl_->process(p, dir, now_);
      case Kind::Conntrack: return ct_->process(p, dir, now_);
      case Kind::LoadBalancer: return lb_->process(p, dir, now_);
    }
    return {};
  }

  void compare(const qasm::Bytes& datagram, const ref::Packet& p, ref::Dir dir, Result& res) {
    const ref::Decision want = expect(p, dir);
    auto got_r = real_->process(datagram, dir == ref::Dir::Out ? qasm::Direction::Outbound : qasm::Direction::Inbound,
                                real_now());
    ref::Decision got;
    if (auto* f = std::get_if<qasm::Forward>(&got_r.action)) {
      auto v = qasm::ip::parse(f->bytes);
      got = ref::Decision{true, "", v.tuple.src, v.tuple.dst, f->egress};
      if (qasm::Bytes(v.payload.begin(), v.payload.end()) != p.l4_payload) got.drop = "payload changed";
      ++res.forwarded;
      if (kind_ == Kind::Nat && dir == ref::Dir::Out) publics_.push_back(v.tuple.src);
    } else {
      got.drop = std::string(qasm::to_string(std::get<qasm::Drop>(got_r.action).reason));
      got.src = p.src;
      got.dst = p.dst;
    }
    if (got == want) return;
    if (res.mismatches++ == 0) {
      std::ostringstream os;
      os << "packet " << res.packets << " t=" << now_ << "us dir=" << (dir == ref::Dir::Out ? "out" : "in") << ": want "
         << describe(want) << ", got " << describe(got);
      res.first_mismatch = os.str();
    }
  }

  static std::string describe(const ref::Decision& d) {
    if (!d.forward) return "drop(" + d.drop + ")";
    return "forward(" + d.src.to_string() + "->" + d.dst.to_string() + " egress " + std::to_string(d.egress) +
           (d.drop.empty() ? "" : " " + d.drop) + ")";
  }

  Kind kind_;
  ref::Mode mode_;
  std::mt19937_64 rng_;
  std::int64_t now_ = kStartUs;

  qasm::Endpoint server_, vip_;
  std::vector<qasm::Endpoint> backends_, pool_, publics_;
  std::vector<Conn> conns_;

  qasm::TrackingAgent agent_;
  std::unique_ptr<qasm::DirectAgentLink> link_;
  std::unique_ptr<qasm::Middlebox> real_;

  ref::Agent ref_agent_;
  ref::Knowledge* know_ = nullptr;
  std::unique_ptr<ref::Nat> nat_;
  std::unique_ptr<ref::RateLimiter> rl_;
  std::unique_ptr<ref::Conntrack> ct_;
  std::unique_ptr<ref::LoadBalancer> lb_;
};

/// Trace number `i` of a sweep: kind and mode cycle so every combination is
/// covered.
inline Result run_trace(std::uint64_t seed, std::size_t i, std::size_t max_packets, Kind* kind_out = nullptr,
                        ref::Mode* mode_out = nullptr) {
  const Kind kind = static_cast<Kind>(i % 4);
  const ref::Mode mode = static_cast<ref::Mode>((i / 4) % 3);
  if (kind_out) *kind_out = kind;
  if (mode_out) *mode_out = mode;
  Runner r(kind, mode, seed * 1000003ULL + i);
  return r.run(max_packets);
}

}  // namespace trace
