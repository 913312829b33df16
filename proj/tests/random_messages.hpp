#pragma once

#include <random>

#include "qasm/quic_wire.hpp"
#include "qasm/wire_protocol.hpp"

namespace testgen {

using namespace qasm;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::uint8_t byte() { return static_cast<std::uint8_t>(rng_()); }
  bool coin() { return rng_() & 1; }

  Bytes bytes(std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = byte();
    return b;
  }
  ConnectionId cid(std::size_t min_len = 0) { return ConnectionId(bytes(min_len + below(21 - min_len))); }
  Endpoint endpoint() { return Endpoint{Ipv4Addr(static_cast<std::uint32_t>(rng_())), static_cast<std::uint16_t>(rng_())}; }
  Protocol protocol() {
    constexpr Protocol all[] = {Protocol::Udp, Protocol::Tcp, Protocol::Icmp};
    return all[below(3)];
  }

  wire::TrackingInfo info() {
    wire::TrackingInfo i;
    i.o_dcid = cid();
    // Mostly short lists, sometimes right at the 255-entry limit.
    std::size_t nd = below(8) == 0 ? 255 : below(6);
    std::size_t na = below(8) == 0 ? 255 : below(6);
    for (std::size_t k = 0; k < nd; ++k) i.dcids.push_back(cid());
    for (std::size_t k = 0; k < na; ++k) i.client_addrs.push_back(endpoint());
    i.server = endpoint();
    i.dcid_len = static_cast<std::uint8_t>(below(21));
    return i;
  }

  wire::Message message() {
    switch (below(6)) {
      case 0: return wire::ClientUpdate{cid(), cid(), {protocol(), endpoint(), endpoint()}};
      case 1: return wire::ConnClose{cid()};
      case 2: return wire::Query{cid(), endpoint(), endpoint()};
      case 3: return coin() ? wire::QueryResponse{info()} : wire::QueryResponse{std::nullopt};
      case 4: return wire::Subscribe{cid(), endpoint()};
      default: return wire::PushUpdate{static_cast<std::uint32_t>(rng_()), info()};
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Encoded size from the documented layout, computed independently of the codec.
inline std::size_t body_size(const wire::TrackingInfo& i) {
  std::size_t n = 1 + i.o_dcid.size() + 1 + 1 + 6 * i.client_addrs.size() + 6 + 1;
  for (const auto& d : i.dcids) n += 1 + d.size();
  return n;
}

inline std::size_t layout_size(const wire::Message& m) {
  return 1 + std::visit(
                 [](const auto& v) -> std::size_t {
                   using T = std::decay_t<decltype(v)>;
                   if constexpr (std::is_same_v<T, wire::ClientUpdate>)
                     return 1 + v.dcid.size() + 1 + v.o_dcid.size() + 1 + 12;
                   else if constexpr (std::is_same_v<T, wire::ConnClose>)
                     return 1 + v.o_dcid.size();
                   else if constexpr (std::is_same_v<T, wire::Query>)
                     return 1 + v.dcid.size() + 12;
                   else if constexpr (std::is_same_v<T, wire::QueryResponse>)
                     return 1 + (v.info ? body_size(*v.info) : 0);
                   else if constexpr (std::is_same_v<T, wire::Subscribe>)
                     return 1 + v.dcid.size() + 6;
                   else
                     return 4 + body_size(v.info);
                 },
                 m);
}

/// Random short or long header with a 1..20 byte DCID.
inline quic::QuicHeader random_header(Gen& g) {
  quic::QuicHeader h;
  h.form = g.coin() ? quic::HeaderForm::Long : quic::HeaderForm::Short;
  h.dcid = g.cid(1);
  if (h.form == quic::HeaderForm::Long) {
    h.version = static_cast<std::uint32_t>(g.rng()());
    h.scid = g.cid();
  }
  h.payload = g.bytes(g.below(40));
  return h;
}

}  // namespace testgen
