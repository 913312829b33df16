#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "qasm/bytes.hpp"
#include "qasm/connection_id.hpp"

namespace qasm {

struct Ipv4Addr {
  std::uint32_t value = 0;

  constexpr Ipv4Addr() = default;
  constexpr explicit Ipv4Addr(std::uint32_t v) : value(v) {}
  constexpr Ipv4Addr(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
      : value((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d) {}

  static Ipv4Addr parse(std::string_view text) {
    std::uint32_t v = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int i = 0; i < 4; ++i) {
      unsigned octet = 0;
      auto [next, ec] = std::from_chars(p, end, octet);
      if (ec != std::errc{} || octet > 255) throw std::invalid_argument("bad IPv4 address: " + std::string(text));
      v = (v << 8) | octet;
      p = next;
      if (i < 3) {
        if (p == end || *p != '.') throw std::invalid_argument("bad IPv4 address: " + std::string(text));
        ++p;
      }
    }
    if (p != end) throw std::invalid_argument("bad IPv4 address: " + std::string(text));
    return Ipv4Addr(v);
  }

  std::string to_string() const {
    return std::to_string(value >> 24) + '.' + std::to_string((value >> 16) & 0xff) + '.' +
           std::to_string((value >> 8) & 0xff) + '.' + std::to_string(value & 0xff);
  }

  friend constexpr auto operator<=>(const Ipv4Addr&, const Ipv4Addr&) = default;
};

struct Endpoint {
  Ipv4Addr ip;
  std::uint16_t port = 0;

  /// Parses "a.b.c.d:port".
  static Endpoint parse(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("missing port: " + std::string(text));
    unsigned port = 0;
    auto tail = text.substr(colon + 1);
    auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), port);
    if (ec != std::errc{} || p != tail.data() + tail.size() || port > 65535)
      throw std::invalid_argument("bad port: " + std::string(text));
    return Endpoint{Ipv4Addr::parse(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
  }

  std::string to_string() const { return ip.to_string() + ':' + std::to_string(port); }

  friend constexpr auto operator<=>(const Endpoint&, const Endpoint&) = default;
  friend std::ostream& operator<<(std::ostream& os, const Endpoint& e) { return os << e.to_string(); }
};

/// IP protocol number. Values other than Tcp/Udp are carried but unsupported
/// by the middleboxes.
enum class Protocol : std::uint8_t { Icmp = 1, Tcp = 6, Udp = 17 };

inline bool is_supported(Protocol p) { return p == Protocol::Tcp || p == Protocol::Udp; }

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::Icmp: return "ICMP";
    case Protocol::Tcp: return "TCP";
    case Protocol::Udp: return "UDP";
  }
  return "OTHER";
}

struct FiveTuple {
  Protocol protocol = Protocol::Udp;
  Endpoint src;
  Endpoint dst;

  FiveTuple reversed() const { return FiveTuple{protocol, dst, src}; }

  std::string to_string() const {
    return std::string(qasm::to_string(protocol)) + ' ' + src.to_string() + "->" + dst.to_string();
  }

  friend constexpr auto operator<=>(const FiveTuple&, const FiveTuple&) = default;
  friend std::ostream& operator<<(std::ostream& os, const FiveTuple& t) { return os << t.to_string(); }
};

/// DCID-extended flow key. QUIC runs over UDP only.
struct SixTuple {
  ConnectionId dcid;
  FiveTuple five_tuple;

  SixTuple(ConnectionId d, FiveTuple t) : dcid(d), five_tuple(t) {
    if (t.protocol != Protocol::Udp) throw std::invalid_argument("six-tuple requires UDP");
  }

  friend bool operator==(const SixTuple&, const SixTuple&) = default;
};

inline std::uint64_t hash_endpoint(const Endpoint& e) {
  std::uint8_t raw[6];
  store_be32(raw, e.ip.value);
  store_be16(raw + 4, e.port);
  return fnv1a64(ByteView(raw, 6));
}

inline std::uint64_t hash_five_tuple(const FiveTuple& t) {
  std::uint8_t raw[13];
  raw[0] = static_cast<std::uint8_t>(t.protocol);
  store_be32(raw + 1, t.src.ip.value);
  store_be16(raw + 5, t.src.port);
  store_be32(raw + 7, t.dst.ip.value);
  store_be16(raw + 11, t.dst.port);
  return fnv1a64(ByteView(raw, 13));
}

}  // namespace qasm

template <>
struct std::hash<qasm::Endpoint> {
  std::size_t operator()(const qasm::Endpoint& e) const noexcept {
    return static_cast<std::size_t>(qasm::hash_endpoint(e));
  }
};

template <>
struct std::hash<qasm::FiveTuple> {
  std::size_t operator()(const qasm::FiveTuple& t) const noexcept {
    return static_cast<std::size_t>(qasm::hash_five_tuple(t));
  }
};

template <>
struct std::hash<qasm::SixTuple> {
  std::size_t operator()(const qasm::SixTuple& t) const noexcept {
    return std::hash<qasm::ConnectionId>{}(t.dcid) ^ (std::hash<qasm::FiveTuple>{}(t.five_tuple) << 1);
  }
};
