#pragma once

#include <cstdint>
#include <span>

#include "qasm/bytes.hpp"
#include "qasm/net.hpp"

// IPv4 datagrams carrying UDP or TCP. Only the fields a NAT, rate limiter or
// load balancer reads are meaningful; TTL, identification and L4 checksums
// are left at fixed values.

namespace qasm::ip {

inline constexpr std::size_t kIpv4HeaderLen = 20;
inline constexpr std::size_t kUdpHeaderLen = 8;
inline constexpr std::size_t kTcpHeaderLen = 20;

inline std::size_t l4_header_len(Protocol p) {
  switch (p) {
    case Protocol::Udp: return kUdpHeaderLen;
    case Protocol::Tcp: return kTcpHeaderLen;
    default: return 0;
  }
}

inline std::uint16_t ipv4_checksum(ByteView header) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < header.size(); i += 2) sum += load_be16(header.data() + i);
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

struct PacketView {
  FiveTuple tuple;
  ByteView payload;
};

inline Bytes build(const FiveTuple& tuple, ByteView payload) {
  const std::size_t l4 = l4_header_len(tuple.protocol);
  const std::size_t total = kIpv4HeaderLen + l4 + payload.size();
  if (total > 0xffff) throw std::length_error("datagram exceeds 65535 bytes");
  Bytes out(total, 0);
  std::uint8_t* h = out.data();
  h[0] = 0x45;
  store_be16(h + 2, static_cast<std::uint16_t>(total));
  h[8] = 64;
  h[9] = static_cast<std::uint8_t>(tuple.protocol);
  store_be32(h + 12, tuple.src.ip.value);
  store_be32(h + 16, tuple.dst.ip.value);
  store_be16(h + 10, ipv4_checksum(ByteView(h, kIpv4HeaderLen)));

  std::uint8_t* l = h + kIpv4HeaderLen;
  if (tuple.protocol == Protocol::Udp) {
    store_be16(l, tuple.src.port);
    store_be16(l + 2, tuple.dst.port);
    store_be16(l + 4, static_cast<std::uint16_t>(kUdpHeaderLen + payload.size()));
  } else if (tuple.protocol == Protocol::Tcp) {
    store_be16(l, tuple.src.port);
    store_be16(l + 2, tuple.dst.port);
    l[12] = 0x50;  // data offset 5 words
    l[13] = 0x18;  // PSH|ACK
    store_be16(l + 14, 0xffff);
  }
  std::copy(payload.begin(), payload.end(), h + kIpv4HeaderLen + l4);
  return out;
}

inline PacketView parse(ByteView d) {
  if (d.size() < kIpv4HeaderLen) throw DecodeError(DecodeErrc::TruncatedPacket);
  if (d[0] != 0x45) throw DecodeError(DecodeErrc::InvalidField);
  const std::size_t total = load_be16(d.data() + 2);
  if (total < kIpv4HeaderLen || total > d.size()) throw DecodeError(DecodeErrc::TruncatedPacket);
  if (ipv4_checksum(d.first(kIpv4HeaderLen)) != 0) throw DecodeError(DecodeErrc::InvalidField);

  PacketView v;
  v.tuple.protocol = static_cast<Protocol>(d[9]);
  v.tuple.src.ip = Ipv4Addr(load_be32(d.data() + 12));
  v.tuple.dst.ip = Ipv4Addr(load_be32(d.data() + 16));
  const std::size_t l4 = l4_header_len(v.tuple.protocol);
  if (total < kIpv4HeaderLen + l4) throw DecodeError(DecodeErrc::TruncatedPacket);
  if (l4 != 0) {
    v.tuple.src.port = load_be16(d.data() + kIpv4HeaderLen);
    v.tuple.dst.port = load_be16(d.data() + kIpv4HeaderLen + 2);
  }
  v.payload = d.subspan(kIpv4HeaderLen + l4, total - kIpv4HeaderLen - l4);
  return v;
}

namespace detail {
inline void refresh_checksum(std::span<std::uint8_t> d) {
  store_be16(d.data() + 10, 0);
  store_be16(d.data() + 10, ipv4_checksum(ByteView(d.data(), kIpv4HeaderLen)));
}
}  // namespace detail

/// In-place source rewrite of a datagram previously accepted by parse().
inline void rewrite_src(std::span<std::uint8_t> d, const Endpoint& ep) {
  store_be32(d.data() + 12, ep.ip.value);
  if (l4_header_len(static_cast<Protocol>(d[9])) != 0) store_be16(d.data() + kIpv4HeaderLen, ep.port);
  detail::refresh_checksum(d);
}

inline void rewrite_dst(std::span<std::uint8_t> d, const Endpoint& ep) {
  store_be32(d.data() + 16, ep.ip.value);
  if (l4_header_len(static_cast<Protocol>(d[9])) != 0) store_be16(d.data() + kIpv4HeaderLen + 2, ep.port);
  detail::refresh_checksum(d);
}

}  // namespace qasm::ip
