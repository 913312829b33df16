#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "qasm/bytes.hpp"
#include "qasm/connection_id.hpp"
#include "qasm/net.hpp"
#include "qasm/tracking_table.hpp"

// Datagram protocol between Client Agents, the Tracking Agent and
// middleboxes. One message per datagram, integers big-endian.
//
//   ClientUpdate  0x01 [dcid_len][dcid][odcid_len][odcid][proto][src ip:4][src port:2][dst ip:4][dst port:2]
//   ConnClose     0x02 [odcid_len][odcid]
//   Query         0x03 [dcid_len][dcid][src ip:4][src port:2][dst ip:4][dst port:2]
//   QueryResponse 0x04 [found] then, if found=1, a record body
//   Subscribe     0x05 [dcid_len][dcid][mbox ip:4][mbox port:2]
//   PushUpdate    0x06 [seq:4] record body
//
// record body: [odcid_len][odcid][n_dcids]{[len][dcid]}*n [n_addrs]{[ip:4][port:2]}*n
//              [server ip:4][server port:2][active_dcid_len]

namespace qasm::wire {

enum class Kind : std::uint8_t {
  ClientUpdate = 0x01,
  ConnClose = 0x02,
  Query = 0x03,
  QueryResponse = 0x04,
  Subscribe = 0x05,
  PushUpdate = 0x06,
};

/// Tracking record as carried on the wire. Counts are single bytes, so at
/// most 255 DCIDs and 255 addresses travel; see to_tracking_info().
struct TrackingInfo {
  ConnectionId o_dcid;
  std::vector<ConnectionId> dcids;
  std::vector<Endpoint> client_addrs;
  Endpoint server;
  std::uint8_t dcid_len = 0;

  friend bool operator==(const TrackingInfo&, const TrackingInfo&) = default;
};

inline constexpr std::size_t kMaxListEntries = 255;

/// Wire view of a record. Oversized histories keep the O-DCID plus the most
/// recent DCIDs, and the most recent client addresses.
inline TrackingInfo to_tracking_info(const TrackingRecord& r) {
  TrackingInfo info;
  info.o_dcid = r.o_dcid;
  info.server = r.server;
  info.dcid_len = r.dcid_len;
  if (r.dcids.size() <= kMaxListEntries) {
    info.dcids = r.dcids;
  } else {
    info.dcids.push_back(r.o_dcid);
    auto first = r.dcids.end() - static_cast<std::ptrdiff_t>(kMaxListEntries - 1);
    for (auto it = first; it != r.dcids.end(); ++it)
      if (*it != r.o_dcid) info.dcids.push_back(*it);
  }
  if (r.client_addrs.size() <= kMaxListEntries) {
    info.client_addrs = r.client_addrs;
  } else {
    info.client_addrs.assign(r.client_addrs.end() - static_cast<std::ptrdiff_t>(kMaxListEntries), r.client_addrs.end());
  }
  return info;
}

struct ClientUpdate {
  ConnectionId dcid;
  ConnectionId o_dcid;
  FiveTuple tuple;
  friend bool operator==(const ClientUpdate&, const ClientUpdate&) = default;
};

struct ConnClose {
  ConnectionId o_dcid;
  friend bool operator==(const ConnClose&, const ConnClose&) = default;
};

struct Query {
  ConnectionId dcid;
  Endpoint src;
  Endpoint dst;
  friend bool operator==(const Query&, const Query&) = default;
};

struct QueryResponse {
  std::optional<TrackingInfo> info;
  friend bool operator==(const QueryResponse&, const QueryResponse&) = default;
};

struct Subscribe {
  ConnectionId dcid;
  Endpoint mbox;
  friend bool operator==(const Subscribe&, const Subscribe&) = default;
};

struct PushUpdate {
  std::uint32_t seq = 0;
  TrackingInfo info;
  friend bool operator==(const PushUpdate&, const PushUpdate&) = default;
};

using Message = std::variant<ClientUpdate, ConnClose, Query, QueryResponse, Subscribe, PushUpdate>;

inline Kind kind_of(const Message& m) {
  return std::visit(
      [](const auto& v) -> Kind {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ClientUpdate>) return Kind::ClientUpdate;
        else if constexpr (std::is_same_v<T, ConnClose>) return Kind::ConnClose;
        else if constexpr (std::is_same_v<T, Query>) return Kind::Query;
        else if constexpr (std::is_same_v<T, QueryResponse>) return Kind::QueryResponse;
        else if constexpr (std::is_same_v<T, Subscribe>) return Kind::Subscribe;
        else return Kind::PushUpdate;
      },
      m);
}

namespace detail {

inline void put_cid(ByteWriter& w, const ConnectionId& c) {
  w.u8(static_cast<std::uint8_t>(c.size()));
  w.bytes(c.bytes());
}
inline void put_endpoint(ByteWriter& w, const Endpoint& e) {
  w.u32(e.ip.value);
  w.u16(e.port);
}
inline ConnectionId get_cid(ByteReader& r) {
  std::uint8_t len = r.u8();
  if (len > ConnectionId::kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
  return ConnectionId(r.bytes(len));
}
inline Endpoint get_endpoint(ByteReader& r) {
  Endpoint e;
  e.ip = Ipv4Addr(r.u32());
  e.port = r.u16();
  return e;
}

inline void put_info(ByteWriter& w, const TrackingInfo& info) {
  if (info.dcids.size() > kMaxListEntries || info.client_addrs.size() > kMaxListEntries)
    throw std::length_error("tracking info lists exceed 255 entries");
  put_cid(w, info.o_dcid);
  w.u8(static_cast<std::uint8_t>(info.dcids.size()));
  for (const auto& d : info.dcids) put_cid(w, d);
  w.u8(static_cast<std::uint8_t>(info.client_addrs.size()));
  for (const auto& a : info.client_addrs) put_endpoint(w, a);
  put_endpoint(w, info.server);
  w.u8(info.dcid_len);
}

inline TrackingInfo get_info(ByteReader& r) {
  TrackingInfo info;
  info.o_dcid = get_cid(r);
  std::uint8_t n = r.u8();
  info.dcids.reserve(n);
  for (int i = 0; i < n; ++i) info.dcids.push_back(get_cid(r));
  n = r.u8();
  info.client_addrs.reserve(n);
  for (int i = 0; i < n; ++i) info.client_addrs.push_back(get_endpoint(r));
  info.server = get_endpoint(r);
  info.dcid_len = r.u8();
  if (info.dcid_len > ConnectionId::kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
  return info;
}

}  // namespace detail

inline Bytes encode(const Message& m) {
  ByteWriter w(64);
  w.u8(static_cast<std::uint8_t>(kind_of(m)));
  std::visit(
      [&w](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ClientUpdate>) {
          detail::put_cid(w, v.dcid);
          detail::put_cid(w, v.o_dcid);
          w.u8(static_cast<std::uint8_t>(v.tuple.protocol));
          detail::put_endpoint(w, v.tuple.src);
          detail::put_endpoint(w, v.tuple.dst);
        } else if constexpr (std::is_same_v<T, ConnClose>) {
          detail::put_cid(w, v.o_dcid);
        } else if constexpr (std::is_same_v<T, Query>) {
          detail::put_cid(w, v.dcid);
          detail::put_endpoint(w, v.src);
          detail::put_endpoint(w, v.dst);
        } else if constexpr (std::is_same_v<T, QueryResponse>) {
          w.u8(v.info ? 1 : 0);
          if (v.info) detail::put_info(w, *v.info);
        } else if constexpr (std::is_same_v<T, Subscribe>) {
          detail::put_cid(w, v.dcid);
          detail::put_endpoint(w, v.mbox);
        } else {
          w.u32(v.seq);
          detail::put_info(w, v.info);
        }
      },
      m);
  return std::move(w).take();
}

/// Throws DecodeError on unknown kinds, truncation, oversized CIDs or
/// trailing bytes.
inline Message decode(ByteView datagram) {
  ByteReader r(datagram);
  const std::uint8_t kind = r.u8();
  Message out;
  switch (static_cast<Kind>(kind)) {
    case Kind::ClientUpdate: {
      ClientUpdate m;
      m.dcid = detail::get_cid(r);
      m.o_dcid = detail::get_cid(r);
      m.tuple.protocol = static_cast<Protocol>(r.u8());
      m.tuple.src = detail::get_endpoint(r);
      m.tuple.dst = detail::get_endpoint(r);
      out = m;
      break;
    }
    case Kind::ConnClose:
      out = ConnClose{detail::get_cid(r)};
      break;
    case Kind::Query: {
      Query m;
      m.dcid = detail::get_cid(r);
      m.src = detail::get_endpoint(r);
      m.dst = detail::get_endpoint(r);
      out = m;
      break;
    }
    case Kind::QueryResponse: {
      const std::uint8_t found = r.u8();
      if (found > 1) throw DecodeError(DecodeErrc::InvalidField);
      QueryResponse m;
      if (found) m.info = detail::get_info(r);
      out = std::move(m);
      break;
    }
    case Kind::Subscribe: {
      Subscribe m;
      m.dcid = detail::get_cid(r);
      m.mbox = detail::get_endpoint(r);
      out = m;
      break;
    }
    case Kind::PushUpdate: {
      PushUpdate m;
      m.seq = r.u32();
      m.info = detail::get_info(r);
      out = std::move(m);
      break;
    }
    default:
      throw DecodeError(DecodeErrc::UnknownKind);
  }
  r.expect_end();
  return out;
}

}  // namespace qasm::wire
