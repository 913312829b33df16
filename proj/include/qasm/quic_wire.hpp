#pragma once

#include <cstdint>
#include <optional>

#include "qasm/bytes.hpp"
#include "qasm/connection_id.hpp"

// Minimal QUIC header framing: enough to place and recover connection IDs.
// Token, length and packet-number fields are folded into the opaque payload.

namespace qasm::quic {

enum class HeaderForm : std::uint8_t { Long, Short };

inline constexpr std::uint8_t kLongFormBit = 0x80;
inline constexpr std::uint8_t kFixedBit = 0x40;
inline constexpr std::uint32_t kVersion1 = 0x00000001;

struct QuicHeader {
  HeaderForm form = HeaderForm::Short;
  std::uint32_t version = 0;  // long form only
  ConnectionId dcid;
  ConnectionId scid;  // long form only
  Bytes payload;

  friend bool operator==(const QuicHeader&, const QuicHeader&) = default;
};

inline Bytes encode_long_header(std::uint32_t version, const ConnectionId& dcid, const ConnectionId& scid,
                                ByteView payload) {
  ByteWriter w(7 + dcid.size() + scid.size() + payload.size());
  w.u8(kLongFormBit | kFixedBit);
  w.u32(version);
  w.u8(static_cast<std::uint8_t>(dcid.size()));
  w.bytes(dcid.bytes());
  w.u8(static_cast<std::uint8_t>(scid.size()));
  w.bytes(scid.bytes());
  w.bytes(payload);
  return std::move(w).take();
}

inline Bytes encode_short_header(const ConnectionId& dcid, ByteView payload) {
  ByteWriter w(1 + dcid.size() + payload.size());
  w.u8(kFixedBit);
  w.bytes(dcid.bytes());
  w.bytes(payload);
  return std::move(w).take();
}

inline Bytes encode(const QuicHeader& h) {
  return h.form == HeaderForm::Long ? encode_long_header(h.version, h.dcid, h.scid, h.payload)
                                    : encode_short_header(h.dcid, h.payload);
}

/// Form of the packet from its first byte, or nullopt when the packet is
/// empty or is neither a long header nor a short header with the fixed bit.
inline std::optional<HeaderForm> peek_form(ByteView packet) {
  if (packet.empty()) return std::nullopt;
  if (packet[0] & kLongFormBit) return HeaderForm::Long;
  if (packet[0] & kFixedBit) return HeaderForm::Short;
  return std::nullopt;
}

namespace detail {
inline ConnectionId read_cid(ByteReader& r) {
  std::uint8_t len = r.u8();
  if (len > ConnectionId::kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
  return ConnectionId(r.bytes(len));
}
}  // namespace detail

inline QuicHeader decode_long_header(ByteView packet) {
  ByteReader r(packet);
  std::uint8_t first = r.u8();
  if (!(first & kLongFormBit)) throw DecodeError(DecodeErrc::NotLongHeader);
  QuicHeader h;
  h.form = HeaderForm::Long;
  h.version = r.u32();
  h.dcid = detail::read_cid(r);
  h.scid = detail::read_cid(r);
  ByteView rest = r.rest();
  h.payload.assign(rest.begin(), rest.end());
  return h;
}

/// The DCID length is not on the wire for short headers; it must come from
/// tracking context.
inline QuicHeader decode_short_header(ByteView packet, std::uint8_t dcid_len) {
  if (dcid_len > ConnectionId::kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
  ByteReader r(packet);
  std::uint8_t first = r.u8();
  if ((first & kLongFormBit) || !(first & kFixedBit)) throw DecodeError(DecodeErrc::NotShortHeader);
  QuicHeader h;
  h.form = HeaderForm::Short;
  h.dcid = ConnectionId(r.bytes(dcid_len));
  ByteView rest = r.rest();
  h.payload.assign(rest.begin(), rest.end());
  return h;
}

/// DCID only, without copying the payload. Used on the middlebox fast path.
inline ConnectionId extract_dcid(ByteView packet, std::uint8_t short_dcid_len) {
  auto form = peek_form(packet);
  if (!form) throw DecodeError(packet.empty() ? DecodeErrc::TruncatedPacket : DecodeErrc::NotShortHeader);
  ByteReader r(packet);
  r.u8();
  if (*form == HeaderForm::Long) {
    r.u32();
    return detail::read_cid(r);
  }
  if (short_dcid_len > ConnectionId::kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
  return ConnectionId(r.bytes(short_dcid_len));
}

}  // namespace qasm::quic
