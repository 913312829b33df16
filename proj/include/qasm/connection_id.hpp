#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>

#include "qasm/bytes.hpp"

namespace qasm {

/// Opaque QUIC connection identifier, 0 to 20 bytes.
class ConnectionId {
 public:
  static constexpr std::size_t kMaxLength = 20;

  ConnectionId() = default;

  explicit ConnectionId(ByteView bytes) {
    if (bytes.size() > kMaxLength) throw DecodeError(DecodeErrc::InvalidCidLength);
    len_ = static_cast<std::uint8_t>(bytes.size());
    std::copy(bytes.begin(), bytes.end(), data_.begin());
  }

  static ConnectionId from_hex(std::string_view hex) {
    Bytes raw = qasm::from_hex(hex);
    return ConnectionId(raw);
  }

  std::size_t size() const noexcept { return len_; }
  bool empty() const noexcept { return len_ == 0; }
  ByteView bytes() const noexcept { return {data_.data(), len_}; }
  std::string hex() const { return to_hex(bytes()); }

  friend bool operator==(const ConnectionId& a, const ConnectionId& b) noexcept {
    return a.len_ == b.len_ && a.data_ == b.data_;
  }
  friend std::strong_ordering operator<=>(const ConnectionId& a, const ConnectionId& b) noexcept {
    if (auto c = a.len_ <=> b.len_; c != 0) return c;
    for (std::size_t i = 0; i < a.len_; ++i)
      if (auto c = a.data_[i] <=> b.data_[i]; c != 0) return c;
    return std::strong_ordering::equal;
  }

  /// Table hash. Bytes past the length are always zero, so whole words can
  /// be mixed without looking at the length first.
  std::size_t hash() const noexcept {
    std::uint64_t w[3] = {};
    std::memcpy(w, data_.data(), kMaxLength);
    std::uint64_t h = (w[0] ^ (std::uint64_t{len_} << 56)) * 0x9e3779b97f4a7c15ULL;
    h = (h ^ (h >> 29) ^ w[1]) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 31) ^ w[2]) * 0x94d049bb133111ebULL;
    return static_cast<std::size_t>(h ^ (h >> 32));
  }

  friend std::ostream& operator<<(std::ostream& os, const ConnectionId& cid) {
    return os << (cid.empty() ? std::string("<empty>") : cid.hex());
  }

 private:
  std::array<std::uint8_t, kMaxLength> data_{};
  std::uint8_t len_ = 0;
};

}  // namespace qasm

template <>
struct std::hash<qasm::ConnectionId> {
  std::size_t operator()(const qasm::ConnectionId& cid) const noexcept {
    return cid.hash();
  }
};
