#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "qasm/middlebox.hpp"
#include "qasm/resolver.hpp"

namespace qasm {

enum class MiddleboxMode : std::uint8_t { Default, Reactive, Proactive };

inline std::string_view to_string(MiddleboxMode m) {
  switch (m) {
    case MiddleboxMode::Default: return "default";
    case MiddleboxMode::Reactive: return "reactive";
    case MiddleboxMode::Proactive: return "proactive";
  }
  return "unknown";
}

inline MiddleboxMode parse_mode(std::string_view text) {
  if (text == "default") return MiddleboxMode::Default;
  if (text == "reactive") return MiddleboxMode::Reactive;
  if (text == "proactive") return MiddleboxMode::Proactive;
  throw std::invalid_argument("unknown mode: " + std::string(text));
}

/// Settings shared by all middlebox kinds for their QUIC handling.
struct QuicOptions {
  MiddleboxMode mode = MiddleboxMode::Default;
  AgentLink* agent = nullptr;
  std::uint8_t default_dcid_len = 8;
  Duration negative_ttl = std::chrono::milliseconds(50);
  QuicClassifier classifier;
};

/// Base for middleboxes that have a default and a QUIC-aware behaviour.
/// In Default mode no resolver exists and every packet takes the default path.
class QuicAwareMiddlebox : public Middlebox {
 public:
  explicit QuicAwareMiddlebox(const QuicOptions& opts) : mode_(opts.mode), classifier_(opts.classifier) {
    if (mode_ != MiddleboxMode::Default) {
      ResolverConfig rc;
      rc.mode = mode_ == MiddleboxMode::Reactive ? TrackingMode::Reactive : TrackingMode::Proactive;
      rc.default_dcid_len = opts.default_dcid_len;
      rc.negative_ttl = opts.negative_ttl;
      resolver_.emplace(rc, opts.agent);
    }
  }

  MiddleboxMode mode() const noexcept { return mode_; }
  bool quic_aware() const noexcept { return resolver_.has_value(); }
  QuicResolver* resolver() noexcept { return resolver_ ? &*resolver_ : nullptr; }
  const QuicResolver* resolver() const noexcept { return resolver_ ? &*resolver_ : nullptr; }

  void on_push(const wire::PushUpdate& push) override {
    if (resolver_) resolver_->on_push(push);
  }

 protected:
  bool is_quic(const ip::PacketView& p, Direction dir) const {
    return resolver_ && classifier_.is_quic(p, dir);
  }

  /// Client-to-server resolution. Empty when the packet must take the
  /// default path: not QUIC, Default mode, or a header too short to parse.
  std::optional<Resolution> resolve_outbound(const ip::PacketView& p, TimePoint now) {
    if (!is_quic(p, Direction::Outbound)) return std::nullopt;
    try {
      return resolver_->resolve_forward(p.payload, p.tuple, now);
    } catch (const DecodeError&) {
      return std::nullopt;
    }
  }

  /// Server-to-client resolution by the client (destination) address.
  std::optional<ConnectionId> resolve_inbound(const ip::PacketView& p, TimePoint now, bool* queried) {
    if (!is_quic(p, Direction::Inbound)) return std::nullopt;
    return resolver_->resolve_reverse(p.tuple, now, queried);
  }

 private:
  MiddleboxMode mode_;
  QuicClassifier classifier_;
  std::optional<QuicResolver> resolver_;
};

}  // namespace qasm
