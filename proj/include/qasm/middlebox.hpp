#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "qasm/bytes.hpp"
#include "qasm/datagram.hpp"
#include "qasm/net.hpp"
#include "qasm/quic_wire.hpp"
#include "qasm/time.hpp"
#include "qasm/wire_protocol.hpp"

namespace qasm {

/// Outbound is private -> public (client towards server).
enum class Direction : std::uint8_t { Outbound, Inbound };

enum class DropReason : std::uint8_t {
  Malformed,
  UnsupportedProtocol,
  PoolExhausted,
  NoBinding,
  RateLimited,
  TableFull,
  NoBackend,
};
inline constexpr std::size_t kDropReasonCount = 7;

inline std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::Malformed: return "malformed";
    case DropReason::UnsupportedProtocol: return "unsupported_protocol";
    case DropReason::PoolExhausted: return "pool_exhausted";
    case DropReason::NoBinding: return "no_binding";
    case DropReason::RateLimited: return "rate_limited";
    case DropReason::TableFull: return "table_full";
    case DropReason::NoBackend: return "no_backend";
  }
  return "unknown";
}

struct Forward {
  Bytes bytes;
  std::size_t egress = 0;
  friend bool operator==(const Forward&, const Forward&) = default;
};

struct Drop {
  DropReason reason;
  friend bool operator==(const Drop&, const Drop&) = default;
};

using Action = std::variant<Forward, Drop>;

inline bool forwarded(const Action& a) { return std::holds_alternative<Forward>(a); }

/// Per-packet processing breakdown: finding state, creating a new entry,
/// updating an existing one. Agent round trips are charged to the phase
/// they served.
struct PhaseTimes {
  Duration lookup{};
  Duration create{};
  Duration update{};
  bool created = false;
  bool updated = false;
  bool queried = false;
  bool quic = false;
};

struct ProcessResult {
  Action action;
  PhaseTimes phases;
};

struct MiddleboxStats {
  std::uint64_t offered = 0;
  std::uint64_t forwarded = 0;
  std::array<std::uint64_t, kDropReasonCount> drops{};

  std::uint64_t dropped() const {
    std::uint64_t n = 0;
    for (auto d : drops) n += d;
    return n;
  }
  std::uint64_t drops_for(DropReason r) const { return drops[static_cast<std::size_t>(r)]; }
};

/// Uniform packet-processing interface. Each instance processes its stream
/// strictly in arrival order; only on_push may be called from another thread.
class Middlebox {
 public:
  virtual ~Middlebox() = default;

  ProcessResult process(ByteView datagram, Direction dir, TimePoint now) {
    ProcessResult r = do_process(datagram, dir, now);
    ++stats_.offered;
    if (auto* d = std::get_if<Drop>(&r.action))
      ++stats_.drops[static_cast<std::size_t>(d->reason)];
    else
      ++stats_.forwarded;
    return r;
  }

  virtual std::string name() const = 0;
  virtual std::size_t table_size() const = 0;
  virtual void on_push(const wire::PushUpdate&) {}

  const MiddleboxStats& stats() const noexcept { return stats_; }

 protected:
  virtual ProcessResult do_process(ByteView datagram, Direction dir, TimePoint now) = 0;

 private:
  MiddleboxStats stats_;
};

/// Lap timer for phase accounting.
class PhaseClock {
 public:
  PhaseClock() : mark_(steady_now()) {}
  Duration lap() {
    TimePoint now = steady_now();
    Duration d = now - mark_;
    mark_ = now;
    return d;
  }

 private:
  TimePoint mark_;
};

/// UDP ports that identify QUIC traffic (server side of the flow).
struct QuicClassifier {
  std::vector<std::uint16_t> ports{443};

  bool is_quic(const ip::PacketView& p, Direction dir) const {
    if (p.tuple.protocol != Protocol::Udp || !quic::peek_form(p.payload)) return false;
    std::uint16_t server_port = dir == Direction::Outbound ? p.tuple.dst.port : p.tuple.src.port;
    return std::find(ports.begin(), ports.end(), server_port) != ports.end();
  }
};

}  // namespace qasm
