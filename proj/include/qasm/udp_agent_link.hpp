#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <thread>

#include "qasm/resolver.hpp"
#include "qasm/udp_socket.hpp"

namespace qasm {

/// Agent link over UDP. Queries block on a dedicated socket until the answer
/// arrives or the timeout expires (then the packet is treated as a new flow).
/// Subscriptions name a second socket on which a background thread receives
/// pushes and hands them to the push handler.
class UdpAgentLink final : public AgentLink {
 public:
  using PushHandler = std::function<void(const wire::PushUpdate&)>;

  explicit UdpAgentLink(Endpoint agent, std::chrono::milliseconds timeout = std::chrono::milliseconds(50),
                        Ipv4Addr local = Ipv4Addr(127, 0, 0, 1))
      : agent_(agent),
        timeout_(timeout),
        query_sock_(UdpSocket::bind(Endpoint{local, 0})),
        push_sock_(UdpSocket::bind(Endpoint{local, 0})),
        push_ep_(push_sock_.local_endpoint()),
        buf_(UdpSocket::kMaxDatagram) {}

  UdpAgentLink(const UdpAgentLink&) = delete;
  UdpAgentLink& operator=(const UdpAgentLink&) = delete;
  ~UdpAgentLink() override { stop(); }

  /// Starts push intake. Must be called at most once.
  void start(PushHandler handler) {
    handler_ = std::move(handler);
    push_thread_ = std::thread([this] { push_loop(); });
  }

  void stop() {
    stopping_ = true;
    if (push_thread_.joinable()) push_thread_.join();
  }

  std::optional<wire::TrackingInfo> query(const wire::Query& q) override {
    // Answers to earlier queries that timed out must not be mistaken for
    // this one.
    while (query_sock_.recv_now(buf_)) {
    }
    query_sock_.send_to(wire::encode(q), agent_);
    const auto deadline = steady_now() + timeout_;
    for (;;) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - steady_now());
      if (left.count() < 0) break;
      auto got = query_sock_.recv_from(buf_, std::max(left, std::chrono::milliseconds(1)));
      if (!got) {
        if (steady_now() >= deadline) break;
        continue;
      }
      try {
        auto msg = wire::decode(ByteView(buf_.data(), got->size));
        if (auto* r = std::get_if<wire::QueryResponse>(&msg)) return r->info;
      } catch (const DecodeError&) {
      }
    }
    ++timeouts_;
    return std::nullopt;
  }

  void subscribe(const ConnectionId& dcid) override {
    query_sock_.send_to(wire::encode(wire::Subscribe{dcid, push_ep_}), agent_);
  }

  const Endpoint& push_endpoint() const noexcept { return push_ep_; }
  std::uint64_t timeouts() const noexcept { return timeouts_; }
  std::uint64_t pushes_received() const noexcept { return pushes_.load(); }

 private:
  void push_loop() {
    std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
    while (!stopping_.load()) {
      auto got = push_sock_.recv_from(buf, std::chrono::milliseconds(10));
      if (!got) continue;
      try {
        auto msg = wire::decode(ByteView(buf.data(), got->size));
        if (auto* p = std::get_if<wire::PushUpdate>(&msg)) {
          ++pushes_;
          if (handler_) handler_(*p);
        }
      } catch (const DecodeError&) {
      }
    }
  }

  Endpoint agent_;
  std::chrono::milliseconds timeout_;
  UdpSocket query_sock_;
  UdpSocket push_sock_;
  Endpoint push_ep_;
  std::vector<std::uint8_t> buf_;
  PushHandler handler_;
  std::thread push_thread_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> pushes_{0};
  std::uint64_t timeouts_ = 0;
};

}  // namespace qasm
