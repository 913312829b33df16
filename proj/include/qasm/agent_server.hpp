#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include "qasm/tracking_agent.hpp"
#include "qasm/udp_socket.hpp"

namespace qasm {

/// Tracking Agent served over UDP. The client-facing and middlebox-facing
/// APIs each own a socket and a service thread; pushes leave through a
/// separate sender thread so fan-out never delays query handling.
class AgentServer {
 public:
  explicit AgentServer(AgentConfig cfg = {})
      : agent_(cfg),
        client_sock_(UdpSocket::bind(cfg.client_bind)),
        mbox_sock_(UdpSocket::bind(cfg.middlebox_bind)) {
    client_thread_ = std::thread([this] { client_loop(); });
    mbox_thread_ = std::thread([this] { middlebox_loop(); });
    push_thread_ = std::thread([this] { push_loop(); });
  }

  AgentServer(const AgentServer&) = delete;
  AgentServer& operator=(const AgentServer&) = delete;

  ~AgentServer() { stop(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    push_cv_.notify_all();
    for (auto* t : {&client_thread_, &mbox_thread_, &push_thread_})
      if (t->joinable()) t->join();
  }

  Endpoint client_endpoint() const { return client_sock_.local_endpoint(); }
  Endpoint middlebox_endpoint() const { return mbox_sock_.local_endpoint(); }
  TrackingAgent& agent() noexcept { return agent_; }
  const TrackingAgent& agent() const noexcept { return agent_; }

  std::uint64_t send_errors() const noexcept { return send_errors_.load(); }

 private:
  static constexpr std::chrono::milliseconds kPollInterval{20};

  void client_loop() {
    std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
    auto next_sweep = steady_now() + std::chrono::seconds(1);
    while (!stopping_.load()) {
      if (auto got = client_sock_.recv_from(buf, kPollInterval)) {
        enqueue(agent_.on_client_datagram(ByteView(buf.data(), got->size), steady_now()));
      }
      if (steady_now() >= next_sweep) {
        agent_.expire_idle(steady_now());
        next_sweep = steady_now() + std::chrono::seconds(1);
      }
    }
  }

  void middlebox_loop() {
    std::vector<std::uint8_t> buf(UdpSocket::kMaxDatagram);
    while (!stopping_.load()) {
      auto got = mbox_sock_.recv_from(buf, kPollInterval);
      if (!got) continue;
      auto result = agent_.on_middlebox_datagram(ByteView(buf.data(), got->size), got->from);
      if (result.reply) send(mbox_sock_, *result.reply);
      enqueue(std::move(result.pushes));
    }
  }

  void push_loop() {
    for (;;) {
      std::deque<Outbound> batch;
      {
        std::unique_lock lock(push_mu_);
        push_cv_.wait(lock, [this] { return stopping_.load() || !push_queue_.empty(); });
        if (push_queue_.empty() && stopping_.load()) return;
        batch.swap(push_queue_);
      }
      for (const auto& o : batch) send(mbox_sock_, o);
    }
  }

  void enqueue(std::vector<Outbound> out) {
    if (out.empty()) return;
    {
      std::lock_guard lock(push_mu_);
      for (auto& o : out) push_queue_.push_back(std::move(o));
    }
    push_cv_.notify_one();
  }

  void send(const UdpSocket& sock, const Outbound& o) {
    try {
      sock.send_to(o.bytes, o.to);
    } catch (const std::system_error&) {
      ++send_errors_;
    }
  }

  TrackingAgent agent_;
  UdpSocket client_sock_;
  UdpSocket mbox_sock_;

  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> send_errors_{0};
  std::mutex push_mu_;
  std::condition_variable push_cv_;
  std::deque<Outbound> push_queue_;

  std::thread client_thread_;
  std::thread mbox_thread_;
  std::thread push_thread_;
};

}  // namespace qasm
