#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <optional>
#include <span>
#include <system_error>
#include <utility>

#include "qasm/bytes.hpp"
#include "qasm/net.hpp"

namespace qasm {

struct Received {
  std::size_t size = 0;
  Endpoint from;
};

/// Owning IPv4 UDP socket.
class UdpSocket {
 public:
  static constexpr std::size_t kMaxDatagram = 65535;

  UdpSocket() = default;

  static UdpSocket bind(const Endpoint& local) {
    UdpSocket s;
    s.fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (s.fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
    sockaddr_in addr = to_sockaddr(local);
    if (::bind(s.fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
      throw std::system_error(errno, std::generic_category(), "bind " + local.to_string());
    int size = 4 << 20;
    ::setsockopt(s.fd_, SOL_SOCKET, SO_RCVBUF, &size, sizeof(size));
    ::setsockopt(s.fd_, SOL_SOCKET, SO_SNDBUF, &size, sizeof(size));
    return s;
  }

  UdpSocket(UdpSocket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  UdpSocket& operator=(UdpSocket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;
  ~UdpSocket() { reset(); }

  bool valid() const noexcept { return fd_ >= 0; }
  int fd() const noexcept { return fd_; }

  Endpoint local_endpoint() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
      throw std::system_error(errno, std::generic_category(), "getsockname");
    return from_sockaddr(addr);
  }

  void send_to(ByteView data, const Endpoint& to) const {
    sockaddr_in addr = to_sockaddr(to);
    ssize_t n = ::sendto(fd_, data.data(), data.size(), 0, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr));
    if (n < 0) throw std::system_error(errno, std::generic_category(), "sendto " + to.to_string());
  }

  /// Waits up to `timeout` for one datagram. Returns nullopt on timeout.
  std::optional<Received> recv_from(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) const {
    pollfd pfd{fd_, POLLIN, 0};
    int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready < 0) {
      if (errno == EINTR) return std::nullopt;
      throw std::system_error(errno, std::generic_category(), "poll");
    }
    if (ready == 0) return std::nullopt;
    return recv_now(buf);
  }

  /// Non-blocking receive.
  std::optional<Received> recv_now(std::span<std::uint8_t> buf) const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), MSG_DONTWAIT, reinterpret_cast<sockaddr*>(&addr), &len);
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return std::nullopt;
      throw std::system_error(errno, std::generic_category(), "recvfrom");
    }
    return Received{static_cast<std::size_t>(n), from_sockaddr(addr)};
  }

 private:
  static sockaddr_in to_sockaddr(const Endpoint& ep) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    addr.sin_addr.s_addr = htonl(ep.ip.value);
    return addr;
  }
  static Endpoint from_sockaddr(const sockaddr_in& addr) {
    return Endpoint{Ipv4Addr(ntohl(addr.sin_addr.s_addr)), ntohs(addr.sin_port)};
  }

  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  int fd_ = -1;
};

}  // namespace qasm
