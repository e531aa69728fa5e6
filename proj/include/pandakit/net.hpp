#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "pandakit/errors.hpp"

// Minimal RAII wrappers over POSIX IPv4 sockets.
namespace pandakit::net {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  // Wakes any thread blocked on the descriptor without invalidating it.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

struct Endpoint {
  sockaddr_in addr{};

  std::uint16_t port() const { return ntohs(addr.sin_port); }
  bool operator==(const Endpoint& o) const {
    return addr.sin_addr.s_addr == o.addr.sin_addr.s_addr && addr.sin_port == o.addr.sin_port;
  }
};

inline Endpoint resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw ConnectionRefused("cannot resolve host '" + host + "'");
  Endpoint ep;
  ep.addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ep.addr.sin_port = htons(port);
  ::freeaddrinfo(res);
  return ep;
}

inline bool wait_readable(int fd, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  int r;
  do {
    r = ::poll(&p, 1, timeout_ms);
  } while (r < 0 && errno == EINTR);
  return r > 0;
}

inline std::uint16_t local_port(int fd) {
  sockaddr_in a{};
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  return ntohs(a.sin_port);
}

class TcpStream {
 public:
  TcpStream() = default;
  explicit TcpStream(Fd fd, Endpoint peer = {}) : fd_(std::move(fd)), peer_(peer) {
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  static TcpStream connect(const std::string& host, std::uint16_t port) {
    const Endpoint ep = resolve(host, port);
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd.valid()) throw ConnectionRefused(errno_text("socket"));
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&ep.addr), sizeof ep.addr) != 0)
      throw ConnectionRefused(errno_text("connect to " + host + ":" + std::to_string(port)));
    return TcpStream(std::move(fd), ep);
  }

  bool valid() const { return fd_.valid(); }
  const Endpoint& peer() const { return peer_; }
  void shutdown() const { fd_.shutdown(); }

  void send_line(const std::string& line) {
    std::string buf = line + "\n";
    std::size_t sent = 0;
    while (sent < buf.size()) {
      const ssize_t n = ::send(fd_.get(), buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Disconnected(errno_text("send"));
      sent += static_cast<std::size_t>(n);
    }
  }

  // Next newline-terminated line; nullopt on timeout (negative timeout blocks).
  // Throws Disconnected when the peer closes the connection.
  std::optional<std::string> read_line(int timeout_ms = -1) {
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      if (!wait_readable(fd_.get(), timeout_ms)) return std::nullopt;
      char chunk[4096];
      const ssize_t n = ::recv(fd_.get(), chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Disconnected("connection closed by peer");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  Fd fd_;
  Endpoint peer_;
  std::string buffer_;
};

class TcpListener {
 public:
  static TcpListener bind(const std::string& host, std::uint16_t port) {
    TcpListener l;
    l.fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!l.fd_.valid()) throw Error(errno_text("socket"));
    int one = 1;
    ::setsockopt(l.fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const Endpoint ep = resolve(host, port);
    if (::bind(l.fd_.get(), reinterpret_cast<const sockaddr*>(&ep.addr), sizeof ep.addr) != 0)
      throw Error(errno_text("bind tcp port " + std::to_string(port)));
    if (::listen(l.fd_.get(), 16) != 0) throw Error(errno_text("listen"));
    l.port_ = local_port(l.fd_.get());
    return l;
  }

  std::uint16_t port() const { return port_; }
  void shutdown() const { fd_.shutdown(); }

  std::optional<TcpStream> accept(int timeout_ms) {
    if (!wait_readable(fd_.get(), timeout_ms)) return std::nullopt;
    Endpoint peer;
    socklen_t len = sizeof peer.addr;
    const int fd = ::accept4(fd_.get(), reinterpret_cast<sockaddr*>(&peer.addr), &len, SOCK_CLOEXEC);
    if (fd < 0) return std::nullopt;
    return TcpStream(Fd(fd), peer);
  }

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

class UdpSocket {
 public:
  static UdpSocket bind(const std::string& host, std::uint16_t port) {
    UdpSocket s;
    s.fd_ = Fd(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
    if (!s.fd_.valid()) throw Error(errno_text("socket"));
    const Endpoint ep = resolve(host, port);
    if (::bind(s.fd_.get(), reinterpret_cast<const sockaddr*>(&ep.addr), sizeof ep.addr) != 0)
      throw Error(errno_text("bind udp port " + std::to_string(port)));
    s.port_ = local_port(s.fd_.get());
    return s;
  }

  std::uint16_t port() const { return port_; }
  void shutdown() const { fd_.shutdown(); }

  void send_to(std::span<const std::uint8_t> bytes, const Endpoint& to) const {
    ::sendto(fd_.get(), bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&to.addr),
             sizeof to.addr);
  }

  // Size of the received datagram, or nullopt on timeout.
  std::optional<std::size_t> recv_from(std::span<std::uint8_t> buf, Endpoint* from, int timeout_ms) const {
    if (!wait_readable(fd_.get(), timeout_ms)) return std::nullopt;
    Endpoint src;
    socklen_t len = sizeof src.addr;
    const ssize_t n =
        ::recvfrom(fd_.get(), buf.data(), buf.size(), MSG_TRUNC, reinterpret_cast<sockaddr*>(&src.addr), &len);
    if (n < 0) return std::nullopt;
    if (from) *from = src;
    return static_cast<std::size_t>(n);
  }

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

}  // namespace pandakit::net
