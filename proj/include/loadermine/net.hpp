#pragma once

#include "loadermine/common.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace loadermine::net {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  // Accepts "host:port", "[v6]:port" and ":port" (all interfaces).
  static Endpoint parse(std::string_view text);
  std::string str() const;
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  void shutdown_write();

  // Blocks until every byte is written. Returns false if the peer is gone.
  bool write_all(BytesView data);
  // Waits up to `timeout` for data. nullopt on timeout, empty string on EOF/error.
  std::optional<Bytes> read_some(std::chrono::milliseconds timeout, std::size_t max = 16384);

  std::uint16_t local_port() const;
  std::string peer_name() const;

 private:
  int fd_ = -1;
};

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Socket listen_tcp(const Endpoint& ep, int backlog = 64);
Socket connect_tcp(const Endpoint& ep, std::chrono::milliseconds timeout);
// Waits up to `timeout` for a connection; invalid Socket on timeout.
Socket accept_for(const Socket& listener, std::chrono::milliseconds timeout);

}  // namespace loadermine::net
