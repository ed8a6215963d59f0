#pragma once

#include "loadermine/conversation.hpp"
#include "loadermine/net.hpp"
#include "loadermine/session_store.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <optional>
#include <regex>
#include <thread>
#include <vector>

namespace loadermine {

struct CredentialSubstitution {
  std::vector<std::string> username_prompts{"ogin:", "sername:"};
  std::vector<std::string> password_prompts{"assword:"};
  Bytes username;
  Bytes password;
  int max_substitutions = 4;
};

struct ProxyConfig {
  net::Endpoint listen;
  net::Endpoint upstream;
  std::optional<CredentialSubstitution> credential_substitution;
  std::size_t max_session_bytes = 1 << 20;
  std::chrono::milliseconds idle_timeout = std::chrono::seconds(120);
  std::chrono::milliseconds connect_timeout = std::chrono::seconds(5);
  OriginTag origin_tag = OriginTag::kWild;

  // Throws std::invalid_argument on a zero byte cap or timeout.
  void validate() const;
};

// Transparent TCP relay that records one Conversation per inbound connection.
// Stored payloads are always the attacker's original bytes; only the
// upstream-bound copy of a credential line is ever replaced.
class Proxy {
 public:
  Proxy(ProxyConfig config, SessionSink& sink);
  ~Proxy();
  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  // Binds and starts accepting. Throws net::NetError when the bind fails.
  void start();
  // Stops accepting and waits for in-flight sessions to be stored.
  void stop();

  std::uint16_t port() const { return port_; }

 private:
  void accept_loop();
  void relay(net::Socket client);
  std::string next_session_id();

  ProxyConfig config_;
  SessionSink& sink_;
  std::vector<std::regex> user_prompts_;
  std::vector<std::regex> pass_prompts_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> counter_{0};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

}  // namespace loadermine
