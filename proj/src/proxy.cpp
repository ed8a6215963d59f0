#include "loadermine/proxy.hpp"

#include "loadermine/telnet.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace loadermine {

namespace {

constexpr std::size_t kTailLimit = 256;
constexpr std::chrono::milliseconds kDrainTimeout{2000};

std::vector<std::regex> compile(const std::vector<std::string>& patterns) {
  std::vector<std::regex> out;
  out.reserve(patterns.size());
  for (const auto& p : patterns) out.emplace_back(p, std::regex::icase);
  return out;
}

bool any_match(const std::vector<std::regex>& res, const std::string& text) {
  return std::any_of(res.begin(), res.end(),
                     [&](const std::regex& re) { return std::regex_search(text, re); });
}

Bytes escape_iac(BytesView data) {
  Bytes out;
  out.reserve(data.size());
  for (const char c : data) {
    out.push_back(c);
    if (static_cast<unsigned char>(c) == telnet::kIac) out.push_back(c);
  }
  return out;
}

enum class Awaiting { kNone, kUsername, kPassword };

// Per-session state of the credential rewriter.
struct Substituter {
  const CredentialSubstitution* config = nullptr;
  const std::vector<std::regex>* user_prompts = nullptr;
  const std::vector<std::regex>* pass_prompts = nullptr;
  telnet::Decoder upstream_decoder;
  telnet::Decoder client_decoder;
  std::string upstream_tail;
  Awaiting awaiting = Awaiting::kNone;
  int done = 0;

  void on_upstream(BytesView raw) {
    if (config == nullptr) return;
    const auto data = upstream_decoder.feed(raw).data;
    for (const char c : data) {
      if (c == '\n') upstream_tail.clear();
      else upstream_tail.push_back(c);
    }
    if (upstream_tail.size() > kTailLimit) upstream_tail.erase(0, upstream_tail.size() - kTailLimit);
    if (done >= config->max_substitutions || upstream_tail.empty()) return;
    if (any_match(*user_prompts, upstream_tail)) awaiting = Awaiting::kUsername;
    else if (any_match(*pass_prompts, upstream_tail)) awaiting = Awaiting::kPassword;
  }

  // Returns the bytes to send upstream for one client read.
  Bytes on_client(BytesView raw) {
    if (config == nullptr) return Bytes(raw);
    auto chunk = client_decoder.feed(raw);
    if (awaiting == Awaiting::kNone) return Bytes(raw);
    Bytes out = std::move(chunk.commands);
    const auto end = chunk.data.find_first_of("\r\n");
    if (end == Bytes::npos) return out;  // credential still being typed
    out += awaiting == Awaiting::kUsername ? config->username : config->password;
    out += escape_iac(BytesView(chunk.data).substr(end));
    awaiting = Awaiting::kNone;
    upstream_tail.clear();
    ++done;
    return out;
  }
};

}  // namespace

void ProxyConfig::validate() const {
  if (max_session_bytes == 0) throw std::invalid_argument("max_session_bytes must be positive");
  if (idle_timeout.count() <= 0) throw std::invalid_argument("idle_timeout must be positive");
}

Proxy::Proxy(ProxyConfig config, SessionSink& sink) : config_(std::move(config)), sink_(sink) {
  config_.validate();
  if (config_.credential_substitution) {
    user_prompts_ = compile(config_.credential_substitution->username_prompts);
    pass_prompts_ = compile(config_.credential_substitution->password_prompts);
  }
}

Proxy::~Proxy() { stop(); }

void Proxy::start() {
  listener_ = net::listen_tcp(config_.listen);
  port_ = listener_.local_port();
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Proxy::stop() {
  stopping_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  listener_.close();
}

std::string Proxy::next_session_id() {
  const auto n = counter_.fetch_add(1);
  return fmt::format("{:x}-{:x}-{:06}", now_utc().time_since_epoch().count(),
                     static_cast<unsigned>(::getpid()), n);
}

void Proxy::accept_loop() {
  while (!stopping_) {
    auto client = net::accept_for(listener_, std::chrono::milliseconds(100));
    if (!client.valid()) continue;
    std::lock_guard lock(workers_mu_);
    workers_.emplace_back([this, c = std::move(client)]() mutable { relay(std::move(c)); });
  }
}

void Proxy::relay(net::Socket client) {
  Conversation conv;
  conv.session_id = next_session_id();
  conv.peer_addr = client.peer_name();
  conv.local_port = port_;
  conv.origin_tag = config_.origin_tag;
  conv.started_at = now_utc();

  Timestamp last = conv.started_at;
  auto stamp = [&last] {
    last = std::max(last, now_utc());
    return last;
  };

  net::Socket upstream;
  try {
    upstream = net::connect_tcp(config_.upstream, config_.connect_timeout);
  } catch (const net::NetError&) {
    conv.upstream_closed = true;
    conv.ended_at = stamp();
    sink_.append(conv);
    return;
  }

  Substituter subst;
  if (config_.credential_substitution) {
    subst.config = &*config_.credential_substitution;
    subst.user_prompts = &user_prompts_;
    subst.pass_prompts = &pass_prompts_;
  }

  std::size_t recorded = 0;
  // Records a read; returns false once the byte cap has been reached.
  auto record = [&](Direction dir, Bytes& data) {
    const std::size_t room = config_.max_session_bytes - recorded;
    if (data.size() > room) {
      data.resize(room);
      conv.truncated = true;
    }
    if (!data.empty()) {
      recorded += data.size();
      conv.messages.push_back({dir, data, stamp()});
    }
    return !conv.truncated;
  };

  bool client_open = true;
  const auto tick = std::chrono::milliseconds(100);
  auto idle = std::chrono::milliseconds::zero();
  Bytes buf(16384, '\0');
  while (!stopping_) {
    pollfd fds[2] = {{upstream.fd(), POLLIN, 0}, {client_open ? client.fd() : -1, POLLIN, 0}};
    const int rc = ::poll(fds, 2, static_cast<int>(tick.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0) {
      idle += tick;
      // Once the attacker has hung up, only drain what upstream still has queued.
      const auto limit = client_open ? config_.idle_timeout
                                     : std::min<std::chrono::milliseconds>(config_.idle_timeout, kDrainTimeout);
      if (idle >= limit) break;
      continue;
    }
    idle = std::chrono::milliseconds::zero();

    if (fds[1].revents != 0) {
      const ssize_t n = ::recv(client.fd(), buf.data(), buf.size(), 0);
      if (n <= 0) {
        client_open = false;
        upstream.shutdown_write();
      } else {
        Bytes data(buf.data(), static_cast<std::size_t>(n));
        const bool more = record(Direction::kToHoneypot, data);
        upstream.write_all(subst.on_client(data));
        if (!more) break;
      }
    }
    if (fds[0].revents != 0) {
      const ssize_t n = ::recv(upstream.fd(), buf.data(), buf.size(), 0);
      if (n <= 0) break;
      Bytes data(buf.data(), static_cast<std::size_t>(n));
      const bool more = record(Direction::kFromHoneypot, data);
      subst.on_upstream(data);
      if (client_open) client.write_all(data);
      if (!more) break;
    }
  }
  upstream.close();
  client.close();
  conv.ended_at = stamp();
  sink_.append(conv);
}

}  // namespace loadermine
