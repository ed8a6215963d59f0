#pragma once

#include "loadermine/common.hpp"
#include "loadermine/net.hpp"
#include "loadermine/telnet.hpp"

#include <nlohmann/json_fwd.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace loadermine {

// Canned behavior of the desk-scale stand-in for a backing IoT device.
struct ShellProfile {
  Bytes negotiation{"\xff\xfb\x01\xff\xfb\x03", 6};  // IAC WILL ECHO, IAC WILL SGA
  Bytes banner = "\r\n";
  Bytes login_prompt = "login: ";
  Bytes password_prompt = "Password: ";
  // When both are set, only this pair logs in; otherwise any pair does.
  std::optional<Bytes> username;
  std::optional<Bytes> password;
  int max_login_attempts = 3;
  Bytes motd = "\r\nBusyBox v1.19.4 built-in shell (ash)\r\n\r\n";
  Bytes prompt = "# ";
  Bytes ps_output =
      "  PID USER       VSZ STAT COMMAND\r\n"
      "    1 root      1516 S    init\r\n"
      "  211 root      1096 S    telnetd -l /bin/login\r\n"
      "  305 root      1520 R    ps\r\n";
  Bytes echo_binary{"\x7f" "ELF\x01\x01\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x02\x00\x28\x00", 20};
  Bytes busybox_binary{"\x7f" "ELF\x01\x01\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x02\x00\x28\x00", 20};
  Bytes mounts =
      "rootfs / rootfs rw 0 0\r\n"
      "proc /proc proc rw 0 0\r\n"
      "tmpfs /var tmpfs rw 0 0\r\n"
      "tmpfs /dev tmpfs rw 0 0\r\n";
  Bytes ls_output = "bin   dev   etc   home  lib   proc  tmp   usr   var\r\n";
  Bytes wget_output = "wget: bad address\r\n";
  Bytes tftp_output = "tftp: timeout\r\n";
};

ShellProfile load_shell_profile(const std::filesystem::path& path);
ShellProfile shell_profile_from_json(const nlohmann::json& j);

// One telnet session against the fake shell. Pure and deterministic:
// identical input byte streams produce identical output byte streams,
// independent of how the input is split across feed() calls.
class FakeShellSession {
 public:
  explicit FakeShellSession(const ShellProfile& profile) : profile_(&profile) {}

  // Negotiation, banner and first login prompt.
  Bytes start();
  Bytes feed(BytesView input);
  bool closed() const { return state_ == State::kClosed; }

 private:
  enum class State { kLogin, kPassword, kShell, kClosed };

  Bytes on_line(const Bytes& line);
  Bytes run_command_line(const Bytes& line);
  bool run_statement(std::string_view statement, Bytes& out);
  std::string resolve(std::string_view path) const;

  const ShellProfile* profile_;
  telnet::Decoder decoder_;
  State state_ = State::kLogin;
  Bytes line_;
  bool after_cr_ = false;
  Bytes pending_user_;
  int failed_logins_ = 0;
  std::string cwd_ = "/";
  std::map<std::string, Bytes> files_;
};

// Line-oriented telnet server wrapping FakeShellSession, one thread per connection.
class FakeShellServer {
 public:
  FakeShellServer(ShellProfile profile, net::Endpoint listen,
                  std::chrono::milliseconds idle_timeout = std::chrono::seconds(120));
  ~FakeShellServer();

  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  net::Endpoint endpoint() const;

 private:
  void accept_loop();
  void serve(net::Socket client);

  ShellProfile profile_;
  net::Endpoint listen_;
  std::chrono::milliseconds idle_timeout_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

}  // namespace loadermine
