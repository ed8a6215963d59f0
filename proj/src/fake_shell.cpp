#include "loadermine/fake_shell.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

namespace {

using nlohmann::json;

Bytes field_bytes(const json& j, const char* key, const Bytes& fallback) {
  if (auto it = j.find(key); it != j.end()) return it->get<std::string>();
  if (auto it = j.find(std::string(key) + "_b64"); it != j.end()) {
    return base64_decode(it->get<std::string>());
  }
  return fallback;
}

bool is_space(char c) { return c == ' ' || c == '\t'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

struct Statement {
  std::string_view connector;  // "", ";", "&&", "||"
  std::string_view text;
};

std::vector<Statement> split_statements(std::string_view line) {
  std::vector<Statement> out;
  std::string_view connector;
  std::size_t begin = 0;
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote != 0) {
      if (c == quote) quote = 0;
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
      continue;
    }
    std::size_t width = 0;
    if (c == ';') width = 1;
    else if ((c == '&' || c == '|') && i + 1 < line.size() && line[i + 1] == c) width = 2;
    if (width == 0) continue;
    out.push_back({connector, line.substr(begin, i - begin)});
    connector = line.substr(i, width);
    i += width - 1;
    begin = i + 1;
  }
  out.push_back({connector, line.substr(begin)});
  return out;
}

struct Words {
  std::vector<std::string> args;
  std::optional<std::string> redirect;
  bool append = false;
};

Words split_words(std::string_view text) {
  Words w;
  std::string cur;
  bool in_word = false;
  bool pending_redirect = false;
  bool redirect_append = false;
  bool discard_next = false;
  auto flush = [&] {
    if (!in_word) return;
    if (pending_redirect) {
      w.redirect = cur;
      w.append = redirect_append;
      pending_redirect = false;
    } else if (discard_next) {
      discard_next = false;
    } else {
      w.args.push_back(cur);
    }
    cur.clear();
    in_word = false;
  };
  char quote = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quote != 0) {
      if (c == quote) quote = 0;
      else cur.push_back(c);
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
      in_word = true;
    } else if (is_space(c)) {
      flush();
    } else if (c == '>') {
      // "2>" style redirects of a numbered descriptor are discarded.
      const bool numbered = in_word && cur.size() == 1 && cur[0] >= '0' && cur[0] <= '9';
      if (numbered) {
        cur.clear();
        in_word = false;
      } else {
        flush();
      }
      redirect_append = i + 1 < text.size() && text[i + 1] == '>';
      if (redirect_append) ++i;
      if (numbered) discard_next = true;
      else pending_redirect = true;
    } else if (c == '<') {
      flush();
      discard_next = true;
    } else {
      cur.push_back(c);
      in_word = true;
    }
  }
  flush();
  if (pending_redirect && !w.redirect) w.redirect = std::string();
  return w;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

Bytes interpret_escapes(std::string_view s) {
  Bytes out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 >= s.size()) {
      out.push_back(s[i]);
      continue;
    }
    const char e = s[++i];
    switch (e) {
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 't': out.push_back('\t'); break;
      case '\\': out.push_back('\\'); break;
      case 'x': {
        int value = 0;
        int digits = 0;
        while (digits < 2 && i + 1 < s.size() && hex_value(s[i + 1]) >= 0) {
          value = value * 16 + hex_value(s[++i]);
          ++digits;
        }
        if (digits == 0) out += "\\x";
        else out.push_back(static_cast<char>(value));
        break;
      }
      default:
        out.push_back('\\');
        out.push_back(e);
    }
  }
  return out;
}

std::string basename_of(std::string_view path) {
  const auto slash = path.rfind('/');
  return std::string(slash == std::string_view::npos ? path : path.substr(slash + 1));
}

}  // namespace

ShellProfile shell_profile_from_json(const json& j) {
  ShellProfile p;
  p.negotiation = field_bytes(j, "negotiation", p.negotiation);
  p.banner = field_bytes(j, "banner", p.banner);
  p.login_prompt = field_bytes(j, "login_prompt", p.login_prompt);
  p.password_prompt = field_bytes(j, "password_prompt", p.password_prompt);
  if (j.contains("username")) p.username = j.at("username").get<std::string>();
  if (j.contains("password")) p.password = j.at("password").get<std::string>();
  p.max_login_attempts = j.value("max_login_attempts", p.max_login_attempts);
  p.motd = field_bytes(j, "motd", p.motd);
  p.prompt = field_bytes(j, "prompt", p.prompt);
  p.ps_output = field_bytes(j, "ps_output", p.ps_output);
  p.echo_binary = field_bytes(j, "echo_binary", p.echo_binary);
  p.busybox_binary = field_bytes(j, "busybox_binary", p.busybox_binary);
  p.mounts = field_bytes(j, "mounts", p.mounts);
  p.ls_output = field_bytes(j, "ls_output", p.ls_output);
  p.wget_output = field_bytes(j, "wget_output", p.wget_output);
  p.tftp_output = field_bytes(j, "tftp_output", p.tftp_output);
  return p;
}

ShellProfile load_shell_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot read shell profile {}", path.string()));
  try {
    return shell_profile_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bad shell profile {}: {}", path.string(), e.what()));
  }
}

Bytes FakeShellSession::start() {
  return profile_->negotiation + profile_->banner + profile_->login_prompt;
}

Bytes FakeShellSession::feed(BytesView input) {
  Bytes out;
  const auto data = decoder_.feed(input).data;
  for (const char c : data) {
    if (state_ == State::kClosed) break;
    if (after_cr_) {
      after_cr_ = false;
      if (c == '\n' || c == '\0') continue;
    }
    if (c == '\r' || c == '\n') {
      after_cr_ = c == '\r';
      out += on_line(line_);
      line_.clear();
    } else {
      line_.push_back(c);
    }
  }
  return out;
}

Bytes FakeShellSession::on_line(const Bytes& line) {
  switch (state_) {
    case State::kLogin:
      pending_user_ = line;
      state_ = State::kPassword;
      return "\r\n" + profile_->password_prompt;
    case State::kPassword: {
      const bool required = profile_->username && profile_->password;
      if (!required || (pending_user_ == *profile_->username && line == *profile_->password)) {
        state_ = State::kShell;
        return profile_->motd + profile_->prompt;
      }
      if (++failed_logins_ >= profile_->max_login_attempts) {
        state_ = State::kClosed;
        return "\r\nLogin incorrect\r\n";
      }
      state_ = State::kLogin;
      return "\r\nLogin incorrect\r\n" + profile_->login_prompt;
    }
    case State::kShell: {
      Bytes out = run_command_line(line);
      if (state_ != State::kClosed) out += profile_->prompt;
      return out;
    }
    case State::kClosed:
      break;
  }
  return {};
}

Bytes FakeShellSession::run_command_line(const Bytes& line) {
  Bytes out;
  bool last_ok = true;
  for (const auto& [connector, text] : split_statements(line)) {
    if (state_ == State::kClosed) break;
    if (connector == "&&" && !last_ok) continue;
    if (connector == "||" && last_ok) continue;
    last_ok = run_statement(trim(text), out);
  }
  return out;
}

std::string FakeShellSession::resolve(std::string_view path) const {
  if (!path.empty() && path.front() == '/') return std::string(path);
  if (cwd_ == "/") return "/" + std::string(path);
  return cwd_ + "/" + std::string(path);
}

bool FakeShellSession::run_statement(std::string_view statement, Bytes& out) {
  if (statement.empty()) return true;
  auto words = split_words(statement);
  auto& args = words.args;

  auto emit = [&](const Bytes& text) {
    if (!words.redirect) {
      out += text;
    } else if (!words.redirect->empty()) {
      auto& file = files_[resolve(*words.redirect)];
      if (words.append) file += text;
      else file = text;
    }
  };

  if (args.empty()) {
    // Bare redirect creates or truncates the file.
    if (words.redirect && !words.redirect->empty()) {
      auto& file = files_[resolve(*words.redirect)];
      if (!words.append) file.clear();
    }
    return true;
  }

  std::string cmd = basename_of(args.front());
  bool via_busybox = false;
  if (cmd == "busybox") {
    via_busybox = true;
    args.erase(args.begin());
    if (args.empty()) {
      emit("BusyBox v1.19.4 multi-call binary.\r\n");
      return true;
    }
    cmd = basename_of(args.front());
  }

  if (cmd == "echo") {
    bool escapes = false;
    bool newline = true;
    std::size_t i = 1;
    for (; i < args.size() && args[i].size() > 1 && args[i][0] == '-'; ++i) {
      const auto& flag = args[i];
      if (flag.find_first_not_of("-en") != std::string::npos) break;
      if (flag.find('e') != std::string::npos) escapes = true;
      if (flag.find('n') != std::string::npos) newline = false;
    }
    Bytes text;
    for (std::size_t k = i; k < args.size(); ++k) {
      if (k > i) text.push_back(' ');
      text += escapes ? interpret_escapes(args[k]) : args[k];
    }
    if (newline) text += "\r\n";
    emit(text);
    return true;
  }
  if (cmd == "cat") {
    bool ok = true;
    for (std::size_t i = 1; i < args.size(); ++i) {
      const auto path = resolve(args[i]);
      if (auto it = files_.find(path); it != files_.end()) emit(it->second);
      else if (path == "/bin/echo") emit(profile_->echo_binary);
      else if (path == "/bin/busybox") emit(profile_->busybox_binary);
      else if (path == "/proc/mounts") emit(profile_->mounts);
      else {
        out += fmt::format("cat: {}: No such file or directory\r\n", args[i]);
        ok = false;
      }
    }
    return ok;
  }
  if (cmd == "ps") {
    emit(profile_->ps_output);
    return true;
  }
  if (cmd == "ls") {
    emit(profile_->ls_output);
    return true;
  }
  if (cmd == "cd") {
    cwd_ = args.size() > 1 ? resolve(args[1]) : "/";
    while (cwd_.size() > 1 && cwd_.back() == '/') cwd_.pop_back();
    return true;
  }
  if (cmd == "rm") {
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (!args[i].empty() && args[i][0] == '-') continue;
      files_.erase(resolve(args[i]));
    }
    return true;
  }
  if (cmd == "wget") {
    out += profile_->wget_output;
    return false;
  }
  if (cmd == "tftp") {
    out += profile_->tftp_output;
    return false;
  }
  if (cmd == "exit" || cmd == "logout") {
    state_ = State::kClosed;
    return true;
  }
  if (via_busybox) out += fmt::format("{}: applet not found\r\n", cmd);
  else out += fmt::format("-sh: {}: not found\r\n", cmd);
  return false;
}

FakeShellServer::FakeShellServer(ShellProfile profile, net::Endpoint listen,
                                 std::chrono::milliseconds idle_timeout)
    : profile_(std::move(profile)), listen_(std::move(listen)), idle_timeout_(idle_timeout) {}

FakeShellServer::~FakeShellServer() { stop(); }

net::Endpoint FakeShellServer::endpoint() const {
  const auto host = listen_.host.empty() || listen_.host == "0.0.0.0" ? std::string("127.0.0.1")
                                                                       : listen_.host;
  return {host, port_};
}

void FakeShellServer::start() {
  listener_ = net::listen_tcp(listen_);
  port_ = listener_.local_port();
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void FakeShellServer::stop() {
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

void FakeShellServer::accept_loop() {
  while (!stopping_) {
    auto client = net::accept_for(listener_, std::chrono::milliseconds(100));
    if (!client.valid()) continue;
    std::lock_guard lock(workers_mu_);
    workers_.emplace_back([this, c = std::move(client)]() mutable { serve(std::move(c)); });
  }
}

void FakeShellServer::serve(net::Socket client) {
  FakeShellSession session(profile_);
  if (!client.write_all(session.start())) return;
  auto idle = std::chrono::milliseconds::zero();
  const auto tick = std::chrono::milliseconds(100);
  while (!stopping_ && !session.closed()) {
    auto data = client.read_some(tick);
    if (!data) {
      idle += tick;
      if (idle >= idle_timeout_) break;
      continue;
    }
    if (data->empty()) break;
    idle = std::chrono::milliseconds::zero();
    const auto out = session.feed(*data);
    if (!out.empty() && !client.write_all(out)) break;
  }
}

}  // namespace loadermine
