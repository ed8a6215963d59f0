#include "loadermine/preprocess.hpp"
#include "loadermine/session_store.hpp"
#include "loadermine/simulator.hpp"

#include <doctest.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <random>
#include <sstream>

using namespace loadermine;

namespace {

Timestamp at(int seconds) { return parse_rfc3339("2022-01-01T00:00:00Z") + std::chrono::seconds(seconds); }

struct ConvBuilder {
  Conversation c;
  int clock = 0;

  explicit ConvBuilder(std::string id = "s1", std::string peer = "198.51.100.7:5555") {
    c.session_id = std::move(id);
    c.peer_addr = std::move(peer);
    c.local_port = 23;
    c.started_at = at(0);
  }
  ConvBuilder& from(Bytes p) {
    c.messages.push_back({Direction::kFromHoneypot, std::move(p), at(++clock)});
    return *this;
  }
  ConvBuilder& to(Bytes p) {
    c.messages.push_back({Direction::kToHoneypot, std::move(p), at(++clock)});
    return *this;
  }
  Conversation done() {
    c.ended_at = at(++clock);
    return c;
  }
};

Bytes requests_of(const Conversation& c) {
  Bytes out;
  for (const auto& m : c.messages) {
    if (m.direction == Direction::kToHoneypot) out += m.payload;
  }
  return out;
}

RequestLog log_of(std::string id, std::string host, Bytes payload, int start) {
  RequestLog l;
  l.log_id = id;
  l.source_host = std::move(host);
  l.payload = std::move(payload);
  l.session_ids = {id};
  l.started_at = at(start);
  return l;
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("strip_protocol removes negotiation in both directions") {
    auto conv = ConvBuilder().from(Bytes("\xff\xfb\x01login: ", 10)).to(Bytes("\xff\xfd\x01", 3)).to(Bytes("\xff\xfb\x01ls", 5)).done();
    const auto r = strip_protocol(conv);
    REQUIRE(r.conversation.messages.size() == 2);
    CHECK(r.conversation.messages[0].payload == "login: ");
    CHECK(r.conversation.messages[1].payload == "ls");
    CHECK(r.dangling_bytes == 0);
  }

  TEST_CASE("strip_protocol joins sequences split across messages and counts dangling bytes") {
    auto conv = ConvBuilder().to(Bytes("a\xff", 2)).to(Bytes("\xfb\x01" "b\xff\xff", 5)).to(Bytes("c\xff", 2)).done();
    const auto r = strip_protocol(conv);
    CHECK(requests_of(r.conversation) == Bytes("ab\xff" "c", 4));
    CHECK(r.dangling_bytes == 1);
  }

  TEST_CASE("credential replies are removed") {
    auto conv = ConvBuilder().from("login: ").to("root\r\n").from("Password: ").to("vizxv\r\n").from("# ").to("ls\r\n").done();
    CHECK(requests_of(strip_credentials(conv)) == "ls\r\n");
  }

  TEST_CASE("credentials in one message with the command") {
    auto conv = ConvBuilder().from("login: ").to("root\r\nvizxv\r\nls\r\n").done();
    CHECK(requests_of(strip_credentials(conv)) == "vizxv\r\nls\r\n");
  }

  TEST_CASE("no prompt leaves the conversation unchanged") {
    auto conv = ConvBuilder().from("# ").to("ls\r\n").to("ps\r\n").done();
    CHECK(strip_credentials(conv) == conv);
  }

  TEST_CASE("empty reply is removed and later requests kept") {
    auto conv = ConvBuilder().from("login: ").to("\r\n").from("# ").to("enable\r\n").done();
    CHECK(requests_of(strip_credentials(conv)) == "enable\r\n");
  }

  TEST_CASE("reply split over several messages") {
    auto conv = ConvBuilder().from("Username: ").to("ro").to("ot\r").to("\nsh\r\n").done();
    CHECK(requests_of(strip_credentials(conv)) == "sh\r\n");
  }

  TEST_CASE("banner mentioning login is not a prompt") {
    auto conv = ConvBuilder().from("Last login: today\r\n# ").to("ls\r\n").done();
    CHECK(requests_of(strip_credentials(conv)) == "ls\r\n");
  }

  TEST_CASE("at most four replies are removed") {
    ConvBuilder b;
    for (int i = 0; i < 6; ++i) b.from("login: ").to("u" + std::to_string(i) + "\r\n");
    CHECK(requests_of(strip_credentials(b.done())) == "u4\r\nu5\r\n");
    ConvBuilder c;
    for (int i = 0; i < 3; ++i) c.from("login: ").to("u" + std::to_string(i) + "\r\n");
    CHECK(requests_of(CredentialFilter({"ogin:"}, 1).apply(c.done())) == "u1\r\nu2\r\n");
  }

  TEST_CASE("request log concatenates requests") {
    auto log = to_request_log(ConvBuilder("x", "203.0.113.9:1000").to("ls\r\n").from("bin\r\n").to("ps\r\n").done());
    REQUIRE(log);
    CHECK(log->payload == "ls\r\nps\r\n");
    CHECK(log->source_host == "203.0.113.9");
    CHECK(log->session_ids == std::vector<std::string>{"x"});
    CHECK_FALSE(to_request_log(ConvBuilder().from("login: ").done()));
  }

  TEST_CASE("response bytes never reach the payload") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      ConvBuilder b;
      Bytes expected;
      for (int k = 0; k < 12; ++k) {
        if (rng() % 2) {
          // responses drawn from upper-case letters only
          Bytes r;
          for (int i = 0; i < 5; ++i) r.push_back(static_cast<char>('A' + rng() % 26));
          b.from(r);
        } else {
          Bytes q;
          for (int i = 0; i < 4; ++i) q.push_back(static_cast<char>('a' + rng() % 26));
          q += "\r\n";
          b.to(q);
          expected += q;
        }
      }
      const auto log = distill(b.done(), CredentialFilter());
      CHECK((log ? log->payload : Bytes()) == expected);
    }
  }

  TEST_CASE("dedup keeps the earliest and merges session ids") {
    std::vector<RequestLog> logs;
    for (int i = 0; i < 30; ++i) logs.push_back(log_of("s" + std::to_string(i), "h", "same", 100 - i));
    const auto m = build_corpus(logs);
    REQUIRE(m.logs.size() == 1);
    CHECK(m.logs[0].session_ids.size() == 30);
    CHECK(m.logs[0].log_id == "s29");
  }

  TEST_CASE("per-host cap keeps the earliest") {
    std::vector<RequestLog> logs;
    for (int i = 0; i < 25; ++i) logs.push_back(log_of("s" + std::to_string(i), "h", "p" + std::to_string(i), 25 - i));
    const auto m = build_corpus(logs, 20);
    REQUIRE(m.logs.size() == 20);
    for (const auto& l : m.logs) CHECK(l.started_at <= at(20));
  }

  TEST_CASE("three hosts with ten distinct logs each") {
    std::vector<RequestLog> logs;
    for (int h = 0; h < 3; ++h)
      for (int i = 0; i < 10; ++i)
        logs.push_back(log_of(fmt::format("{}-{}", h, i), "h" + std::to_string(h), fmt::format("p{}{}", h, i), i));
    const auto m = build_corpus(logs);
    CHECK(m.logs.size() == 30);
    CHECK(build_corpus(logs).logs == m.logs);
  }

  TEST_CASE("dedup off keeps duplicates") {
    std::vector<RequestLog> logs = {log_of("a", "h", "x", 0), log_of("b", "h", "x", 1)};
    CHECK(build_corpus(logs, 20, false).logs.size() == 2);
  }

  TEST_CASE("simulated loader session starts with its first command") {
    const auto pb = builtin_playbooks().front();
    const auto corpus = generate({pb}, 1, 1, 42);
    const auto log = distill(corpus.conversations.front(), CredentialFilter());
    REQUIRE(log);
    // The first two initialization commands may be swapped.
    const bool starts_with_init = log->payload.rfind("enable", 0) == 0 || log->payload.rfind("system", 0) == 0;
    CHECK(starts_with_init);
  }

  TEST_CASE("corpus file round trip") {
    const std::vector<RequestLog> logs = {log_of("a", "h", Bytes("x\0\xff", 3), 0), log_of("b", "g", "y", 1)};
    const auto path = std::filesystem::temp_directory_path() / "lm-corpus.jsonl";
    write_corpus(path, logs);
    CHECK(read_corpus(path) == logs);
  }
}

TEST_SUITE("session_store") {
  TEST_CASE("conversation json uses the documented field names") {
    auto c = ConvBuilder().to(Bytes("\xff\xfb\x01", 3)).done();
    const auto j = to_json(c);
    for (const char* f : {"session_id", "peer_addr", "local_port", "started_at", "ended_at", "origin_tag", "messages"})
      CHECK(j.contains(f));
    CHECK(j["messages"][0].contains("payload_b64"));
    CHECK(j["messages"][0]["direction"] == "to_honeypot");
    CHECK(conversation_from_json(j) == c);
  }

  TEST_CASE("empty store exports nothing") {
    std::istringstream in("");
    const auto r = export_sessions(in);
    CHECK(r.sessions.empty());
    CHECK(r.corrupt_records == 0);
  }

  TEST_CASE("thousand sessions round trip through the file") {
    std::mt19937_64 rng(41);
    const auto path = std::filesystem::temp_directory_path() / "lm-store.jsonl";
    std::filesystem::remove(path);
    std::vector<Conversation> written;
    {
      JsonlSessionStore store(path);
      for (int i = 0; i < 1000; ++i) {
        ConvBuilder b("s" + std::to_string(i), fmt::format("192.0.2.{}:{}", i % 200, 1000 + i));
        b.c.started_at = at(static_cast<int>(rng() % 100000));
        b.clock = static_cast<int>((b.c.started_at - at(0)) / std::chrono::seconds(1));
        Bytes p;
        for (std::uint64_t k = 0; k < rng() % 40; ++k) p.push_back(static_cast<char>(rng() % 256));
        if (!p.empty()) b.to(p);
        b.from("# ");
        b.c.origin_tag = i % 3 ? OriginTag::kWild : OriginTag::kControlGroup;
        written.push_back(b.done());
        store.append(written.back());
      }
    }
    auto r = export_sessions(path);
    CHECK(r.corrupt_records == 0);
    REQUIRE(r.sessions.size() == 1000);
    for (std::size_t i = 1; i < r.sessions.size(); ++i) CHECK(r.sessions[i - 1].started_at <= r.sessions[i].started_at);
    auto by_id = [](const Conversation& a, const Conversation& b) { return a.session_id < b.session_id; };
    std::sort(r.sessions.begin(), r.sessions.end(), by_id);
    std::sort(written.begin(), written.end(), by_id);
    CHECK(r.sessions == written);

    SessionFilter control;
    control.origin_tag = OriginTag::kControlGroup;
    const auto only = export_sessions(path, control);
    CHECK(only.sessions.size() == 334);
    for (const auto& c : only.sessions) CHECK(c.origin_tag == OriginTag::kControlGroup);

    SessionFilter host;
    host.peer_host = "192.0.2.5";
    CHECK(export_sessions(path, host).sessions.size() == 5);
  }

  TEST_CASE("corrupt lines are skipped and counted") {
    const auto good = to_jsonl(ConvBuilder().to("ls\r\n").done());
    std::istringstream in(good + "\n{not json\n" + R"({"session_id":"x"})" + "\n" + good + "\n");
    const auto r = export_sessions(in);
    CHECK(r.sessions.size() == 2);
    CHECK(r.corrupt_records == 2);
  }

  TEST_CASE("time window filter is half open") {
    std::vector<Conversation> cs;
    for (int i = 0; i < 5; ++i) {
      ConvBuilder b("s" + std::to_string(i));
      b.c.started_at = at(i * 10);
      cs.push_back(b.done());
      cs.back().ended_at = cs.back().started_at;
    }
    std::ostringstream out;
    for (const auto& c : cs) out << to_jsonl(c) << '\n';
    SessionFilter f;
    f.started_after = at(10);
    f.started_before = at(30);
    std::istringstream in(out.str());
    const auto r = export_sessions(in, f);
    REQUIRE(r.sessions.size() == 2);
    CHECK(r.sessions[0].session_id == "s1");
    CHECK(r.sessions[1].session_id == "s2");
  }
}
