#pragma once

#include "loadermine/conversation.hpp"
#include "loadermine/fake_shell.hpp"
#include "loadermine/family.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace loadermine {

// How query tokens ({Q}) are drawn.
enum class QueryMode : std::uint8_t {
  kNone,          // the playbook sends no query command
  kHostWord,      // one word per host from query_words
  kFixed,         // always query_words.front()
  kSessionAlnum,  // fresh random alphanumerics per session
  kSessionEscaped // fresh "\xNN" escaped random letters per session
};

struct MutationSpec {
  QueryMode query_mode = QueryMode::kNone;
  std::size_t query_length = 6;
  std::vector<std::string> query_words;
  std::vector<std::string> identity_words;  // {ID}, one per host
  std::size_t file_name_length = 8;         // {F}, fresh per session
  std::vector<std::string> swappable_phases;
};

// The six loader functions, in the order they run.
inline constexpr std::array<std::string_view, 6> kPhaseNames = {
    "initialize", "get-working-directory", "monopolize", "test-environment", "drop-and-run", "query-token"};

struct Phase {
  std::string name;
  std::vector<std::string> commands;
};

// Command templates may use {Q} query token, {ID} identity word, {D4} four
// random digits, {F} random file name, {IP} the loader host's address.
// The query-token phase holds the command appended to every line with "; ".
struct Playbook {
  std::string family_name;
  FamilyKind kind = FamilyKind::kLoader;
  std::vector<Phase> phases;
  MutationSpec mutation;

  const Phase* phase(std::string_view name) const;
};

struct SyntheticHost {
  std::string host_id;  // documentation-range IPv4
  std::string family_name;
  std::uint64_t seed = 0;
  std::size_t sessions_per_host = 1;
};

std::vector<Playbook> builtin_playbooks();

// Command lines (without line terminators) of one session.
std::vector<std::string> render_session(const Playbook& playbook, const SyntheticHost& host, std::size_t session_index);

struct SessionLabel {
  std::string session_id;
  std::string host;
  std::string family;
};

struct GeneratedCorpus {
  std::vector<Conversation> conversations;  // ordered by started_at
  std::vector<SessionLabel> labels;
};

// Throws std::invalid_argument on zero counts or more hosts than the
// documentation ranges hold.
GeneratedCorpus generate(const std::vector<Playbook>& playbooks, std::size_t hosts_per_family,
                         std::size_t sessions_per_host, std::uint64_t seed, const ShellProfile& profile = {});

// The attacker side of a session as the simulator sends it: negotiation
// reply, username, password, then each command line with "\r\n".
std::vector<Bytes> session_requests(const Playbook& playbook, const SyntheticHost& host, std::size_t session_index);

void write_labels(const std::filesystem::path& path, const std::vector<SessionLabel>& labels);
std::vector<SessionLabel> read_labels(const std::filesystem::path& path);

}  // namespace loadermine
