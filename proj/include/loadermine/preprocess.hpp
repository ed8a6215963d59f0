#pragma once

#include "loadermine/conversation.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <regex>
#include <vector>

namespace loadermine {

struct RequestLog {
  std::string log_id;
  std::string source_host;
  Bytes payload;
  std::vector<std::string> session_ids;
  OriginTag origin_tag = OriginTag::kWild;
  Timestamp started_at{};

  bool operator==(const RequestLog&) const = default;
};

struct CorpusManifest {
  std::vector<RequestLog> logs;
  std::size_t per_host_cap = 20;
  bool dedup = true;
};

struct StripResult {
  Conversation conversation;
  std::size_t dangling_bytes = 0;  // truncated IAC sequences dropped at end of stream
};

// Removes every telnet command sequence from both directions. Each direction is
// decoded as one stream, so a sequence split across reads is still recognized.
// Messages left empty are dropped.
StripResult strip_protocol(const Conversation& conv);

class CredentialFilter {
 public:
  static constexpr int kDefaultMaxReplies = 4;

  // Default patterns: "ogin:", "sername:", "assword:" (case-insensitive).
  CredentialFilter();
  explicit CredentialFilter(const std::vector<std::string>& patterns, int max_replies = kDefaultMaxReplies);

  // Drops the attacker's reply line to each login/password prompt.
  Conversation apply(const Conversation& conv) const;

 private:
  bool is_prompt(const std::string& response_block) const;

  std::vector<std::regex> patterns_;
  int max_replies_;
};

inline Conversation strip_credentials(const Conversation& conv) { return CredentialFilter().apply(conv); }

std::optional<RequestLog> to_request_log(const Conversation& conv);

// strip_protocol, credential filtering, then to_request_log.
std::optional<RequestLog> distill(const Conversation& conv, const CredentialFilter& filter);

CorpusManifest build_corpus(std::vector<RequestLog> logs, std::size_t per_host_cap = 20, bool dedup = true);

nlohmann::json to_json(const RequestLog& log);
RequestLog request_log_from_json(const nlohmann::json& j);

void write_corpus(const std::filesystem::path& path, const std::vector<RequestLog>& logs);
std::vector<RequestLog> read_corpus(const std::filesystem::path& path);

}  // namespace loadermine
