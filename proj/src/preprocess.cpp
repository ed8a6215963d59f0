#include "loadermine/preprocess.hpp"

#include "loadermine/telnet.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

using nlohmann::json;

StripResult strip_protocol(const Conversation& conv) {
  StripResult result;
  result.conversation = conv;
  result.conversation.messages.clear();
  telnet::Decoder to_decoder;
  telnet::Decoder from_decoder;
  for (const auto& m : conv.messages) {
    auto& decoder = m.direction == Direction::kToHoneypot ? to_decoder : from_decoder;
    auto chunk = decoder.feed(m.payload);
    if (chunk.data.empty()) continue;
    result.conversation.messages.push_back({m.direction, std::move(chunk.data), m.at});
  }
  result.dangling_bytes = to_decoder.pending() + from_decoder.pending();
  return result;
}

CredentialFilter::CredentialFilter() : CredentialFilter({"ogin:", "sername:", "assword:"}) {}

CredentialFilter::CredentialFilter(const std::vector<std::string>& patterns, int max_replies)
    : max_replies_(max_replies) {
  for (const auto& p : patterns) patterns_.emplace_back(p, std::regex::icase);
}

bool CredentialFilter::is_prompt(const std::string& response_block) const {
  // Only the unterminated last line counts as a prompt ("Last login: ..." banners do not).
  const auto nl = response_block.find_last_of('\n');
  const std::string tail = nl == std::string::npos ? response_block : response_block.substr(nl + 1);
  return std::any_of(patterns_.begin(), patterns_.end(),
                     [&](const std::regex& re) { return std::regex_search(tail, re); });
}

Conversation CredentialFilter::apply(const Conversation& conv) const {
  Conversation out = conv;
  out.messages.clear();

  enum class Mode { kPass, kReply, kAfterCr };
  Mode mode = Mode::kPass;
  int removed = 0;
  std::string response;
  bool prev_from = false;

  for (const auto& m : conv.messages) {
    if (m.direction == Direction::kFromHoneypot) {
      if (mode != Mode::kPass) {
        // The reply (possibly empty) ended when the honeypot spoke again.
        if (mode == Mode::kReply) ++removed;
        mode = Mode::kPass;
      }
      if (prev_from) response += m.payload;
      else response = m.payload;
      prev_from = true;
      out.messages.push_back(m);
      continue;
    }
    prev_from = false;

    if (mode == Mode::kPass && !response.empty() && removed < max_replies_ && is_prompt(response)) {
      mode = Mode::kReply;
    }
    response.clear();

    std::size_t pos = 0;
    const Bytes& p = m.payload;
    while (pos < p.size() && mode != Mode::kPass) {
      const char c = p[pos];
      if (mode == Mode::kAfterCr) {
        if (c == '\n' || c == '\0') ++pos;
        mode = Mode::kPass;
        break;
      }
      ++pos;
      if (c == '\n') {
        ++removed;
        mode = Mode::kPass;
      } else if (c == '\r') {
        ++removed;
        mode = Mode::kAfterCr;
      }
    }
    if (pos < p.size()) out.messages.push_back({m.direction, p.substr(pos), m.at});
  }
  return out;
}

std::optional<RequestLog> to_request_log(const Conversation& conv) {
  std::vector<const Message*> requests;
  for (const auto& m : conv.messages) {
    if (m.direction == Direction::kToHoneypot) requests.push_back(&m);
  }
  std::stable_sort(requests.begin(), requests.end(),
                   [](const Message* a, const Message* b) { return a->at < b->at; });
  RequestLog log;
  for (const auto* m : requests) log.payload += m->payload;
  if (log.payload.empty()) return std::nullopt;
  log.log_id = conv.session_id;
  log.source_host = host_of(conv.peer_addr);
  log.session_ids = {conv.session_id};
  log.origin_tag = conv.origin_tag;
  log.started_at = conv.started_at;
  return log;
}

std::optional<RequestLog> distill(const Conversation& conv, const CredentialFilter& filter) {
  return to_request_log(filter.apply(strip_protocol(conv).conversation));
}

CorpusManifest build_corpus(std::vector<RequestLog> logs, std::size_t per_host_cap, bool dedup) {
  CorpusManifest manifest;
  manifest.per_host_cap = per_host_cap;
  manifest.dedup = dedup;

  std::stable_sort(logs.begin(), logs.end(),
                   [](const RequestLog& a, const RequestLog& b) { return a.started_at < b.started_at; });

  std::vector<RequestLog> unique;
  if (dedup) {
    std::unordered_map<Bytes, std::size_t> first_by_payload;
    for (auto& log : logs) {
      auto [it, inserted] = first_by_payload.emplace(log.payload, unique.size());
      if (inserted) {
        unique.push_back(std::move(log));
      } else {
        auto& kept = unique[it->second].session_ids;
        kept.insert(kept.end(), log.session_ids.begin(), log.session_ids.end());
      }
    }
  } else {
    unique = std::move(logs);
  }

  std::map<std::string, std::size_t> per_host;
  for (auto& log : unique) {
    if (per_host[log.source_host]++ < per_host_cap) manifest.logs.push_back(std::move(log));
  }
  return manifest;
}

json to_json(const RequestLog& log) {
  return {{"log_id", log.log_id},
          {"source_host", log.source_host},
          {"payload_b64", base64_encode(log.payload)},
          {"session_ids", log.session_ids},
          {"origin_tag", to_string(log.origin_tag)},
          {"started_at", format_rfc3339(log.started_at)}};
}

RequestLog request_log_from_json(const json& j) {
  try {
    RequestLog log;
    log.log_id = j.at("log_id").get<std::string>();
    log.source_host = j.at("source_host").get<std::string>();
    log.payload = base64_decode(j.at("payload_b64").get<std::string>());
    log.session_ids = j.at("session_ids").get<std::vector<std::string>>();
    log.origin_tag = parse_origin_tag(j.at("origin_tag").get<std::string>());
    if (j.contains("started_at")) log.started_at = parse_rfc3339(j.at("started_at").get<std::string>());
    return log;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed request log: {}", e.what()));
  }
}

void write_corpus(const std::filesystem::path& path, const std::vector<RequestLog>& logs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (const auto& log : logs) out << to_json(log).dump() << '\n';
}

std::vector<RequestLog> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::vector<RequestLog> logs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      logs.push_back(request_log_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return logs;
}

}  // namespace loadermine
