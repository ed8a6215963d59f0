#include "loadermine/conversation.hpp"

#include <nlohmann/json.hpp>

#include <fmt/format.h>

namespace loadermine {

using nlohmann::json;

std::string_view to_string(Direction d) {
  return d == Direction::kToHoneypot ? "to_honeypot" : "from_honeypot";
}

std::string_view to_string(OriginTag t) {
  return t == OriginTag::kWild ? "wild" : "control_group";
}

Direction parse_direction(std::string_view s) {
  if (s == "to_honeypot") return Direction::kToHoneypot;
  if (s == "from_honeypot") return Direction::kFromHoneypot;
  throw FormatError(fmt::format("unknown direction '{}'", s));
}

OriginTag parse_origin_tag(std::string_view s) {
  if (s == "wild") return OriginTag::kWild;
  if (s == "control_group") return OriginTag::kControlGroup;
  throw FormatError(fmt::format("unknown origin_tag '{}'", s));
}

json to_json(const Conversation& c) {
  json messages = json::array();
  for (const auto& m : c.messages) {
    messages.push_back({{"direction", to_string(m.direction)},
                        {"payload_b64", base64_encode(m.payload)},
                        {"at", format_rfc3339(m.at)}});
  }
  json j = {{"session_id", c.session_id},
            {"peer_addr", c.peer_addr},
            {"local_port", c.local_port},
            {"started_at", format_rfc3339(c.started_at)},
            {"ended_at", format_rfc3339(c.ended_at)},
            {"origin_tag", to_string(c.origin_tag)},
            {"messages", std::move(messages)}};
  if (c.upstream_closed || c.truncated) {
    json flags = json::array();
    if (c.upstream_closed) flags.push_back("upstream_closed");
    if (c.truncated) flags.push_back("truncated");
    j["flags"] = std::move(flags);
  }
  return j;
}

Conversation conversation_from_json(const json& j) {
  try {
    Conversation c;
    c.session_id = j.at("session_id").get<std::string>();
    c.peer_addr = j.at("peer_addr").get<std::string>();
    c.local_port = j.at("local_port").get<int>();
    c.started_at = parse_rfc3339(j.at("started_at").get<std::string>());
    c.ended_at = parse_rfc3339(j.at("ended_at").get<std::string>());
    c.origin_tag = parse_origin_tag(j.at("origin_tag").get<std::string>());
    for (const auto& m : j.at("messages")) {
      Message msg;
      msg.direction = parse_direction(m.at("direction").get<std::string>());
      msg.payload = base64_decode(m.at("payload_b64").get<std::string>());
      msg.at = parse_rfc3339(m.at("at").get<std::string>());
      c.messages.push_back(std::move(msg));
    }
    if (auto it = j.find("flags"); it != j.end()) {
      for (const auto& f : *it) {
        const auto name = f.get<std::string>();
        if (name == "upstream_closed") c.upstream_closed = true;
        else if (name == "truncated") c.truncated = true;
      }
    }
    if (c.ended_at < c.started_at) throw FormatError("ended_at precedes started_at");
    return c;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed conversation: {}", e.what()));
  }
}

std::string to_jsonl(const Conversation& c) { return to_json(c).dump(); }

}  // namespace loadermine
