#pragma once

#include "loadermine/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace loadermine {

enum class Direction : std::uint8_t { kToHoneypot, kFromHoneypot };
enum class OriginTag : std::uint8_t { kWild, kControlGroup };

std::string_view to_string(Direction d);
std::string_view to_string(OriginTag t);
Direction parse_direction(std::string_view s);
OriginTag parse_origin_tag(std::string_view s);

struct Message {
  Direction direction = Direction::kToHoneypot;
  Bytes payload;
  Timestamp at{};

  bool operator==(const Message&) const = default;
};

struct Conversation {
  std::string session_id;
  std::string peer_addr;  // "ip:port"
  int local_port = 0;
  Timestamp started_at{};
  Timestamp ended_at{};
  std::vector<Message> messages;
  OriginTag origin_tag = OriginTag::kWild;

  // Set by the proxy: the upstream was unreachable, or the byte cap was hit.
  bool upstream_closed = false;
  bool truncated = false;

  bool operator==(const Conversation&) const = default;
};

// Throws FormatError when a required field is missing or malformed.
nlohmann::json to_json(const Conversation& c);
Conversation conversation_from_json(const nlohmann::json& j);

// One JSON Lines record, without the trailing newline.
std::string to_jsonl(const Conversation& c);

}  // namespace loadermine
