#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace loadermine {

// Raw byte strings are carried in std::string; no text encoding is implied.
using Bytes = std::string;
using BytesView = std::string_view;

using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;

Timestamp now_utc();

// RFC 3339, UTC, always six fractional digits: 2021-12-20T10:11:12.000123Z
std::string format_rfc3339(Timestamp t);
Timestamp parse_rfc3339(std::string_view text);

std::string base64_encode(BytesView data);
Bytes base64_decode(std::string_view text);

std::string sha256_hex(BytesView data);

// "203.0.113.5:4312" -> "203.0.113.5", "[2001:db8::1]:23" -> "2001:db8::1"
std::string host_of(std::string_view peer_addr);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace loadermine
