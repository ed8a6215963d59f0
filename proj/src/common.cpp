#include "loadermine/common.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <charconv>
#include <fmt/format.h>

namespace loadermine {

Timestamp now_utc() {
  return std::chrono::time_point_cast<std::chrono::microseconds>(
      std::chrono::system_clock::now());
}

std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss tod{t - day};
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z",
                     static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()), tod.hours().count(),
                     tod.minutes().count(), tod.seconds().count(),
                     tod.subseconds().count());
}

namespace {

int read_int(std::string_view text, std::size_t pos, std::size_t len) {
  if (pos + len > text.size()) throw FormatError("timestamp too short");
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
  if (ec != std::errc{} || ptr != text.data() + pos + len) {
    throw FormatError(fmt::format("bad timestamp field in '{}'", text));
  }
  return value;
}

void expect_char(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) {
    throw FormatError(fmt::format("bad timestamp '{}'", text));
  }
}

}  // namespace

Timestamp parse_rfc3339(std::string_view text) {
  using namespace std::chrono;
  const int y = read_int(text, 0, 4);
  expect_char(text, 4, '-');
  const int mo = read_int(text, 5, 2);
  expect_char(text, 7, '-');
  const int d = read_int(text, 8, 2);
  if (text.size() < 11 || (text[10] != 'T' && text[10] != 't')) {
    throw FormatError(fmt::format("bad timestamp '{}'", text));
  }
  const int h = read_int(text, 11, 2);
  expect_char(text, 13, ':');
  const int mi = read_int(text, 14, 2);
  expect_char(text, 16, ':');
  const int s = read_int(text, 17, 2);

  std::size_t pos = 19;
  std::int64_t micros = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 6) micros = micros * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw FormatError(fmt::format("bad timestamp '{}'", text));
    for (int i = digits; i < 6; ++i) micros *= 10;
  }

  minutes offset{0};
  if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
    ++pos;
  } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    const int sign = text[pos] == '-' ? -1 : 1;
    const int oh = read_int(text, pos + 1, 2);
    expect_char(text, pos + 3, ':');
    const int om = read_int(text, pos + 4, 2);
    offset = minutes{sign * (oh * 60 + om)};
    pos += 6;
  } else {
    throw FormatError(fmt::format("timestamp '{}' lacks a UTC offset", text));
  }
  if (pos != text.size()) throw FormatError(fmt::format("trailing data in timestamp '{}'", text));

  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    throw FormatError(fmt::format("timestamp '{}' out of range", text));
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + microseconds{micros} - offset;
}

std::string base64_encode(BytesView data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(data.data()),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  if (text.empty()) return {};
  Bytes out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw FormatError("invalid base64");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(BytesView data) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  EVP_Digest(data.data(), data.size(), digest, nullptr, EVP_sha256(), nullptr);
  std::string hex;
  hex.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) hex += fmt::format("{:02x}", b);
  return hex;
}

std::string host_of(std::string_view peer_addr) {
  if (!peer_addr.empty() && peer_addr.front() == '[') {
    const auto close = peer_addr.find(']');
    if (close != std::string_view::npos) return std::string(peer_addr.substr(1, close - 1));
  }
  const auto colon = peer_addr.rfind(':');
  if (colon != std::string_view::npos && peer_addr.find(':') == colon) {
    return std::string(peer_addr.substr(0, colon));
  }
  return std::string(peer_addr);
}

}  // namespace loadermine
