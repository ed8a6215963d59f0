#pragma once

#include "loadermine/common.hpp"

#include <cstddef>
#include <cstdint>

namespace loadermine::telnet {

inline constexpr unsigned char kIac = 0xFF;
inline constexpr unsigned char kSe = 0xF0;
inline constexpr unsigned char kSb = 0xFA;
inline constexpr unsigned char kWill = 0xFB;
inline constexpr unsigned char kWont = 0xFC;
inline constexpr unsigned char kDo = 0xFD;
inline constexpr unsigned char kDont = 0xFE;

// Streaming separator of telnet data from command sequences (RFC 854 framing).
// Sequences may span feed() calls. Command bytes are never interpreted.
class Decoder {
 public:
  struct Chunk {
    Bytes data;      // data bytes, IAC IAC unescaped to 0xFF
    Bytes commands;  // raw bytes of every complete command sequence, in order
  };

  Chunk feed(BytesView input);

  // Bytes of an incomplete command sequence held since the last feed().
  std::size_t pending() const { return pending_.size(); }
  void reset() { state_ = State::kData; pending_.clear(); }

 private:
  enum class State : std::uint8_t { kData, kIac, kOption, kSub, kSubIac };

  State state_ = State::kData;
  Bytes pending_;
};

// Drops every command sequence from a complete buffer. `dangling` receives
// the number of bytes of a truncated trailing sequence.
Bytes strip(BytesView input, std::size_t* dangling = nullptr);

}  // namespace loadermine::telnet
