#include "loadermine/telnet.hpp"

namespace loadermine::telnet {

Decoder::Chunk Decoder::feed(BytesView input) {
  Chunk out;
  for (const char ch : input) {
    const auto b = static_cast<unsigned char>(ch);
    switch (state_) {
      case State::kData:
        if (b == kIac) {
          pending_.assign(1, ch);
          state_ = State::kIac;
        } else {
          out.data.push_back(ch);
        }
        break;
      case State::kIac:
        if (b == kIac) {
          out.data.push_back(ch);
          pending_.clear();
          state_ = State::kData;
        } else if (b == kSb) {
          pending_.push_back(ch);
          state_ = State::kSub;
        } else if (b >= kWill) {
          pending_.push_back(ch);
          state_ = State::kOption;
        } else if (b >= kSe) {
          pending_.push_back(ch);
          out.commands += pending_;
          pending_.clear();
          state_ = State::kData;
        } else {
          // IAC before a non-command byte: drop the IAC, keep the byte.
          out.data.push_back(ch);
          pending_.clear();
          state_ = State::kData;
        }
        break;
      case State::kOption:
        pending_.push_back(ch);
        out.commands += pending_;
        pending_.clear();
        state_ = State::kData;
        break;
      case State::kSub:
        pending_.push_back(ch);
        if (b == kIac) state_ = State::kSubIac;
        break;
      case State::kSubIac:
        pending_.push_back(ch);
        if (b == kSe) {
          out.commands += pending_;
          pending_.clear();
          state_ = State::kData;
        } else {
          state_ = State::kSub;
        }
        break;
    }
  }
  return out;
}

Bytes strip(BytesView input, std::size_t* dangling) {
  Decoder decoder;
  auto chunk = decoder.feed(input);
  if (dangling != nullptr) *dangling = decoder.pending();
  return std::move(chunk.data);
}

}  // namespace loadermine::telnet
