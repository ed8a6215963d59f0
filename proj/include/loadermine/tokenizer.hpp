#pragma once

#include "loadermine/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace loadermine {

enum class ByteClass : std::uint8_t { kAlnum, kSym, kUnprint };

std::string_view to_string(ByteClass k);
ByteClass parse_byte_class(std::string_view s);

// ALNUM: [0-9A-Za-z]. SYM: space and printable punctuation. UNPRINT: controls,
// DEL and every byte >= 0x80. Tab is UNPRINT unless `tab_is_symbol` is set.
class ByteClassTable {
 public:
  explicit ByteClassTable(bool tab_is_symbol = false);
  ByteClass operator[](unsigned char b) const { return table_[b]; }

 private:
  std::array<ByteClass, 256> table_{};
};

struct Token {
  Bytes bytes;
  ByteClass klass = ByteClass::kUnprint;

  bool operator==(const Token&) const = default;
};

struct TokenSequence {
  std::string log_id;
  std::vector<Token> tokens;
};

// Maximal runs of same-class bytes, in order. Lossless.
std::vector<Token> tokenize(BytesView payload, const ByteClassTable& table = ByteClassTable());
Bytes detokenize(const std::vector<Token>& tokens);

nlohmann::json to_json(const TokenSequence& seq);
TokenSequence token_sequence_from_json(const nlohmann::json& j);

void write_token_sequences(const std::filesystem::path& path, const std::vector<TokenSequence>& seqs);
std::vector<TokenSequence> read_token_sequences(const std::filesystem::path& path);

}  // namespace loadermine
