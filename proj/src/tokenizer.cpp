#include "loadermine/tokenizer.hpp"

#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

using nlohmann::json;

std::string_view to_string(ByteClass k) {
  switch (k) {
    case ByteClass::kAlnum: return "ALNUM";
    case ByteClass::kSym: return "SYM";
    case ByteClass::kUnprint: return "UNPRINT";
  }
  return "UNPRINT";
}

ByteClass parse_byte_class(std::string_view s) {
  if (s == "ALNUM") return ByteClass::kAlnum;
  if (s == "SYM") return ByteClass::kSym;
  if (s == "UNPRINT") return ByteClass::kUnprint;
  throw FormatError(fmt::format("unknown byte class '{}'", s));
}

ByteClassTable::ByteClassTable(bool tab_is_symbol) {
  for (int b = 0; b < 256; ++b) {
    ByteClass k = ByteClass::kUnprint;
    if ((b >= '0' && b <= '9') || (b >= 'A' && b <= 'Z') || (b >= 'a' && b <= 'z')) {
      k = ByteClass::kAlnum;
    } else if (b >= 0x20 && b <= 0x7E) {
      k = ByteClass::kSym;
    }
    table_[static_cast<std::size_t>(b)] = k;
  }
  if (tab_is_symbol) table_['\t'] = ByteClass::kSym;
}

std::vector<Token> tokenize(BytesView payload, const ByteClassTable& table) {
  std::vector<Token> tokens;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= payload.size(); ++i) {
    if (i == payload.size() ||
        table[static_cast<unsigned char>(payload[i])] != table[static_cast<unsigned char>(payload[start])]) {
      tokens.push_back({Bytes(payload.substr(start, i - start)),
                        table[static_cast<unsigned char>(payload[start])]});
      start = i;
    }
  }
  return tokens;
}

Bytes detokenize(const std::vector<Token>& tokens) {
  Bytes out;
  for (const auto& t : tokens) out += t.bytes;
  return out;
}

json to_json(const TokenSequence& seq) {
  json tokens = json::array();
  for (const auto& t : seq.tokens) tokens.push_back({{"b", base64_encode(t.bytes)}, {"k", to_string(t.klass)}});
  return {{"log_id", seq.log_id}, {"tokens", std::move(tokens)}};
}

TokenSequence token_sequence_from_json(const json& j) {
  try {
    TokenSequence seq;
    seq.log_id = j.at("log_id").get<std::string>();
    for (const auto& t : j.at("tokens")) {
      seq.tokens.push_back({base64_decode(t.at("b").get<std::string>()),
                            parse_byte_class(t.at("k").get<std::string>())});
    }
    return seq;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed token sequence: {}", e.what()));
  }
}

void write_token_sequences(const std::filesystem::path& path, const std::vector<TokenSequence>& seqs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (const auto& s : seqs) out << to_json(s).dump() << '\n';
}

std::vector<TokenSequence> read_token_sequences(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::vector<TokenSequence> seqs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      seqs.push_back(token_sequence_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return seqs;
}

}  // namespace loadermine
