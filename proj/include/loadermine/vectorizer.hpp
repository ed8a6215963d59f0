#pragma once

#include "loadermine/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace loadermine {

inline constexpr int kMaxGramOrder = 3;

// Joint 1/2/3-gram vocabulary over token bytes. Indices are dense and assigned
// in first-seen corpus order; for each log, unigrams are visited before
// bigrams before trigrams.
class Vocabulary {
 public:
  // Canonical key "n:b64,b64,..." for a gram of token bytes.
  static std::string key_of(const std::vector<const Bytes*>& gram);

  std::size_t dim_total() const { return keys_.size(); }
  // Returns -1 when the gram is absent.
  std::int64_t index_of(const std::string& key) const;
  const std::string& key_at(std::size_t index) const { return keys_.at(index); }
  int order_at(std::size_t index) const { return orders_.at(index); }

  // Per-dimension multipliers from per-order scales (unigram, bigram, trigram).
  std::vector<double> dimension_scales(const std::array<double, 3>& order_scale) const;

  std::size_t add(const std::string& key, int order);

  bool operator==(const Vocabulary& other) const { return keys_ == other.keys_; }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> keys_;
  std::vector<int> orders_;
};

struct FeatureVector {
  std::string log_id;
  std::size_t dim = 0;  // dim_total of the vocabulary it was built against
  std::vector<std::pair<std::uint32_t, std::uint32_t>> counts;  // (index, count), index ascending

  std::uint64_t count_at(std::uint32_t index) const;
  bool operator==(const FeatureVector&) const = default;
};

// Calls fn(order, gram) for every window of size 1..3, unigrams first.
template <typename Fn>
void for_each_gram(const std::vector<Token>& tokens, Fn&& fn) {
  std::vector<const Bytes*> gram;
  for (int n = 1; n <= kMaxGramOrder; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      gram.clear();
      for (int k = 0; k < n; ++k) gram.push_back(&tokens[i + k].bytes);
      fn(n, gram);
    }
  }
}

Vocabulary fit_vocabulary(const std::vector<TokenSequence>& corpus);
FeatureVector vectorize(const TokenSequence& seq, const Vocabulary& vocab);

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocabulary(const std::filesystem::path& path);

// Binary layout, little-endian: "LMVEC001", u64 dim, u64 count, then per vector
// u32 id length, id bytes, u64 nnz, nnz x (u32 index, u32 count).
void write_vectors(const std::filesystem::path& path, const std::vector<FeatureVector>& vectors);
std::vector<FeatureVector> read_vectors(const std::filesystem::path& path);

}  // namespace loadermine
