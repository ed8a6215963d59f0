#include "loadermine/vectorizer.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

using nlohmann::json;

std::string Vocabulary::key_of(const std::vector<const Bytes*>& gram) {
  std::string key = std::to_string(gram.size());
  key.push_back(':');
  for (std::size_t i = 0; i < gram.size(); ++i) {
    if (i > 0) key.push_back(',');
    key += base64_encode(*gram[i]);
  }
  return key;
}

std::int64_t Vocabulary::index_of(const std::string& key) const {
  const auto it = index_.find(key);
  return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::size_t Vocabulary::add(const std::string& key, int order) {
  auto [it, inserted] = index_.emplace(key, keys_.size());
  if (inserted) {
    keys_.push_back(key);
    orders_.push_back(order);
  }
  return it->second;
}

std::vector<double> Vocabulary::dimension_scales(const std::array<double, 3>& order_scale) const {
  std::vector<double> scales(orders_.size());
  for (std::size_t i = 0; i < orders_.size(); ++i) scales[i] = order_scale.at(orders_[i] - 1);
  return scales;
}

std::uint64_t FeatureVector::count_at(std::uint32_t index) const {
  const auto it = std::lower_bound(counts.begin(), counts.end(), std::make_pair(index, std::uint32_t{0}));
  return it != counts.end() && it->first == index ? it->second : 0;
}

Vocabulary fit_vocabulary(const std::vector<TokenSequence>& corpus) {
  Vocabulary vocab;
  for (const auto& seq : corpus) {
    for_each_gram(seq.tokens, [&](int n, const std::vector<const Bytes*>& gram) {
      vocab.add(Vocabulary::key_of(gram), n);
    });
  }
  return vocab;
}

FeatureVector vectorize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::map<std::uint32_t, std::uint32_t> counts;
  for_each_gram(seq.tokens, [&](int, const std::vector<const Bytes*>& gram) {
    const auto index = vocab.index_of(Vocabulary::key_of(gram));
    if (index >= 0) ++counts[static_cast<std::uint32_t>(index)];
  });
  FeatureVector v;
  v.log_id = seq.log_id;
  v.dim = vocab.dim_total();
  v.counts.assign(counts.begin(), counts.end());
  return v;
}

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  json j = json::object();
  for (std::size_t i = 0; i < vocab.dim_total(); ++i) j[vocab.key_at(i)] = i;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << j.dump() << '\n';
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
  std::vector<std::string> keys(j.size());
  for (const auto& [key, value] : j.items()) {
    const auto index = value.get<std::size_t>();
    if (index >= keys.size() || !keys[index].empty()) {
      throw FormatError(fmt::format("{}: vocabulary indices are not dense", path.string()));
    }
    keys[index] = key;
  }
  Vocabulary vocab;
  for (const auto& key : keys) {
    const auto colon = key.find(':');
    if (colon == std::string::npos) throw FormatError(fmt::format("bad vocabulary key '{}'", key));
    vocab.add(key, std::stoi(key.substr(0, colon)));
  }
  return vocab;
}

namespace {

static_assert(std::endian::native == std::endian::little, "vectors.bin IO assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'M', 'V', 'E', 'C', '0', '0', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) throw FormatError("truncated vectors file");
  return value;
}

}  // namespace

void write_vectors(const std::filesystem::path& path, const std::vector<FeatureVector>& vectors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, vectors.empty() ? 0 : vectors.front().dim);
  put<std::uint64_t>(out, vectors.size());
  for (const auto& v : vectors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v.log_id.size()));
    out.write(v.log_id.data(), static_cast<std::streamsize>(v.log_id.size()));
    put<std::uint64_t>(out, v.counts.size());
    for (const auto& [index, count] : v.counts) {
      put(out, index);
      put(out, count);
    }
  }
}

std::vector<FeatureVector> read_vectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic)) {
    throw FormatError(fmt::format("{} is not a vectors file", path.string()));
  }
  const auto dim = get<std::uint64_t>(in);
  const auto count = get<std::uint64_t>(in);
  std::vector<FeatureVector> vectors;
  vectors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureVector v;
    v.dim = dim;
    v.log_id.resize(get<std::uint32_t>(in));
    if (!in.read(v.log_id.data(), static_cast<std::streamsize>(v.log_id.size()))) {
      throw FormatError("truncated vectors file");
    }
    const auto nnz = get<std::uint64_t>(in);
    v.counts.reserve(nnz);
    for (std::uint64_t k = 0; k < nnz; ++k) {
      const auto index = get<std::uint32_t>(in);
      const auto c = get<std::uint32_t>(in);
      if (index >= dim) throw FormatError("vector index out of range");
      v.counts.emplace_back(index, c);
    }
    vectors.push_back(std::move(v));
  }
  return vectors;
}

}  // namespace loadermine
