#pragma once

#include "loadermine/cluster.hpp"
#include "loadermine/preprocess.hpp"
#include "loadermine/template.hpp"
#include "loadermine/tokenizer.hpp"
#include "loadermine/vectorizer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace loadermine {

struct PipelineConfig {
  std::vector<std::filesystem::path> inputs;  // session JSONL files
  std::filesystem::path out_dir = "artifacts";
  std::size_t per_host_cap = 20;
  bool dedup = true;
  double threshold = 60.0;
  AlignmentParams alignment;
  std::array<double, 3> order_scale = {1.0, 1.0, 1.0};
  bool tab_is_symbol = false;
  std::vector<std::string> prompt_patterns = {"ogin:", "sername:", "assword:"};
  int max_credential_replies = CredentialFilter::kDefaultMaxReplies;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  std::string hash() const;  // sha256 of the canonical JSON form
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline constexpr std::array<std::string_view, 7> kStageNames = {
    "preprocess", "tokenize", "vocabulary", "vectorize", "cluster", "cut", "templates"};

struct StageReport {
  std::string name;
  std::chrono::microseconds elapsed{0};
  nlohmann::json stats;
};

struct PipelineResult {
  std::vector<RequestLog> corpus;
  std::vector<TokenSequence> tokens;
  Vocabulary vocabulary;
  std::vector<FeatureVector> vectors;
  DendroTree tree;
  Partition partition;
  std::map<NodeId, Template> templates;
  std::vector<StageReport> stages;
};

using StageObserver = std::function<void(const StageReport&)>;

// Runs every stage in order and writes each artifact atomically into out_dir.
// Throws ConfigError before any stage runs, StageError naming the failed stage.
PipelineResult run_pipeline(const PipelineConfig& config, const StageObserver& observer = {});

inline constexpr std::array<std::string_view, 8> kArtifactNames = {
    "corpus.jsonl", "tokens.jsonl", "vocab.json",     "vectors.bin",
    "tree.json",    "partition.json", "templates.jsonl", "run-manifest.json"};

// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_atomically(const std::filesystem::path& path, const std::function<void(const std::filesystem::path&)>& write);

}  // namespace loadermine
