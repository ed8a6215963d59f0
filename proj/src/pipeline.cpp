#include "loadermine/pipeline.hpp"

#include "loadermine/session_store.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

using nlohmann::json;
namespace fs = std::filesystem;

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error(fmt::format("stage {} failed: {}", stage, what)), stage_(std::move(stage)) {}

void PipelineConfig::validate() const {
  if (inputs.empty()) throw ConfigError("no input files");
  if (!(threshold > 0.0)) throw ConfigError("threshold must be positive");
  if (per_host_cap == 0) throw ConfigError("per_host_cap must be at least 1");
  for (const double s : order_scale) {
    if (!(s >= 0.0)) throw ConfigError("order scales must be nonnegative");
  }
  if (max_credential_replies < 0) throw ConfigError("max_credential_replies must be nonnegative");
  try {
    alignment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  std::set<fs::path> seen;
  auto claim = [&seen](const fs::path& p) {
    const auto norm = fs::weakly_canonical(fs::absolute(p));
    if (!seen.insert(norm).second) throw ConfigError(fmt::format("path used twice: {}", p.string()));
  };
  claim(out_dir);
  for (const auto& in : inputs) claim(in);
  for (const auto name : kArtifactNames) claim(out_dir / name);
}

json PipelineConfig::to_json() const {
  json in = json::array();
  for (const auto& p : inputs) in.push_back(p.generic_string());
  return {{"inputs", in},
          {"out_dir", out_dir.generic_string()},
          {"per_host_cap", per_host_cap},
          {"dedup", dedup},
          {"threshold", threshold},
          {"alignment",
           {{"match_score", alignment.match_score},
            {"gap_token_penalty", alignment.gap_token_penalty},
            {"gap_vs_gap_score", alignment.gap_vs_gap_score}}},
          {"order_scale", order_scale},
          {"tab_is_symbol", tab_is_symbol},
          {"prompt_patterns", prompt_patterns},
          {"max_credential_replies", max_credential_replies},
          {"seed", seed}};
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()); }

void write_atomically(const fs::path& path, const std::function<void(const fs::path&)>& write) {
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    write(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

namespace {

class StageRunner {
 public:
  StageRunner(std::vector<StageReport>& reports, const StageObserver& observer)
      : reports_(reports), observer_(observer) {}

  template <typename Fn>
  void run(std::string_view name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    StageReport report;
    report.name = std::string(name);
    try {
      report.stats = fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(report.name, e.what());
    }
    report.elapsed =
        std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start);
    reports_.push_back(report);
    if (observer_) observer_(report);
  }

 private:
  std::vector<StageReport>& reports_;
  const StageObserver& observer_;
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const StageObserver& observer) {
  config.validate();
  for (const auto& in : config.inputs) {
    if (!fs::is_regular_file(in)) throw ConfigError(fmt::format("input not found: {}", in.string()));
  }
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw ConfigError(fmt::format("cannot create {}: {}", config.out_dir.string(), ec.message()));

  const Timestamp started = now_utc();
  PipelineResult r;
  StageRunner stages(r.stages, observer);
  const auto out = [&](std::string_view name) { return config.out_dir / name; };

  stages.run("preprocess", [&] {
    const CredentialFilter filter(config.prompt_patterns, config.max_credential_replies);
    std::vector<RequestLog> logs;
    std::size_t sessions = 0;
    std::size_t corrupt = 0;
    std::size_t empty = 0;
    for (const auto& in : config.inputs) {
      auto exported = export_sessions(in);
      sessions += exported.sessions.size();
      corrupt += exported.corrupt_records;
      for (const auto& conv : exported.sessions) {
        if (auto log = distill(conv, filter)) logs.push_back(std::move(*log));
        else ++empty;
      }
    }
    r.corpus = build_corpus(std::move(logs), config.per_host_cap, config.dedup).logs;
    write_atomically(out("corpus.jsonl"), [&](const fs::path& p) { write_corpus(p, r.corpus); });
    return json{{"sessions", sessions}, {"corrupt_records", corrupt}, {"empty_sessions", empty}, {"logs", r.corpus.size()}};
  });

  stages.run("tokenize", [&] {
    const ByteClassTable table(config.tab_is_symbol);
    std::size_t total = 0;
    for (const auto& log : r.corpus) {
      r.tokens.push_back({log.log_id, tokenize(log.payload, table)});
      total += r.tokens.back().tokens.size();
    }
    write_atomically(out("tokens.jsonl"), [&](const fs::path& p) { write_token_sequences(p, r.tokens); });
    return json{{"sequences", r.tokens.size()}, {"tokens", total}};
  });

  stages.run("vocabulary", [&] {
    r.vocabulary = fit_vocabulary(r.tokens);
    write_atomically(out("vocab.json"), [&](const fs::path& p) { write_vocabulary(p, r.vocabulary); });
    std::array<std::size_t, 3> per_order{};
    for (std::size_t i = 0; i < r.vocabulary.dim_total(); ++i) ++per_order[r.vocabulary.order_at(i) - 1];
    return json{{"dim_total", r.vocabulary.dim_total()}, {"per_order", per_order}};
  });

  stages.run("vectorize", [&] {
    for (const auto& seq : r.tokens) r.vectors.push_back(vectorize(seq, r.vocabulary));
    write_atomically(out("vectors.bin"), [&](const fs::path& p) { write_vectors(p, r.vectors); });
    return json{{"vectors", r.vectors.size()}};
  });

  stages.run("cluster", [&] {
    const auto scales = r.vocabulary.dimension_scales(config.order_scale);
    const bool unit = config.order_scale == std::array<double, 3>{1.0, 1.0, 1.0};
    const auto distances = pairwise_distance(r.vectors, unit ? std::span<const double>{} : std::span<const double>(scales));
    std::vector<std::string> ids;
    for (const auto& v : r.vectors) ids.push_back(v.log_id);
    r.tree = agglomerate(distances, ids);
    write_atomically(out("tree.json"), [&](const fs::path& p) { write_tree(p, r.tree); });
    return json{{"leaves", r.tree.leaf_count()}, {"root_height", r.tree.node(r.tree.root).height}};
  });

  stages.run("cut", [&] {
    r.partition = cut(r.tree, config.threshold);
    write_atomically(out("partition.json"), [&](const fs::path& p) { write_partition(p, r.tree, r.partition); });
    return json{{"threshold", config.threshold}, {"clusters", r.partition.clusters.size()}};
  });

  stages.run("templates", [&] {
    r.templates = build_templates(r.tree, r.tokens, config.alignment);
    write_atomically(out("templates.jsonl"), [&](const fs::path& p) { write_templates(p, r.templates); });
    return json{{"templates", r.templates.size()}};
  });

  json stage_list = json::array();
  for (const auto& s : r.stages) {
    stage_list.push_back({{"name", s.name}, {"elapsed_us", s.elapsed.count()}, {"stats", s.stats}});
  }
  const json manifest = {{"config", config.to_json()},
                         {"config_sha256", config.hash()},
                         {"started_at", format_rfc3339(started)},
                         {"finished_at", format_rfc3339(now_utc())},
                         {"stages", stage_list}};
  write_atomically(out("run-manifest.json"), [&](const fs::path& p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << manifest.dump(2) << '\n';
    if (!f) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
  });
  return r;
}

}  // namespace loadermine
