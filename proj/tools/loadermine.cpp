#include "loadermine/fake_shell.hpp"
#include "loadermine/pipeline.hpp"
#include "loadermine/proxy.hpp"
#include "loadermine/session_store.hpp"
#include "loadermine/simulator.hpp"
#include "loadermine/workbench.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace loadermine;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

// Copies values from a TOML-style file into options the command line left unset.
void apply_config_file(CLI::App& app, const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError(fmt::format("config file not found: {}", path.string()));
  for (const auto& item : CLI::ConfigTOML().from_file(path.string())) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) throw ConfigError(fmt::format("unexpected section in config: {}", item.parents.front()));
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = app.get_option_no_throw("--" + name);
    if (opt == nullptr || name == "config") throw ConfigError(fmt::format("unknown config key '{}'", item.name));
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

struct CaptureArgs {
  std::string listen;
  std::string upstream;
  std::string fake_shell;
  std::string out = "sessions.jsonl";
  std::string tag = "wild";
  std::string sub_username;
  std::string sub_password;
  std::size_t max_session_bytes = 1 << 20;
  double idle_timeout = 120;
};

int run_capture(const CaptureArgs& a) {
  ProxyConfig config;
  config.listen = net::Endpoint::parse(a.listen);
  config.origin_tag = parse_origin_tag(a.tag);
  config.max_session_bytes = a.max_session_bytes;
  config.idle_timeout = std::chrono::milliseconds(static_cast<long>(a.idle_timeout * 1000));
  if (!a.sub_username.empty() || !a.sub_password.empty()) {
    CredentialSubstitution sub;
    sub.username = a.sub_username;
    sub.password = a.sub_password;
    config.credential_substitution = sub;
  }

  std::unique_ptr<FakeShellServer> shell;
  if (!a.fake_shell.empty()) {
    ShellProfile profile = a.fake_shell == "builtin" ? ShellProfile{} : load_shell_profile(a.fake_shell);
    shell = std::make_unique<FakeShellServer>(profile, net::Endpoint::parse("127.0.0.1:0"));
    shell->start();
    config.upstream = shell->endpoint();
  } else if (!a.upstream.empty()) {
    config.upstream = net::Endpoint::parse(a.upstream);
  } else {
    throw ConfigError("capture needs --upstream or --fake-shell");
  }
  config.validate();

  JsonlSessionStore store(a.out);
  Proxy proxy(config, store);
  proxy.start();
  fmt::print(stderr, "capturing on port {} -> {}, writing {}\n", proxy.port(), config.upstream.str(), a.out);
  wait_for_signal();
  proxy.stop();
  if (shell) shell->stop();
  return 0;
}

int run_fake_shell(const std::string& listen, const std::string& profile_path) {
  ShellProfile profile = profile_path.empty() ? ShellProfile{} : load_shell_profile(profile_path);
  FakeShellServer server(profile, net::Endpoint::parse(listen));
  server.start();
  fmt::print(stderr, "fake shell listening on port {}\n", server.port());
  wait_for_signal();
  server.stop();
  return 0;
}

struct SimulateArgs {
  std::string families = "all";
  std::size_t hosts = 5;
  std::size_t sessions = 5;
  std::uint64_t seed = 42;
  std::string out = "control.jsonl";
  std::string labels = "labels.csv";
};

int run_simulate(const SimulateArgs& a) {
  auto all = builtin_playbooks();
  std::vector<Playbook> chosen;
  if (a.families == "all") {
    chosen = all;
  } else {
    for (const auto& name : split_list(a.families)) {
      const auto it = std::find_if(all.begin(), all.end(), [&](const Playbook& p) { return p.family_name == name; });
      if (it == all.end()) throw ConfigError(fmt::format("unknown family '{}'", name));
      chosen.push_back(*it);
    }
  }
  const auto corpus = generate(chosen, a.hosts, a.sessions, a.seed);
  write_sessions(a.out, corpus.conversations);
  write_labels(a.labels, corpus.labels);
  fmt::print(stderr, "wrote {} sessions to {}\n", corpus.conversations.size(), a.out);
  return 0;
}

struct PreprocessArgs {
  std::vector<std::string> in;
  std::string out = "corpus.jsonl";
  std::size_t cap = 20;
  bool no_dedup = false;
  std::vector<std::string> prompt_patterns;
};

int run_preprocess(const PreprocessArgs& a) {
  const CredentialFilter filter =
      a.prompt_patterns.empty() ? CredentialFilter() : CredentialFilter(a.prompt_patterns);
  std::vector<RequestLog> logs;
  std::size_t corrupt = 0;
  for (const auto& path : a.in) {
    auto exported = export_sessions(path);
    corrupt += exported.corrupt_records;
    for (const auto& conv : exported.sessions) {
      if (auto log = distill(conv, filter)) logs.push_back(std::move(*log));
    }
  }
  const auto corpus = build_corpus(std::move(logs), a.cap, !a.no_dedup);
  write_atomically(a.out, [&](const fs::path& p) { write_corpus(p, corpus.logs); });
  fmt::print(stderr, "{} request logs, {} corrupt records skipped\n", corpus.logs.size(), corrupt);
  return 0;
}

int run_tokenize(const std::string& in, const std::string& out, bool tab_is_symbol) {
  const ByteClassTable table(tab_is_symbol);
  std::vector<TokenSequence> seqs;
  for (const auto& log : read_corpus(in)) seqs.push_back({log.log_id, tokenize(log.payload, table)});
  write_atomically(out, [&](const fs::path& p) { write_token_sequences(p, seqs); });
  return 0;
}

int run_vectorize(const std::string& tokens_path, const std::string& out, const std::string& vocab_path) {
  const auto seqs = read_token_sequences(tokens_path);
  const auto vocab = fit_vocabulary(seqs);
  std::vector<FeatureVector> vectors;
  for (const auto& s : seqs) vectors.push_back(vectorize(s, vocab));
  write_atomically(vocab_path, [&](const fs::path& p) { write_vocabulary(p, vocab); });
  write_atomically(out, [&](const fs::path& p) { write_vectors(p, vectors); });
  fmt::print(stderr, "{} vectors, {} dimensions\n", vectors.size(), vocab.dim_total());
  return 0;
}

int run_cluster(const std::string& vectors_path, const std::string& out, const std::string& vocab_path,
                const std::vector<double>& order_scale) {
  const auto vectors = read_vectors(vectors_path);
  std::vector<double> scales;
  if (order_scale != std::vector<double>{1.0, 1.0, 1.0}) {
    if (vocab_path.empty()) throw ConfigError("--order-scale needs --vocab");
    scales = read_vocabulary(vocab_path).dimension_scales({order_scale[0], order_scale[1], order_scale[2]});
  }
  std::vector<std::string> ids;
  for (const auto& v : vectors) ids.push_back(v.log_id);
  const auto tree = agglomerate(pairwise_distance(vectors, scales), ids);
  write_atomically(out, [&](const fs::path& p) { write_tree(p, tree); });
  fmt::print(stderr, "{} leaves, root height {:.4f}\n", tree.leaf_count(), tree.node(tree.root).height);
  return 0;
}

int run_cut(const std::string& tree_path, double threshold, const std::string& out) {
  if (!(threshold > 0)) throw ConfigError("threshold must be positive");
  const auto tree = read_tree(tree_path);
  const auto partition = cut(tree, threshold);
  write_atomically(out, [&](const fs::path& p) { write_partition(p, tree, partition); });
  fmt::print(stderr, "{} clusters at threshold {}\n", partition.clusters.size(), threshold);
  return 0;
}

int run_templates(const std::string& tree_path, const std::string& tokens_path, const std::string& out,
                  const AlignmentParams& params) {
  const auto templates = build_templates(read_tree(tree_path), read_token_sequences(tokens_path), params);
  write_atomically(out, [&](const fs::path& p) { write_templates(p, templates); });
  return 0;
}

struct WorkbenchArgs {
  std::string tree = "tree.json";
  std::string templates = "templates.jsonl";
  std::string partition = "partition.json";
  std::string corpus = "corpus.jsonl";
  std::string meta;
  std::string bind = "127.0.0.1:8737";
  std::string state = "workbench-state";
  std::string out;
};

RefinementSession open_session(const WorkbenchArgs& a) {
  auto inputs = load_workbench_inputs(a.tree, a.templates, a.partition, a.corpus);
  if (fs::exists(fs::path(a.state) / "decisions.jsonl")) return RefinementSession::restore(std::move(inputs), a.state);
  return RefinementSession(std::move(inputs));
}

int run_workbench_serve(const WorkbenchArgs& a) {
  std::optional<HostMetadataTable> meta;
  if (!a.meta.empty()) meta = read_host_metadata(a.meta);
  const auto endpoint = net::Endpoint::parse(a.bind);
  WorkbenchServer server(open_session(a), a.state, std::move(meta));
  server.start(endpoint.host.empty() ? "127.0.0.1" : endpoint.host, endpoint.port);
  fmt::print(stderr, "workbench API on http://{}:{}/api/tree\n", endpoint.host, server.port());
  wait_for_signal();
  server.stop();
  return 0;
}

int run_workbench_report(const WorkbenchArgs& a) {
  std::optional<HostMetadataTable> meta;
  if (!a.meta.empty()) meta = read_host_metadata(a.meta);
  const auto session = open_session(a);
  const auto text = session.report(meta ? &*meta : nullptr).dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_atomically(a.out, [&](const fs::path& p) {
      std::ofstream f(p, std::ios::binary | std::ios::trunc);
      f << text;
    });
  }
  return 0;
}

struct PipelineArgs {
  std::string config;
  std::vector<std::string> inputs;
  std::string out_dir = "artifacts";
  std::size_t per_host_cap = 20;
  bool no_dedup = false;
  double threshold = 60.0;
  double match_score = 1.0;
  double gap_token_penalty = 0.0;
  double gap_vs_gap_score = 0.0;
  std::vector<double> order_scale = {1.0, 1.0, 1.0};
  bool tab_is_symbol = false;
  std::vector<std::string> prompt_patterns;
  int max_credential_replies = CredentialFilter::kDefaultMaxReplies;
  std::uint64_t seed = 0;
  bool json_logs = false;
};

int run_pipeline_command(CLI::App& run, PipelineArgs& a) {
  try {
    if (!a.config.empty()) apply_config_file(run, a.config);
  } catch (const CLI::Error& e) {
    throw ConfigError(e.what());
  }
  PipelineConfig config;
  for (const auto& in : a.inputs) config.inputs.emplace_back(in);
  config.out_dir = a.out_dir;
  config.per_host_cap = a.per_host_cap;
  config.dedup = !a.no_dedup;
  config.threshold = a.threshold;
  config.alignment = {a.match_score, a.gap_token_penalty, a.gap_vs_gap_score};
  config.order_scale = {a.order_scale.at(0), a.order_scale.at(1), a.order_scale.at(2)};
  config.tab_is_symbol = a.tab_is_symbol;
  if (!a.prompt_patterns.empty()) config.prompt_patterns = a.prompt_patterns;
  config.max_credential_replies = a.max_credential_replies;
  config.seed = a.seed;

  const bool json_logs = a.json_logs;
  auto observer = [json_logs](const StageReport& r) {
    const double ms = static_cast<double>(r.elapsed.count()) / 1000.0;
    if (json_logs) {
      std::cerr << json{{"event", "stage_done"}, {"stage", r.name}, {"elapsed_ms", ms}, {"stats", r.stats}}.dump()
                << std::endl;
    } else {
      fmt::print(stderr, "{:<11} {:>9.1f} ms  {}\n", r.name, ms, r.stats.dump());
    }
  };
  try {
    run_pipeline(config, observer);
  } catch (const StageError& e) {
    if (json_logs) std::cerr << json{{"event", "stage_failed"}, {"stage", e.stage()}, {"message", e.what()}}.dump() << std::endl;
    else fmt::print(stderr, "error: {}\n", e.what());
    return kExitStage;
  }
  if (json_logs) std::cerr << json{{"event", "done"}, {"out_dir", config.out_dir.string()}}.dump() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Telnet loader session capture, clustering and template mining"};
  app.require_subcommand(1);

  CaptureArgs capture;
  auto* cap = app.add_subcommand("capture", "Record telnet sessions through a transparent proxy");
  cap->add_option("--listen", capture.listen, "Listen address, host:port")->required();
  cap->add_option("--upstream", capture.upstream, "Upstream telnet service, host:port");
  cap->add_option("--fake-shell", capture.fake_shell, "Run the fake shell as upstream (profile JSON or 'builtin')");
  cap->add_option("--out", capture.out, "Session store (JSON Lines)");
  cap->add_option("--tag", capture.tag, "Origin tag")->check(CLI::IsMember({"wild", "control_group"}));
  cap->add_option("--sub-username", capture.sub_username, "Username sent upstream at login prompts");
  cap->add_option("--sub-password", capture.sub_password, "Password sent upstream at password prompts");
  cap->add_option("--max-session-bytes", capture.max_session_bytes)->check(CLI::PositiveNumber);
  cap->add_option("--idle-timeout", capture.idle_timeout, "Seconds")->check(CLI::PositiveNumber);

  std::string shell_listen = "127.0.0.1:2323";
  std::string shell_profile;
  auto* shell = app.add_subcommand("fake-shell", "Serve the fake BusyBox shell");
  shell->add_option("--listen", shell_listen);
  shell->add_option("--profile", shell_profile, "Shell profile JSON");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate labeled control-group sessions");
  simulate->add_option("--families", sim.families, "'all' or a comma-separated list");
  simulate->add_option("--hosts", sim.hosts)->check(CLI::PositiveNumber);
  simulate->add_option("--sessions", sim.sessions)->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--out", sim.out);
  simulate->add_option("--labels", sim.labels);

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "Distill sessions into request logs");
  preprocess->add_option("--in", pre.in, "Session store(s)")->required();
  preprocess->add_option("--out", pre.out);
  preprocess->add_option("--cap", pre.cap, "Per-host cap")->check(CLI::PositiveNumber);
  preprocess->add_flag("--no-dedup", pre.no_dedup);
  preprocess->add_option("--prompt-pattern", pre.prompt_patterns, "Credential prompt regex (repeatable)");

  std::string tok_in = "corpus.jsonl";
  std::string tok_out = "tokens.jsonl";
  bool tok_tab = false;
  auto* tok = app.add_subcommand("tokenize", "Split request logs into byte-class tokens");
  tok->add_option("--in", tok_in);
  tok->add_option("--out", tok_out);
  tok->add_flag("--tab-is-symbol", tok_tab);

  std::string vec_tokens = "tokens.jsonl";
  std::string vec_out = "vectors.bin";
  std::string vec_vocab = "vocab.json";
  auto* vec = app.add_subcommand("vectorize", "Build n-gram vocabulary and count vectors");
  vec->add_option("--tokens", vec_tokens);
  vec->add_option("--out", vec_out);
  vec->add_option("--vocab", vec_vocab);

  std::string cl_vectors = "vectors.bin";
  std::string cl_out = "tree.json";
  std::string cl_vocab;
  std::vector<double> cl_scale = {1.0, 1.0, 1.0};
  auto* clu = app.add_subcommand("cluster", "Ward hierarchical clustering");
  clu->add_option("--vectors", cl_vectors);
  clu->add_option("--out", cl_out);
  clu->add_option("--vocab", cl_vocab, "Needed with --order-scale");
  clu->add_option("--order-scale", cl_scale, "Unigram, bigram, trigram weights")->expected(3);

  std::string cut_tree = "tree.json";
  double cut_threshold = 60.0;
  std::string cut_out = "partition.json";
  auto* cu = app.add_subcommand("cut", "Cut the dendrogram at a threshold");
  cu->add_option("--tree", cut_tree);
  cu->add_option("--threshold", cut_threshold);
  cu->add_option("--out", cut_out);

  std::string tpl_tree = "tree.json";
  std::string tpl_tokens = "tokens.jsonl";
  std::string tpl_out = "templates.jsonl";
  AlignmentParams tpl_params;
  auto* tpl = app.add_subcommand("templates", "Align token sequences into per-node templates");
  tpl->add_option("--tree", tpl_tree);
  tpl->add_option("--tokens", tpl_tokens);
  tpl->add_option("--out", tpl_out);
  tpl->add_option("--match-score", tpl_params.match_score);
  tpl->add_option("--gap-token-penalty", tpl_params.gap_token_penalty);
  tpl->add_option("--gap-vs-gap-score", tpl_params.gap_vs_gap_score);

  WorkbenchArgs wb;
  auto* workbench = app.add_subcommand("workbench", "Analyst refinement of clusters into families");
  workbench->require_subcommand(1);
  auto add_inputs = [&wb](CLI::App* c) {
    c->add_option("--tree", wb.tree);
    c->add_option("--templates", wb.templates);
    c->add_option("--partition", wb.partition);
    c->add_option("--corpus", wb.corpus);
    c->add_option("--meta", wb.meta, "Host metadata CSV: host,country,asn,as_name");
    c->add_option("--state", wb.state, "Directory for families.json and decisions.jsonl");
  };
  auto* serve = workbench->add_subcommand("serve", "Serve the HTTP JSON API");
  add_inputs(serve);
  serve->add_option("--bind", wb.bind);
  auto* report = workbench->add_subcommand("report", "Print the family report as JSON");
  add_inputs(report);
  report->add_option("--out", wb.out);

  PipelineArgs pl;
  auto* pipeline = app.add_subcommand("pipeline", "End-to-end runs");
  pipeline->require_subcommand(1);
  auto* run = pipeline->add_subcommand("run", "Sessions to templates in one go");
  run->add_option("--config", pl.config, "TOML-style config; flags override it");
  run->add_option("--inputs,--input", pl.inputs, "Session store(s)");
  run->add_option("--out-dir", pl.out_dir);
  run->add_option("--per-host-cap", pl.per_host_cap);
  run->add_flag("--no-dedup", pl.no_dedup);
  run->add_option("--threshold", pl.threshold);
  run->add_option("--match-score", pl.match_score);
  run->add_option("--gap-token-penalty", pl.gap_token_penalty);
  run->add_option("--gap-vs-gap-score", pl.gap_vs_gap_score);
  run->add_option("--order-scale", pl.order_scale)->expected(3);
  run->add_flag("--tab-is-symbol", pl.tab_is_symbol);
  run->add_option("--prompt-patterns,--prompt-pattern", pl.prompt_patterns);
  run->add_option("--max-credential-replies", pl.max_credential_replies);
  run->add_option("--seed", pl.seed);
  run->add_flag("--json-logs", pl.json_logs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*cap) return run_capture(capture);
    if (*shell) return run_fake_shell(shell_listen, shell_profile);
    if (*simulate) return run_simulate(sim);
    if (*preprocess) return run_preprocess(pre);
    if (*tok) return run_tokenize(tok_in, tok_out, tok_tab);
    if (*vec) return run_vectorize(vec_tokens, vec_out, vec_vocab);
    if (*clu) return run_cluster(cl_vectors, cl_out, cl_vocab, cl_scale);
    if (*cu) return run_cut(cut_tree, cut_threshold, cut_out);
    if (*tpl) return run_templates(tpl_tree, tpl_tokens, tpl_out, tpl_params);
    if (*serve) return run_workbench_serve(wb);
    if (*report) return run_workbench_report(wb);
    if (*run) return run_pipeline_command(*run, pl);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
