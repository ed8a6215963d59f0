#include "fixtures.hpp"

#include <doctest.h>
#include <httplib.h>

#include <filesystem>
#include <random>
#include <sstream>

using namespace loadermine;
using fixture::HostPayload;
namespace fs = std::filesystem;

namespace {

Decision decide(NodeId id, DecisionAction action) {
  Decision d;
  d.node_id = id;
  d.action = action;
  d.decided_at = parse_rfc3339("2022-01-01T00:00:00.000000Z");
  return d;
}

FamilyAssignment assign(NodeId id, std::string family, std::optional<FamilyKind> kind = std::nullopt) {
  FamilyAssignment a;
  a.node_id = id;
  a.family = std::move(family);
  a.kind = kind;
  a.decided_at = parse_rfc3339("2022-01-01T00:00:00.000000Z");
  return a;
}

std::set<int> leaf_set(const DendroTree& tree, const std::set<NodeId>& working) {
  std::set<int> all;
  for (const NodeId c : working) {
    for (const NodeId l : tree.leaves_under(c)) CHECK(all.insert(l).second);
  }
  return all;
}

std::set<int> all_leaves(const DendroTree& tree) {
  std::set<int> s;
  for (std::size_t i = 0; i < tree.leaf_count(); ++i) s.insert(static_cast<int>(i));
  return s;
}

// Two clearly separated groups; `hosts` assigns (loader count, scanner count) per host.
std::vector<HostPayload> two_groups(const std::vector<std::tuple<std::string, int, int>>& hosts) {
  std::vector<HostPayload> logs;
  int n = 0;
  for (const auto& [host, loaders, scanners] : hosts) {
    for (int i = 0; i < loaders; ++i) logs.emplace_back(host, fixture::loader_line(n++));
    for (int i = 0; i < scanners; ++i) logs.emplace_back(host, fixture::scanner_line(n++));
  }
  return logs;
}

NodeId cluster_holding(const RefinementSession& s, std::string_view needle) {
  for (const NodeId c : s.working_set()) {
    const auto leaf = s.tree().leaves_under(c).front();
    const auto& log_id = s.tree().node(leaf).log_id;
    for (const auto& log : s.corpus()) {
      if (log.log_id == log_id && log.payload.find(needle) != Bytes::npos) return c;
    }
  }
  return kNoNode;
}

std::vector<HostPayload> random_corpus(std::mt19937_64& rng, std::size_t n) {
  std::vector<HostPayload> logs;
  const std::vector<std::string> words = {"wget", "cd", "/tmp", "cat", "echo", "rm", "-rf", "busybox", "tftp", "sh"};
  for (std::size_t i = 0; i < n; ++i) {
    Bytes p;
    const auto len = 2 + rng() % 8;
    for (std::size_t k = 0; k < len; ++k) p += words[rng() % words.size()] + " ";
    p += std::to_string(i) + "\r\n";
    logs.emplace_back(fmt::format("203.0.113.{}", 1 + rng() % 6), p);
  }
  return logs;
}

}  // namespace

TEST_SUITE("workbench") {
  TEST_CASE("initial state has one provisional family per cluster") {
    std::mt19937_64 rng(3);
    const auto in = fixture::inputs_from(random_corpus(rng, 20), 4.0);
    const auto k = in.partition.clusters.size();
    RefinementSession s(in);
    CHECK(s.working_set().size() == k);
    std::size_t provisional = 0;
    for (const auto& [name, f] : s.families()) provisional += f.provisional ? 1 : 0;
    CHECK(provisional == k);
    CHECK(s.families().count(std::string(kUnassignedFamily)) == 1);
  }

  TEST_CASE("keep on every working cluster changes nothing") {
    std::mt19937_64 rng(4);
    RefinementSession s(fixture::inputs_from(random_corpus(rng, 20), 4.0));
    const auto before = s.working_set();
    const auto families = s.families_json();
    for (const NodeId c : before) s.apply(decide(c, DecisionAction::kKeep));
    CHECK(s.working_set() == before);
    CHECK(s.families_json() == families);
    CHECK(s.events().size() == before.size());
  }

  TEST_CASE("split replaces a cluster by its children and merge restores it") {
    RefinementSession s(fixture::inputs_from(two_groups({{"203.0.113.1", 6, 4}})));
    REQUIRE(s.working_set().size() == 2);
    const NodeId big = cluster_holding(s, "wget");
    const auto& node = s.tree().node(big);
    REQUIRE(node.size == 6);
    s.apply(decide(big, DecisionAction::kSplitIntoChildren));
    CHECK(s.working_set().count(big) == 0);
    CHECK(s.working_set().count(node.left) == 1);
    CHECK(s.working_set().count(node.right) == 1);
    CHECK(s.tree().node(node.left).size + s.tree().node(node.right).size == 6);
    CHECK(leaf_set(s.tree(), s.working_set()) == all_leaves(s.tree()));

    s.apply(decide(node.left, DecisionAction::kMergeIntoParent));
    CHECK(s.working_set().count(big) == 1);
    CHECK(s.working_set().count(node.right) == 0);
    CHECK(s.working_set().size() == 2);
    CHECK(s.family_of_cluster(big) == fmt::format("cluster-{}", big));
  }

  TEST_CASE("merge keeps a named family") {
    RefinementSession s(fixture::inputs_from(two_groups({{"203.0.113.1", 6, 4}})));
    const NodeId big = cluster_holding(s, "wget");
    s.apply(decide(big, DecisionAction::kSplitIntoChildren));
    const auto left = s.tree().node(big).left;
    s.apply(assign(left, "mirai-like"));
    s.apply(decide(left, DecisionAction::kMergeIntoParent));
    CHECK(s.family_of_cluster(big) == "mirai-like");
  }

  TEST_CASE("rejected decisions") {
    RefinementSession s(fixture::inputs_from(two_groups({{"203.0.113.1", 3, 3}})));
    const auto& tree = s.tree();
    auto status_of = [&](auto&& event) {
      try {
        s.apply(event);
      } catch (const WorkbenchError& e) {
        return e.status();
      }
      return 200;
    };
    CHECK(status_of(decide(999, DecisionAction::kKeep)) == 404);
    CHECK(status_of(decide(tree.root, DecisionAction::kKeep)) == 400);  // not working
    CHECK(status_of(assign(999, "x")) == 404);
    const NodeId c = *s.working_set().begin();
    CHECK(status_of(assign(c, "cluster-7")) == 400);
    CHECK(status_of(assign(c, "")) == 400);
    Decision bad_tag = decide(c, DecisionAction::kKeep);
    bad_tag.criteria_tags = {"vibes"};
    CHECK(status_of(bad_tag) == 400);

    // Split down to a leaf, then splitting the leaf is refused.
    NodeId cur = c;
    while (!tree.node(cur).is_leaf()) {
      s.apply(decide(cur, DecisionAction::kSplitIntoChildren));
      cur = tree.node(cur).left;
    }
    CHECK(status_of(decide(cur, DecisionAction::kSplitIntoChildren)) == 400);

    // Merging up to the root works once; the root has no parent.
    RefinementSession t(fixture::inputs_from(two_groups({{"203.0.113.1", 3, 3}})));
    t.apply(decide(*t.working_set().begin(), DecisionAction::kMergeIntoParent));
    REQUIRE(t.working_set() == std::set<NodeId>{t.tree().root});
    CHECK_THROWS_AS(t.apply(decide(t.tree().root, DecisionAction::kMergeIntoParent)), WorkbenchError);
  }

  TEST_CASE("inconsistent inputs are refused") {
    auto in = fixture::inputs_from(two_groups({{"203.0.113.1", 3, 3}}));
    auto missing = in;
    missing.corpus.pop_back();
    CHECK_THROWS_AS(RefinementSession{missing}, WorkbenchError);
    auto overlap = in;
    overlap.partition.clusters.push_back(0);
    CHECK_THROWS_AS(RefinementSession{overlap}, WorkbenchError);
  }

  TEST_CASE("random decision sequences keep the working set an exact cover and replay identically") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      std::mt19937_64 rng(seed);
      const auto in = fixture::inputs_from(random_corpus(rng, 24), 3.0);
      RefinementSession s(in);
      const auto everything = all_leaves(s.tree());
      for (int step = 0; step < 60; ++step) {
        std::vector<NodeId> candidates(s.working_set().begin(), s.working_set().end());
        if (rng() % 5 == 0) candidates.push_back(static_cast<NodeId>(rng() % s.tree().nodes.size()));
        const NodeId target = candidates[rng() % candidates.size()];
        try {
          switch (rng() % 4) {
            case 0: s.apply(decide(target, DecisionAction::kKeep)); break;
            case 1: s.apply(decide(target, DecisionAction::kSplitIntoChildren)); break;
            case 2: s.apply(decide(target, DecisionAction::kMergeIntoParent)); break;
            default: s.apply(assign(target, fmt::format("fam{}", rng() % 3))); break;
          }
        } catch (const WorkbenchError&) {
        }
        REQUIRE(leaf_set(s.tree(), s.working_set()) == everything);
        for (const NodeId c : s.working_set()) CHECK(s.family_of_cluster(c) != kUnassignedFamily);
      }
      const auto dir = fs::temp_directory_path() / fmt::format("lm-wb-{}", seed);
      fs::remove_all(dir);
      s.save(dir);
      const auto back = RefinementSession::restore(in, dir);
      CHECK(back.working_set() == s.working_set());
      CHECK(back.families_json() == s.families_json());
      CHECK(back.report() == s.report());
      fs::remove_all(dir);
    }
  }

  TEST_CASE("hosts take the majority family, ties to the smaller name") {
    RefinementSession s(fixture::inputs_from(
        two_groups({{"203.0.113.1", 3, 1}, {"203.0.113.2", 2, 2}, {"203.0.113.3", 0, 2}})));
    REQUIRE(s.working_set().size() == 2);
    s.apply(assign(cluster_holding(s, "wget"), "zeta"));
    s.apply(assign(cluster_holding(s, "cpuinfo"), "alpha", FamilyKind::kScanner));
    std::map<std::string, std::string> label;
    for (const auto& h : s.label_hosts()) label[h.host] = h.family_id;
    CHECK(label["203.0.113.1"] == "zeta");
    CHECK(label["203.0.113.2"] == "alpha");
    CHECK(label["203.0.113.3"] == "alpha");

    // Scaling every vote by the same factor keeps the labels.
    RefinementSession scaled(fixture::inputs_from(
        two_groups({{"203.0.113.1", 9, 3}, {"203.0.113.2", 6, 6}, {"203.0.113.3", 0, 6}})));
    scaled.apply(assign(cluster_holding(scaled, "wget"), "zeta"));
    scaled.apply(assign(cluster_holding(scaled, "cpuinfo"), "alpha"));
    for (const auto& h : scaled.label_hosts()) CHECK(label[h.host] == h.family_id);
  }

  TEST_CASE("scanner suggestion follows download tokens in templates") {
    RefinementSession s(fixture::inputs_from(two_groups({{"203.0.113.1", 3, 3}})));
    for (const auto& [name, f] : s.families()) {
      if (f.member_clusters.empty()) continue;
      const bool has_wget = f.member_clusters.count(cluster_holding(s, "wget")) > 0;
      CHECK(s.scanner_suggested(f) == !has_wget);
    }
  }

  TEST_CASE("report geography") {
    RefinementSession s(fixture::inputs_from(two_groups({{"203.0.113.1", 3, 0}, {"203.0.113.2", 3, 0},
                                                         {"203.0.113.3", 0, 3}})));
    s.apply(assign(cluster_holding(s, "wget"), "loader"));
    const auto plain = s.report();
    for (const auto& f : plain.at("families")) {
      CHECK_FALSE(f.contains("countries"));
      CHECK_FALSE(f.contains("autonomous_systems"));
    }
    CHECK_FALSE(plain.contains("metadata"));

    std::istringstream csv(
        "host,country,asn,as_name\n"
        "203.0.113.1,JP,AS1,\"One, Inc\"\n"
        "203.0.113.2,JP,AS2,Two\n"
        "broken row\n"
        "203.0.113.9,US,AS3,Three\n");
    const auto meta = parse_host_metadata(csv);
    CHECK(meta.malformed_rows == 1);
    CHECK(meta.hosts.at("203.0.113.1").as_name == "One, Inc");
    const auto r = s.report(&meta);
    CHECK(r.dump() == s.report(&meta).dump());
    bool seen = false;
    for (const auto& f : r.at("families")) {
      if (f.at("family_id") != "loader") continue;
      seen = true;
      CHECK(f.at("countries").at("JP") == 2);
      CHECK(f.at("autonomous_systems").size() == 2);
    }
    CHECK(seen);
    CHECK(r.at("metadata").at("malformed_rows") == 1);
    CHECK(r.at("metadata").at("unmatched_hosts") == 1);
  }
}

TEST_SUITE("workbench_api") {
  TEST_CASE("HTTP endpoints") {
    const auto dir = fs::temp_directory_path() / "lm-wb-api";
    fs::remove_all(dir);
    WorkbenchServer server(RefinementSession(fixture::inputs_from(two_groups({{"203.0.113.1", 4, 3}}))), dir);
    server.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", server.port());

    auto tree = cli.Get("/api/tree");
    REQUIRE(tree);
    CHECK(tree->status == 200);
    const auto tj = nlohmann::json::parse(tree->body);
    const auto root = tj.at("root").get<NodeId>();
    const NodeId leaf = 0;

    auto tpl = cli.Get(fmt::format("/api/node/{}/template", root));
    REQUIRE(tpl);
    CHECK(tpl->status == 200);
    CHECK(nlohmann::json::parse(tpl->body).at("working") == false);
    CHECK(cli.Get("/api/node/9999/template")->status == 404);
    CHECK(cli.Get("/api/node/abc/template")->status == 400);

    auto part = nlohmann::json::parse(cli.Get("/api/partition")->body);
    REQUIRE(part.at("clusters").size() == 2);
    const auto first = part.at("clusters")[0].at("node_id").get<NodeId>();

    // A leaf is not working under this cut, so the split is refused either way.
    auto refused = cli.Post(fmt::format("/api/node/{}/decision", leaf), R"({"action":"split_into_children"})",
                            "application/json");
    REQUIRE(refused);
    CHECK(refused->status == 400);
    CHECK(nlohmann::json::parse(refused->body).contains("error"));
    CHECK(cli.Post("/api/node/0/decision", "not json", "application/json")->status == 400);

    auto merged = cli.Post(fmt::format("/api/node/{}/decision", first),
                           R"({"action":"merge_into_parent","rationale":"same loader","criteria_tags":["commands_and_order"]})",
                           "application/json");
    REQUIRE(merged);
    CHECK(merged->status == 200);
    part = nlohmann::json::parse(cli.Get("/api/partition")->body);
    REQUIRE(part.at("clusters").size() == 1);
    CHECK(part.at("clusters")[0].at("node_id") == root);

    auto fam = cli.Post(fmt::format("/api/node/{}/family", root), R"({"family":"everything","kind":"loader"})",
                        "application/json");
    REQUIRE(fam);
    CHECK(fam->status == 200);
    auto labels = nlohmann::json::parse(cli.Get("/api/hosts/labels")->body);
    CHECK(labels.dump().find("everything") != std::string::npos);
    CHECK(nlohmann::json::parse(cli.Get("/api/decisions")->body).size() == 2);
    CHECK(cli.Get("/api/report")->status == 200);

    auto exported = cli.Post("/api/export", "", "application/json");
    REQUIRE(exported);
    CHECK(exported->status == 200);
    CHECK(fs::exists(dir / "families.json"));
    CHECK(fs::exists(dir / "decisions.jsonl"));
    server.stop();
    fs::remove_all(dir);
  }
}
