#include "loadermine/workbench.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>

namespace loadermine {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(DecisionAction a) {
  switch (a) {
    case DecisionAction::kKeep: return "keep";
    case DecisionAction::kMergeIntoParent: return "merge_into_parent";
    case DecisionAction::kSplitIntoChildren: return "split_into_children";
  }
  return "keep";
}

DecisionAction parse_decision_action(std::string_view s) {
  if (s == "keep") return DecisionAction::kKeep;
  if (s == "merge_into_parent") return DecisionAction::kMergeIntoParent;
  if (s == "split_into_children") return DecisionAction::kSplitIntoChildren;
  throw WorkbenchError(400, "bad_action", fmt::format("unknown action '{}'", s));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, bool& ok) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  ok = true;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"' && fields.back().empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  if (quoted) ok = false;
  return fields;
}

bool is_download_token(const Bytes& token) {
  return std::find(kDownloadTokens.begin(), kDownloadTokens.end(), token) != kDownloadTokens.end();
}

Timestamp timestamp_field(const json& j) {
  if (!j.contains("decided_at") || j.at("decided_at").is_null()) return now_utc();
  return parse_rfc3339(j.at("decided_at").get<std::string>());
}

}  // namespace

HostMetadataTable parse_host_metadata(std::istream& in) {
  HostMetadataTable table;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      header = false;
      if (line != "host,country,asn,as_name") throw FormatError("host metadata header must be host,country,asn,as_name");
      continue;
    }
    if (line.empty()) continue;
    bool ok = false;
    auto fields = split_csv_line(line, ok);
    if (!ok || fields.size() != 4 || fields[0].empty()) {
      ++table.malformed_rows;
      continue;
    }
    table.hosts[fields[0]] = {fields[1], fields[2], fields[3]};
  }
  return table;
}

HostMetadataTable read_host_metadata(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  return parse_host_metadata(in);
}

json to_json(const Decision& d) {
  return {{"type", "decision"},
          {"node_id", d.node_id},
          {"action", to_string(d.action)},
          {"rationale", d.rationale},
          {"criteria_tags", d.criteria_tags},
          {"decided_at", format_rfc3339(d.decided_at)}};
}

json to_json(const FamilyAssignment& a) {
  return {{"type", "assign"},
          {"node_id", a.node_id},
          {"family", a.family},
          {"kind", a.kind ? json(to_string(*a.kind)) : json(nullptr)},
          {"decided_at", format_rfc3339(a.decided_at)}};
}

json to_json(const WorkbenchEvent& e) {
  return std::visit([](const auto& v) { return to_json(v); }, e.event);
}

WorkbenchEvent workbench_event_from_json(const json& j) {
  try {
    const auto type = j.value("type", std::string("decision"));
    if (type == "decision") {
      Decision d;
      d.node_id = j.at("node_id").get<NodeId>();
      d.action = parse_decision_action(j.at("action").get<std::string>());
      d.rationale = j.value("rationale", std::string());
      if (j.contains("criteria_tags")) d.criteria_tags = j.at("criteria_tags").get<std::vector<std::string>>();
      d.decided_at = timestamp_field(j);
      return {d};
    }
    if (type == "assign") {
      FamilyAssignment a;
      a.node_id = j.at("node_id").get<NodeId>();
      a.family = j.at("family").get<std::string>();
      if (j.contains("kind") && !j.at("kind").is_null()) a.kind = parse_family_kind(j.at("kind").get<std::string>());
      a.decided_at = timestamp_field(j);
      return {a};
    }
    throw WorkbenchError(400, "bad_event", fmt::format("unknown event type '{}'", type));
  } catch (const json::exception& e) {
    throw WorkbenchError(400, "malformed_request", e.what());
  } catch (const FormatError& e) {
    throw WorkbenchError(400, "malformed_request", e.what());
  }
}

json to_json(const HostLabel& h) {
  return {{"host", h.host}, {"family_id", h.family_id}, {"vote_counts", h.vote_counts}};
}

RefinementSession::RefinementSession(WorkbenchInputs inputs)
    : in_(std::make_shared<const WorkbenchInputs>(std::move(inputs))) {
  const auto& tree = in_->tree;
  if (tree.nodes.empty()) throw WorkbenchError(400, "inconsistent_inputs", "empty tree");

  std::set<std::string> leaf_ids;
  for (const auto& n : tree.nodes) {
    if (n.is_leaf()) leaf_ids.insert(n.log_id);
  }
  std::set<std::string> corpus_ids;
  for (const auto& log : in_->corpus) corpus_ids.insert(log.log_id);
  if (leaf_ids != corpus_ids) {
    throw WorkbenchError(400, "inconsistent_inputs", "tree leaves and corpus logs differ");
  }

  std::vector<int> covered(tree.leaf_count(), 0);
  for (const NodeId c : in_->partition.clusters) {
    if (!tree.contains(c)) {
      throw WorkbenchError(400, "inconsistent_inputs", fmt::format("partition names unknown node {}", c));
    }
    for (const NodeId leaf : tree.leaves_under(c)) ++covered[static_cast<std::size_t>(leaf)];
  }
  if (std::any_of(covered.begin(), covered.end(), [](int c) { return c != 1; })) {
    throw WorkbenchError(400, "inconsistent_inputs", "partition does not cover each leaf exactly once");
  }
  for (const auto& n : tree.nodes) {
    if (!in_->templates.count(n.id)) {
      throw WorkbenchError(400, "inconsistent_inputs", fmt::format("no template for node {}", n.id));
    }
  }

  parent_ = tree.parents();
  families_[std::string(kUnassignedFamily)] = {std::string(kUnassignedFamily), {}, FamilyKind::kLoader, false};
  for (const NodeId c : in_->partition.clusters) {
    working_.insert(c);
    add_provisional(c);
  }
}

const Template* RefinementSession::template_of(NodeId id) const {
  const auto it = in_->templates.find(id);
  return it == in_->templates.end() ? nullptr : &it->second;
}

std::map<NodeId, Decision> RefinementSession::active_decisions() const {
  std::map<NodeId, Decision> active;
  for (const auto& e : events_) {
    if (const auto* d = std::get_if<Decision>(&e.event)) active[d->node_id] = *d;
  }
  return active;
}

std::string RefinementSession::provisional_name(NodeId id) const { return fmt::format("cluster-{}", id); }

void RefinementSession::add_provisional(NodeId id) {
  const auto name = provisional_name(id);
  auto& f = families_[name];
  f.family_id = name;
  f.provisional = true;
  f.member_clusters.insert(id);
}

void RefinementSession::remove_cluster(NodeId id) {
  working_.erase(id);
  for (auto& [name, f] : families_) f.member_clusters.erase(id);
}

void RefinementSession::drop_empty_provisional() {
  std::erase_if(families_, [](const auto& kv) { return kv.second.provisional && kv.second.member_clusters.empty(); });
}

std::string RefinementSession::family_of_cluster(NodeId cluster) const {
  for (const auto& [name, f] : families_) {
    if (f.member_clusters.count(cluster)) return name;
  }
  return std::string(kUnassignedFamily);
}

void RefinementSession::apply(const Decision& d) {
  const auto& tree = in_->tree;
  if (!tree.contains(d.node_id)) throw WorkbenchError(404, "unknown_node", fmt::format("no node {}", d.node_id));
  for (const auto& tag : d.criteria_tags) {
    if (std::find(kCriteriaTags.begin(), kCriteriaTags.end(), tag) == kCriteriaTags.end()) {
      throw WorkbenchError(400, "bad_criteria_tag", fmt::format("unknown criteria tag '{}'", tag));
    }
  }
  if (!working_.count(d.node_id)) {
    throw WorkbenchError(400, "not_working", fmt::format("node {} is not a working cluster", d.node_id));
  }
  const auto& node = tree.node(d.node_id);

  switch (d.action) {
    case DecisionAction::kKeep: break;
    case DecisionAction::kSplitIntoChildren: {
      if (node.is_leaf()) throw WorkbenchError(400, "leaf_cannot_split", fmt::format("node {} is a leaf", d.node_id));
      remove_cluster(d.node_id);
      for (const NodeId child : {node.left, node.right}) {
        working_.insert(child);
        add_provisional(child);
      }
      break;
    }
    case DecisionAction::kMergeIntoParent: {
      const NodeId parent = parent_[static_cast<std::size_t>(d.node_id)];
      if (parent == kNoNode) throw WorkbenchError(400, "root_has_no_parent", "the root cannot merge into a parent");
      const auto family = family_of_cluster(d.node_id);
      const bool keep_family = !families_.at(family).provisional;
      const auto leaves = tree.leaves_under(parent);
      const std::set<NodeId> under(leaves.begin(), leaves.end());
      std::vector<NodeId> absorbed;
      for (const NodeId c : working_) {
        const auto cl = tree.leaves_under(c);
        if (under.count(cl.front())) absorbed.push_back(c);
      }
      for (const NodeId c : absorbed) remove_cluster(c);
      working_.insert(parent);
      if (keep_family) families_.at(family).member_clusters.insert(parent);
      else add_provisional(parent);
      break;
    }
  }
  drop_empty_provisional();
  events_.push_back({d});
}

void RefinementSession::apply(const FamilyAssignment& a) {
  if (!in_->tree.contains(a.node_id)) throw WorkbenchError(404, "unknown_node", fmt::format("no node {}", a.node_id));
  if (!working_.count(a.node_id)) {
    throw WorkbenchError(400, "not_working", fmt::format("node {} is not a working cluster", a.node_id));
  }
  if (a.family.empty()) throw WorkbenchError(400, "bad_family", "family name is empty");
  if (a.family.rfind("cluster-", 0) == 0) {
    throw WorkbenchError(400, "bad_family", "names starting with 'cluster-' are reserved for provisional families");
  }
  for (auto& [name, f] : families_) f.member_clusters.erase(a.node_id);
  auto& f = families_[a.family];
  f.family_id = a.family;
  f.member_clusters.insert(a.node_id);
  if (a.kind) f.kind = *a.kind;
  drop_empty_provisional();
  events_.push_back({a});
}

void RefinementSession::apply(const WorkbenchEvent& e) {
  std::visit([this](const auto& v) { apply(v); }, e.event);
}

std::vector<std::string> RefinementSession::leaf_families() const {
  std::vector<std::string> out(in_->tree.leaf_count(), std::string(kUnassignedFamily));
  for (const NodeId c : working_) {
    const auto family = family_of_cluster(c);
    for (const NodeId leaf : in_->tree.leaves_under(c)) out[static_cast<std::size_t>(leaf)] = family;
  }
  return out;
}

bool RefinementSession::scanner_suggested(const FamilyDef& f) const {
  if (f.member_clusters.empty()) return false;
  for (const NodeId c : f.member_clusters) {
    for (const auto& slot : in_->templates.at(c).slots) {
      if (!slot.is_gap() && is_download_token(*slot.token)) return false;
    }
  }
  return true;
}

std::vector<HostLabel> RefinementSession::label_hosts() const {
  const auto& tree = in_->tree;
  const auto families = leaf_families();
  std::map<std::string, std::string> family_of_log;
  for (const auto& n : tree.nodes) {
    if (n.is_leaf()) family_of_log[n.log_id] = families[static_cast<std::size_t>(n.id)];
  }
  std::map<std::string, std::map<std::string, std::size_t>> votes;
  for (const auto& log : in_->corpus) ++votes[log.source_host][family_of_log.at(log.log_id)];

  std::vector<HostLabel> labels;
  for (auto& [host, counts] : votes) {
    // std::map iterates names in ascending order, so the first maximum wins ties.
    const auto best = std::max_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    labels.push_back({host, best->first, counts});
  }
  return labels;
}

json RefinementSession::families_json() const {
  const auto leaves = leaf_families();
  json list = json::array();
  for (const auto& [name, f] : families_) {
    const auto leaf_count = std::count(leaves.begin(), leaves.end(), name);
    list.push_back({{"family_id", name},
                    {"name", name},
                    {"kind", to_string(f.kind)},
                    {"provisional", f.provisional},
                    {"member_clusters", f.member_clusters},
                    {"leaf_count", leaf_count},
                    {"scanner_suggested", scanner_suggested(f)}});
  }
  return {{"working_set", working_}, {"families", list}};
}

json RefinementSession::partition_json() const {
  json j = to_json(in_->tree, Partition{in_->partition.threshold, {working_.begin(), working_.end()}});
  for (auto& c : j.at("clusters")) c["family_id"] = family_of_cluster(c.at("node_id").get<NodeId>());
  return j;
}

json RefinementSession::report(const HostMetadataTable* metadata) const {
  const auto& tree = in_->tree;
  const auto leaves = leaf_families();
  const auto labels = label_hosts();

  json families = json::array();
  for (const auto& [name, f] : families_) {
    json entry = {{"family_id", name},
                  {"kind", to_string(f.kind)},
                  {"scanner_suggested", scanner_suggested(f)},
                  {"member_clusters", f.member_clusters},
                  {"cluster_count", f.member_clusters.size()},
                  {"leaf_count", std::count(leaves.begin(), leaves.end(), name)}};

    NodeId representative = kNoNode;
    for (const NodeId c : f.member_clusters) {
      if (representative == kNoNode || tree.node(c).size > tree.node(representative).size) representative = c;
    }
    entry["representative_template"] =
        representative == kNoNode ? json(nullptr) : json(render_template(in_->templates.at(representative)));

    std::vector<std::string> hosts;
    for (const auto& h : labels) {
      if (h.family_id == name) hosts.push_back(h.host);
    }
    entry["host_count"] = hosts.size();
    entry["hosts"] = hosts;
    if (metadata) {
      std::map<std::string, std::size_t> countries;
      std::map<std::string, json> asns;
      for (const auto& h : hosts) {
        const auto it = metadata->hosts.find(h);
        if (it == metadata->hosts.end()) continue;
        ++countries[it->second.country];
        auto& as = asns[it->second.asn];
        if (as.is_null()) as = {{"asn", it->second.asn}, {"as_name", it->second.as_name}, {"hosts", 0}};
        as["hosts"] = as["hosts"].get<std::size_t>() + 1;
      }
      entry["countries"] = countries;
      json as_list = json::array();
      for (auto& [asn, as] : asns) as_list.push_back(as);
      entry["autonomous_systems"] = as_list;
    }
    families.push_back(std::move(entry));
  }

  json out = {{"threshold", in_->partition.threshold},
              {"working_clusters", working_.size()},
              {"host_count", labels.size()},
              {"leaf_count", tree.leaf_count()},
              {"families", families}};
  if (metadata) {
    std::size_t unmatched = 0;
    for (const auto& h : labels) unmatched += metadata->hosts.count(h.host) ? 0 : 1;
    out["metadata"] = {{"rows", metadata->hosts.size()},
                       {"malformed_rows", metadata->malformed_rows},
                       {"unmatched_hosts", unmatched}};
  }
  return out;
}

void RefinementSession::save(const fs::path& dir) const {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "families.json", std::ios::binary | std::ios::trunc);
    out << families_json().dump(2) << '\n';
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", (dir / "families.json").string()));
  }
  std::ofstream out(dir / "decisions.jsonl", std::ios::binary | std::ios::trunc);
  for (const auto& e : events_) out << to_json(e).dump() << '\n';
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", (dir / "decisions.jsonl").string()));
}

RefinementSession RefinementSession::restore(WorkbenchInputs inputs, const fs::path& dir) {
  RefinementSession session(std::move(inputs));
  std::ifstream in(dir / "decisions.jsonl", std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", (dir / "decisions.jsonl").string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("decisions.jsonl: {}", e.what()));
    }
    session.apply(workbench_event_from_json(j));
  }
  return session;
}

WorkbenchInputs load_workbench_inputs(const fs::path& tree, const fs::path& templates, const fs::path& partition,
                                      const fs::path& corpus) {
  return {read_tree(tree), read_templates(templates), read_partition(partition), read_corpus(corpus)};
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& reason, const std::string& message) {
  send_json(res, {{"error", reason}, {"message", message}}, status);
}

NodeId node_param(const httplib::Request& req) {
  const std::string text = req.matches[1];
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used == text.size()) return static_cast<NodeId>(v);
  } catch (const std::exception&) {
  }
  throw WorkbenchError(400, "bad_node_id", fmt::format("'{}' is not a node id", text));
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw WorkbenchError(400, "malformed_request", "body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw WorkbenchError(400, "malformed_request", e.what());
  }
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const WorkbenchError& e) {
      send_error(res, e.status(), e.reason(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

WorkbenchServer::WorkbenchServer(RefinementSession session, fs::path export_dir,
                                 std::optional<HostMetadataTable> metadata)
    : session_(std::move(session)), export_dir_(std::move(export_dir)), metadata_(std::move(metadata)),
      server_(std::make_unique<httplib::Server>()) {
  routes();
}

WorkbenchServer::~WorkbenchServer() { stop(); }

void WorkbenchServer::routes() {
  auto& s = *server_;
  s.Get("/api/tree", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::shared_lock lock(mu_);
          send_json(res, to_json(session_.tree()));
        }));
  s.Get(R"(/api/node/([^/]+)/template)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const NodeId id = node_param(req);
          std::shared_lock lock(mu_);
          const auto* t = session_.template_of(id);
          if (!t) throw WorkbenchError(404, "unknown_node", fmt::format("no node {}", id));
          json j = to_json(*t);
          j["rendered"] = render_template(*t);
          j["working"] = session_.working_set().count(id) > 0;
          send_json(res, j);
        }));
  s.Get("/api/partition", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::shared_lock lock(mu_);
          send_json(res, session_.partition_json());
        }));
  s.Get("/api/families", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::shared_lock lock(mu_);
          send_json(res, session_.families_json());
        }));
  s.Get("/api/hosts/labels", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::shared_lock lock(mu_);
          json list = json::array();
          for (const auto& h : session_.label_hosts()) list.push_back(to_json(h));
          send_json(res, list);
        }));
  s.Get("/api/decisions", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::shared_lock lock(mu_);
          json list = json::array();
          for (const auto& e : session_.events()) list.push_back(to_json(e));
          send_json(res, list);
        }));
  s.Get("/api/report", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::shared_lock lock(mu_);
          send_json(res, session_.report(metadata_ ? &*metadata_ : nullptr));
        }));
  s.Post(R"(/api/node/([^/]+)/decision)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const NodeId id = node_param(req);
           json body = body_json(req);
           body["type"] = "decision";
           body["node_id"] = id;
           if (!body.contains("action")) throw WorkbenchError(400, "malformed_request", "missing action");
           const auto event = workbench_event_from_json(body);
           std::unique_lock lock(mu_);
           session_.apply(event);
           send_json(res, {{"accepted", to_json(session_.events().back())}, {"partition", session_.partition_json()}});
         }));
  s.Post(R"(/api/node/([^/]+)/family)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const NodeId id = node_param(req);
           json body = body_json(req);
           body["type"] = "assign";
           body["node_id"] = id;
           const auto event = workbench_event_from_json(body);
           std::unique_lock lock(mu_);
           session_.apply(event);
           send_json(res, {{"accepted", to_json(session_.events().back())}, {"families", session_.families_json()}});
         }));
  s.Post("/api/export", guarded([this](const httplib::Request&, httplib::Response& res) {
           std::unique_lock lock(mu_);
           session_.save(export_dir_);
           send_json(res, {{"families", (export_dir_ / "families.json").string()},
                           {"decisions", (export_dir_ / "decisions.jsonl").string()}});
         }));
}

void WorkbenchServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else if (server_->bind_to_port(host, port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw std::runtime_error(fmt::format("cannot bind {}:{}", host, port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void WorkbenchServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace loadermine
