#pragma once

#include "loadermine/cluster.hpp"
#include "loadermine/family.hpp"
#include "loadermine/preprocess.hpp"
#include "loadermine/template.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace httplib {
class Server;
}

namespace loadermine {

enum class DecisionAction : std::uint8_t { kKeep, kMergeIntoParent, kSplitIntoChildren };
std::string_view to_string(DecisionAction a);
DecisionAction parse_decision_action(std::string_view s);

inline constexpr std::array<std::string_view, 3> kCriteriaTags = {"commands_and_order", "statement_structure",
                                                                  "identity_token_ignored"};

struct Decision {
  NodeId node_id = kNoNode;
  DecisionAction action = DecisionAction::kKeep;
  std::string rationale;
  std::vector<std::string> criteria_tags;
  Timestamp decided_at{};
};

// Moves a working cluster into the named family, creating it if needed.
struct FamilyAssignment {
  NodeId node_id = kNoNode;
  std::string family;
  std::optional<FamilyKind> kind;
  Timestamp decided_at{};
};

// One entry of the append-only event log.
struct WorkbenchEvent {
  std::variant<Decision, FamilyAssignment> event;
};

struct FamilyDef {
  std::string family_id;  // also its display name
  std::set<NodeId> member_clusters;
  FamilyKind kind{};
  bool provisional = false;  // created automatically for a working cluster
};

struct HostLabel {
  std::string host;
  std::string family_id;
  std::map<std::string, std::size_t> vote_counts;
};

// Carries an HTTP-style status: 400 for a rejected request, 404 for an unknown node.
class WorkbenchError : public std::runtime_error {
 public:
  WorkbenchError(int status, std::string reason, const std::string& message)
      : std::runtime_error(message), status_(status), reason_(std::move(reason)) {}
  int status() const { return status_; }
  const std::string& reason() const { return reason_; }

 private:
  int status_;
  std::string reason_;
};

inline constexpr std::string_view kUnassignedFamily = "unassigned";

struct HostMetadata {
  std::string country;
  std::string asn;
  std::string as_name;
};

struct HostMetadataTable {
  std::map<std::string, HostMetadata> hosts;
  std::size_t malformed_rows = 0;
};

// CSV with header host,country,asn,as_name. Malformed rows are counted and skipped.
HostMetadataTable parse_host_metadata(std::istream& in);
HostMetadataTable read_host_metadata(const std::filesystem::path& path);

struct WorkbenchInputs {
  DendroTree tree;
  std::map<NodeId, Template> templates;
  Partition partition;
  std::vector<RequestLog> corpus;
};

class RefinementSession {
 public:
  // Throws WorkbenchError(400) when the inputs disagree on the leaf set.
  explicit RefinementSession(WorkbenchInputs inputs);

  const DendroTree& tree() const { return in_->tree; }
  const std::vector<RequestLog>& corpus() const { return in_->corpus; }
  const Template* template_of(NodeId id) const;
  const Partition& initial_partition() const { return in_->partition; }

  const std::set<NodeId>& working_set() const { return working_; }
  const std::map<std::string, FamilyDef>& families() const { return families_; }
  const std::vector<WorkbenchEvent>& events() const { return events_; }
  // Latest decision per node.
  std::map<NodeId, Decision> active_decisions() const;

  // Validates fully before changing anything; throws WorkbenchError.
  void apply(const Decision& d);
  void apply(const FamilyAssignment& a);
  void apply(const WorkbenchEvent& e);

  std::string family_of_cluster(NodeId cluster) const;
  // Leaf id -> family id.
  std::vector<std::string> leaf_families() const;
  // True when no member template holds a download command token.
  bool scanner_suggested(const FamilyDef& f) const;

  std::vector<HostLabel> label_hosts() const;

  nlohmann::json families_json() const;
  nlohmann::json partition_json() const;
  nlohmann::json report(const HostMetadataTable* metadata = nullptr) const;

  // families.json and decisions.jsonl.
  void save(const std::filesystem::path& dir) const;
  // Replays dir/decisions.jsonl on a fresh session over the same inputs.
  static RefinementSession restore(WorkbenchInputs inputs, const std::filesystem::path& dir);

 private:
  std::string provisional_name(NodeId id) const;
  void add_provisional(NodeId id);
  void remove_cluster(NodeId id);
  void drop_empty_provisional();

  std::shared_ptr<const WorkbenchInputs> in_;
  std::vector<NodeId> parent_;
  std::set<NodeId> working_;
  std::map<std::string, FamilyDef> families_;
  std::vector<WorkbenchEvent> events_;
};

// Download command tokens whose absence marks a scanner candidate.
inline constexpr std::array<std::string_view, 4> kDownloadTokens = {"wget", "tftp", "curl", "ftpget"};

nlohmann::json to_json(const Decision& d);
nlohmann::json to_json(const FamilyAssignment& a);
nlohmann::json to_json(const WorkbenchEvent& e);
WorkbenchEvent workbench_event_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HostLabel& h);

WorkbenchInputs load_workbench_inputs(const std::filesystem::path& tree, const std::filesystem::path& templates,
                                      const std::filesystem::path& partition, const std::filesystem::path& corpus);

// HTTP JSON API over a session. Reads share a lock; each mutation holds it exclusively.
class WorkbenchServer {
 public:
  WorkbenchServer(RefinementSession session, std::filesystem::path export_dir,
                  std::optional<HostMetadataTable> metadata = std::nullopt);
  ~WorkbenchServer();
  WorkbenchServer(const WorkbenchServer&) = delete;
  WorkbenchServer& operator=(const WorkbenchServer&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  void start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void routes();

  RefinementSession session_;
  std::filesystem::path export_dir_;
  std::optional<HostMetadataTable> metadata_;
  mutable std::shared_mutex mu_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace loadermine
