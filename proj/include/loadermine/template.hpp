#pragma once

#include "loadermine/cluster.hpp"
#include "loadermine/tokenizer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

namespace loadermine {

// A template slot is either a literal token (bytes) or a GAP placeholder.
struct Slot {
  std::optional<Bytes> token;  // nullopt == GAP

  static Slot gap() { return {}; }
  static Slot of(Bytes b) { return {std::move(b)}; }
  bool is_gap() const { return !token.has_value(); }
  auto operator<=>(const Slot&) const = default;
};

struct Template {
  NodeId node_id = kNoNode;
  std::vector<Slot> slots;

  // Fraction of token slots among all slots; 1 for an empty template.
  double stability() const;
  std::size_t token_count() const;
  std::vector<Bytes> tokens() const;

  static Template from_tokens(const std::vector<Token>& tokens, NodeId node_id = kNoNode);
  bool operator==(const Template& other) const { return slots == other.slots; }
};

struct AlignmentParams {
  double match_score = 1.0;
  double gap_token_penalty = 0.0;  // slot aligned against nothing
  double gap_vs_gap_score = 0.0;   // GAP aligned against GAP

  // Throws std::invalid_argument unless match_score > 0 and gap_token_penalty <= 0.
  void validate() const;
};

// Global alignment that keeps identical token pairs and turns every other
// column into a GAP, collapsing GAP runs. Symmetric in its arguments.
Template align(const Template& a, const Template& b, const AlignmentParams& params = {});

// Leaf templates are the token sequences; internal nodes align their children.
std::map<NodeId, Template> build_templates(const DendroTree& tree, const std::vector<TokenSequence>& sequences,
                                           const AlignmentParams& params = {});

// Printable ASCII verbatim except '\'; everything else as \xNN. GAP is "⟨*⟩".
std::string render_template(const Template& t);
std::string render_tokens(const std::vector<Bytes>& tokens);

nlohmann::json to_json(const Template& t);
Template template_from_json(const nlohmann::json& j);
void write_templates(const std::filesystem::path& path, const std::map<NodeId, Template>& templates);
std::map<NodeId, Template> read_templates(const std::filesystem::path& path);

}  // namespace loadermine
