#include "loadermine/template.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

using nlohmann::json;

double Template::stability() const {
  if (slots.empty()) return 1.0;
  return static_cast<double>(token_count()) / static_cast<double>(slots.size());
}

std::size_t Template::token_count() const {
  return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const Slot& s) { return !s.is_gap(); }));
}

std::vector<Bytes> Template::tokens() const {
  std::vector<Bytes> out;
  for (const auto& s : slots) {
    if (!s.is_gap()) out.push_back(*s.token);
  }
  return out;
}

Template Template::from_tokens(const std::vector<Token>& tokens, NodeId node_id) {
  Template t;
  t.node_id = node_id;
  t.slots.reserve(tokens.size());
  for (const auto& tok : tokens) t.slots.push_back(Slot::of(tok.bytes));
  return t;
}

void AlignmentParams::validate() const {
  if (!(match_score > 0.0)) throw std::invalid_argument("match_score must be positive");
  if (gap_token_penalty > 0.0) throw std::invalid_argument("gap_token_penalty must be nonpositive");
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEps = 1e-9;

enum Move : std::uint8_t { kDiag, kUp, kLeft };

double column_score(const Slot& x, const Slot& y, const AlignmentParams& p) {
  if (x.is_gap() && y.is_gap()) return p.gap_vs_gap_score;
  if (x.is_gap() || y.is_gap()) return 0.0;
  return *x.token == *y.token ? p.match_score : kNegInf;
}

void push_gap(std::vector<Slot>& out) {
  if (out.empty() || !out.back().is_gap()) out.push_back(Slot::gap());
}

}  // namespace

Template align(const Template& first, const Template& second, const AlignmentParams& params) {
  // Canonical argument order makes the traceback tie-break symmetric.
  const bool swap = second.slots < first.slots;
  const auto& a = swap ? second.slots : first.slots;
  const auto& b = swap ? first.slots : second.slots;
  const std::size_t m = a.size();
  const std::size_t n = b.size();

  std::vector<double> score((m + 1) * (n + 1), 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return score[i * (n + 1) + j]; };
  for (std::size_t i = 1; i <= m; ++i) at(i, 0) = at(i - 1, 0) + params.gap_token_penalty;
  for (std::size_t j = 1; j <= n; ++j) at(0, j) = at(0, j - 1) + params.gap_token_penalty;
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      const double diag = at(i - 1, j - 1) + column_score(a[i - 1], b[j - 1], params);
      const double up = at(i - 1, j) + params.gap_token_penalty;
      const double left = at(i, j - 1) + params.gap_token_penalty;
      at(i, j) = std::max({diag, up, left});
    }
  }

  // Traceback prefers diagonal, then up, then left.
  std::vector<Slot> reversed;
  std::size_t i = m;
  std::size_t j = n;
  while (i > 0 || j > 0) {
    const double here = at(i, j);
    if (i > 0 && j > 0) {
      const double col = column_score(a[i - 1], b[j - 1], params);
      if (col != kNegInf && std::abs(at(i - 1, j - 1) + col - here) <= kEps) {
        const bool match = !a[i - 1].is_gap() && !b[j - 1].is_gap();
        if (match) reversed.push_back(a[i - 1]);
        else push_gap(reversed);
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && std::abs(at(i - 1, j) + params.gap_token_penalty - here) <= kEps) {
      push_gap(reversed);
      --i;
    } else {
      push_gap(reversed);
      --j;
    }
  }

  Template out;
  out.slots.assign(reversed.rbegin(), reversed.rend());
  return out;
}

std::map<NodeId, Template> build_templates(const DendroTree& tree, const std::vector<TokenSequence>& sequences,
                                           const AlignmentParams& params) {
  params.validate();
  std::unordered_map<std::string, const TokenSequence*> by_log;
  for (const auto& s : sequences) by_log.emplace(s.log_id, &s);

  std::map<NodeId, Template> templates;
  // Children always precede their parent in id order.
  for (const auto& node : tree.nodes) {
    if (node.is_leaf()) {
      const auto it = by_log.find(node.log_id);
      if (it == by_log.end()) {
        throw std::invalid_argument(fmt::format("no token sequence for leaf log '{}'", node.log_id));
      }
      templates[node.id] = Template::from_tokens(it->second->tokens, node.id);
    } else {
      Template t = align(templates.at(node.left), templates.at(node.right), params);
      t.node_id = node.id;
      templates[node.id] = std::move(t);
    }
  }
  return templates;
}

std::string render_tokens(const std::vector<Bytes>& tokens) {
  std::string out;
  for (const auto& tok : tokens) {
    for (const char c : tok) {
      const auto b = static_cast<unsigned char>(c);
      if (b >= 0x20 && b <= 0x7E && b != '\\') out.push_back(c);
      else out += fmt::format("\\x{:02x}", b);
    }
  }
  return out;
}

std::string render_template(const Template& t) {
  std::string out;
  for (const auto& s : t.slots) {
    if (s.is_gap()) out += "⟨*⟩";
    else out += render_tokens({*s.token});
  }
  return out;
}

json to_json(const Template& t) {
  json slots = json::array();
  for (const auto& s : t.slots) {
    if (s.is_gap()) slots.push_back({{"gap", true}});
    else slots.push_back({{"t", base64_encode(*s.token)}});
  }
  return {{"node_id", t.node_id}, {"slots", std::move(slots)}, {"stability", t.stability()}};
}

Template template_from_json(const json& j) {
  try {
    Template t;
    t.node_id = j.at("node_id").get<NodeId>();
    for (const auto& s : j.at("slots")) {
      if (s.contains("t")) t.slots.push_back(Slot::of(base64_decode(s.at("t").get<std::string>())));
      else t.slots.push_back(Slot::gap());
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed template: {}", e.what()));
  }
}

void write_templates(const std::filesystem::path& path, const std::map<NodeId, Template>& templates) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (const auto& [id, t] : templates) out << to_json(t).dump() << '\n';
}

std::map<NodeId, Template> read_templates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::map<NodeId, Template> templates;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto t = template_from_json(json::parse(line));
      templates[t.node_id] = std::move(t);
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return templates;
}

}  // namespace loadermine
