#include "loadermine/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

using nlohmann::json;

namespace {

// Relative tolerance under which two merge costs count as tied.
constexpr double kTieTolerance = 1e-12;

double squared_distance(const FeatureVector& a, const FeatureVector& b, std::span<const double> scales) {
  auto scale = [&](std::uint32_t index) { return scales.empty() ? 1.0 : scales[index]; };
  double sum = 0.0;
  auto ia = a.counts.begin();
  auto ib = b.counts.begin();
  while (ia != a.counts.end() || ib != b.counts.end()) {
    double diff;
    std::uint32_t index;
    if (ib == b.counts.end() || (ia != a.counts.end() && ia->first < ib->first)) {
      index = ia->first;
      diff = ia->second;
      ++ia;
    } else if (ia == a.counts.end() || ib->first < ia->first) {
      index = ib->first;
      diff = -static_cast<double>(ib->second);
      ++ib;
    } else {
      index = ia->first;
      diff = static_cast<double>(ia->second) - static_cast<double>(ib->second);
      ++ia;
      ++ib;
    }
    diff *= scale(index);
    sum += diff * diff;
  }
  return sum;
}

}  // namespace

DistanceMatrix pairwise_distance(const std::vector<FeatureVector>& vectors, std::span<const double> scales) {
  if (vectors.size() < 2) throw ClusterError("pairwise_distance needs at least two vectors");
  const std::size_t dim = vectors.front().dim;
  for (const auto& v : vectors) {
    if (v.dim != dim) {
      throw ClusterError(fmt::format("vector '{}' has dimension {}, expected {}", v.log_id, v.dim, dim));
    }
  }
  if (!scales.empty() && scales.size() != dim) {
    throw ClusterError(fmt::format("{} dimension scales for {} dimensions", scales.size(), dim));
  }
  DistanceMatrix d(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      d.set(i, j, std::sqrt(squared_distance(vectors[i], vectors[j], scales)));
    }
  }
  return d;
}

std::vector<NodeId> DendroTree::parents() const {
  std::vector<NodeId> parent(nodes.size(), kNoNode);
  for (const auto& n : nodes) {
    if (n.is_leaf()) continue;
    parent[static_cast<std::size_t>(n.left)] = n.id;
    parent[static_cast<std::size_t>(n.right)] = n.id;
  }
  return parent;
}

std::vector<NodeId> DendroTree::leaves_under(NodeId id) const {
  std::vector<NodeId> leaves;
  std::vector<NodeId> stack{id};
  while (!stack.empty()) {
    const auto& n = node(stack.back());
    stack.pop_back();
    if (n.is_leaf()) {
      leaves.push_back(n.id);
    } else {
      stack.push_back(n.right);
      stack.push_back(n.left);
    }
  }
  return leaves;
}

DendroTree agglomerate(const DistanceMatrix& distances, const std::vector<std::string>& log_ids) {
  const std::size_t n = distances.size();
  if (n < 2) throw ClusterError("agglomerate needs at least two observations");
  if (!log_ids.empty() && log_ids.size() != n) throw ClusterError("log id count does not match the matrix");

  DendroTree tree;
  tree.nodes.reserve(2 * n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    DendroNode leaf;
    leaf.id = static_cast<NodeId>(i);
    leaf.log_id = log_ids.empty() ? std::to_string(i) : log_ids[i];
    tree.nodes.push_back(std::move(leaf));
  }

  // Squared Ward costs between active slots; slot s holds cluster node_of[s].
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = distances(i, j) * distances(i, j);
  }
  std::vector<NodeId> node_of(n);
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) {
    node_of[i] = static_cast<NodeId>(i);
    active[i] = i;
  }

  for (std::size_t step = 0; step + 1 < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    std::size_t bj = 0;
    std::pair<NodeId, NodeId> best_ids{std::numeric_limits<NodeId>::max(), 0};
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const std::size_t i = active[a];
        const std::size_t j = active[b];
        const double c = cost[i * n + j];
        const std::pair ids{std::min(node_of[i], node_of[j]), std::max(node_of[i], node_of[j])};
        const double tol = kTieTolerance * std::max(1.0, best);
        const bool better = c < best - tol || (std::abs(c - best) <= tol && ids < best_ids);
        if (better) {
          best = c;
          bi = i;
          bj = j;
          best_ids = ids;
        }
      }
    }

    const auto& left = tree.node(best_ids.first);
    const auto& right = tree.node(best_ids.second);
    DendroNode merged;
    merged.id = static_cast<NodeId>(n + step);
    merged.left = best_ids.first;
    merged.right = best_ids.second;
    merged.size = left.size + right.size;
    // Rounding must not produce an inversion.
    merged.height = std::max({std::sqrt(std::max(best, 0.0)), left.height, right.height});
    tree.nodes.push_back(merged);

    // Lance-Williams for Ward on squared distances; the merged cluster takes slot bi.
    const double ni = static_cast<double>(size[bi]);
    const double nj = static_cast<double>(size[bj]);
    const double dij = cost[bi * n + bj];
    for (const std::size_t k : active) {
      if (k == bi || k == bj) continue;
      const double nk = static_cast<double>(size[k]);
      const double v = ((ni + nk) * cost[bi * n + k] + (nj + nk) * cost[bj * n + k] - nk * dij) / (ni + nj + nk);
      cost[bi * n + k] = cost[k * n + bi] = std::max(v, 0.0);
    }
    size[bi] += size[bj];
    node_of[bi] = merged.id;
    active.erase(std::find(active.begin(), active.end(), bj));
  }

  tree.root = tree.nodes.back().id;
  std::vector<NodeId> stack{tree.root};
  while (!stack.empty()) {
    const auto& node = tree.node(stack.back());
    stack.pop_back();
    if (node.is_leaf()) {
      tree.leaf_order.push_back(node.id);
    } else {
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
  return tree;
}

Partition cut(const DendroTree& tree, double threshold) {
  if (!(threshold > 0.0)) throw ClusterError("cut threshold must be positive");
  Partition p;
  p.threshold = threshold;
  std::vector<NodeId> stack{tree.root};
  while (!stack.empty()) {
    const auto& node = tree.node(stack.back());
    stack.pop_back();
    if (node.height < threshold) {
      p.clusters.push_back(node.id);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  std::sort(p.clusters.begin(), p.clusters.end());
  return p;
}

double adjusted_rand_index(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ClusterError("labelings differ in length");
  const std::size_t n = predicted.size();
  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<int, int>, std::size_t> cells;
  std::map<int, std::size_t> rows;
  std::map<int, std::size_t> cols;
  for (std::size_t i = 0; i < n; ++i) {
    ++cells[{predicted[i], truth[i]}];
    ++rows[predicted[i]];
    ++cols[truth[i]];
  }
  double index = 0.0;
  for (const auto& [key, c] : cells) index += comb2(static_cast<double>(c));
  double sum_rows = 0.0;
  for (const auto& [key, c] : rows) sum_rows += comb2(static_cast<double>(c));
  double sum_cols = 0.0;
  for (const auto& [key, c] : cols) sum_cols += comb2(static_cast<double>(c));
  const double total = comb2(static_cast<double>(n));
  if (total == 0.0) return 1.0;
  const double expected = sum_rows * sum_cols / total;
  const double max_index = (sum_rows + sum_cols) / 2.0;
  // Both labelings trivial (all-singletons or one cluster): perfect agreement.
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

std::vector<int> assignment_of(const DendroTree& tree, const Partition& partition) {
  std::vector<int> assign(tree.leaf_count(), -1);
  for (std::size_t c = 0; c < partition.clusters.size(); ++c) {
    for (const NodeId leaf : tree.leaves_under(partition.clusters[c])) {
      assign[static_cast<std::size_t>(leaf)] = static_cast<int>(c);
    }
  }
  return assign;
}

ClusterMetrics cluster_metrics(const DendroTree& tree, const Partition& partition, std::span<const int> truth) {
  if (truth.size() != tree.leaf_count()) throw ClusterError("ground truth does not cover every leaf");
  const auto assign = assignment_of(tree, partition);
  return {partition.clusters.size(), adjusted_rand_index(assign, truth)};
}

json to_json(const DendroTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    json node = {{"id", n.id},
                 {"kind", n.is_leaf() ? "leaf" : "internal"},
                 {"height", n.height},
                 {"size", n.size}};
    node["left"] = n.is_leaf() ? json(nullptr) : json(n.left);
    node["right"] = n.is_leaf() ? json(nullptr) : json(n.right);
    node["log_id"] = n.is_leaf() ? json(n.log_id) : json(nullptr);
    nodes.push_back(std::move(node));
  }
  return {{"root", tree.root}, {"leaf_order", tree.leaf_order}, {"nodes", std::move(nodes)}};
}

DendroTree tree_from_json(const json& j) {
  try {
    DendroTree tree;
    tree.root = j.at("root").get<NodeId>();
    for (const auto& jn : j.at("nodes")) {
      DendroNode n;
      n.id = jn.at("id").get<NodeId>();
      n.height = jn.at("height").get<double>();
      n.size = jn.at("size").get<std::size_t>();
      if (jn.at("kind").get<std::string>() == "leaf") {
        n.log_id = jn.at("log_id").get<std::string>();
      } else {
        n.left = jn.at("left").get<NodeId>();
        n.right = jn.at("right").get<NodeId>();
      }
      if (static_cast<std::size_t>(n.id) != tree.nodes.size()) throw FormatError("tree node ids are not dense");
      tree.nodes.push_back(std::move(n));
    }
    if (j.contains("leaf_order")) tree.leaf_order = j.at("leaf_order").get<std::vector<NodeId>>();
    if (!tree.contains(tree.root)) throw FormatError("tree root is not a node");
    for (const auto& n : tree.nodes) {
      if (!n.is_leaf() && (!tree.contains(n.left) || !tree.contains(n.right))) {
        throw FormatError(fmt::format("node {} has a dangling child", n.id));
      }
    }
    return tree;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed tree: {}", e.what()));
  }
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << j.dump() << '\n';
}

}  // namespace

void write_tree(const std::filesystem::path& path, const DendroTree& tree) { write_json_file(path, to_json(tree)); }
DendroTree read_tree(const std::filesystem::path& path) { return tree_from_json(read_json_file(path)); }

json to_json(const DendroTree& tree, const Partition& partition) {
  json clusters = json::array();
  for (const NodeId id : partition.clusters) {
    const auto& node = tree.node(id);
    json leaves = json::array();
    for (const NodeId leaf : tree.leaves_under(id)) leaves.push_back(tree.node(leaf).log_id);
    clusters.push_back({{"node_id", id}, {"height", node.height}, {"size", node.size}, {"leaves", std::move(leaves)}});
  }
  return {{"threshold", partition.threshold}, {"clusters", std::move(clusters)}};
}

Partition partition_from_json(const json& j) {
  try {
    Partition p;
    p.threshold = j.at("threshold").get<double>();
    for (const auto& c : j.at("clusters")) p.clusters.push_back(c.at("node_id").get<NodeId>());
    std::sort(p.clusters.begin(), p.clusters.end());
    return p;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed partition: {}", e.what()));
  }
}

void write_partition(const std::filesystem::path& path, const DendroTree& tree, const Partition& partition) {
  write_json_file(path, to_json(tree, partition));
}

Partition read_partition(const std::filesystem::path& path) { return partition_from_json(read_json_file(path)); }

}  // namespace loadermine
