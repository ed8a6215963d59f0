#pragma once

#include "loadermine/vectorizer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace loadermine {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

// Dense symmetric matrix, row-major.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, double v) {
    d_[i * n_ + j] = v;
    d_[j * n_ + i] = v;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

class ClusterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Euclidean distances between sparse count vectors, optionally scaling each
// dimension. Throws ClusterError on fewer than two vectors or mixed vocabularies.
DistanceMatrix pairwise_distance(const std::vector<FeatureVector>& vectors,
                                 std::span<const double> dimension_scales = {});

struct DendroNode {
  NodeId id = kNoNode;
  NodeId left = kNoNode;  // kNoNode for leaves
  NodeId right = kNoNode;
  double height = 0.0;
  std::size_t size = 1;
  std::string log_id;  // leaves only

  bool is_leaf() const { return left == kNoNode; }
  bool operator==(const DendroNode&) const = default;
};

// Leaves are ids 0..N-1 in input order; internal nodes are N..2N-2 in merge order.
struct DendroTree {
  std::vector<DendroNode> nodes;
  NodeId root = kNoNode;
  std::vector<NodeId> leaf_order;

  std::size_t leaf_count() const { return (nodes.size() + 1) / 2; }
  const DendroNode& node(NodeId id) const { return nodes.at(static_cast<std::size_t>(id)); }
  bool contains(NodeId id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes.size(); }
  std::vector<NodeId> parents() const;
  std::vector<NodeId> leaves_under(NodeId id) const;

  bool operator==(const DendroTree&) const = default;
};

// Ward linkage over Euclidean distances, Lance-Williams update. Ties on the
// minimal distance go to the lexicographically smallest (min id, max id) pair.
DendroTree agglomerate(const DistanceMatrix& distances, const std::vector<std::string>& log_ids = {});

struct Partition {
  double threshold = 0.0;
  std::vector<NodeId> clusters;  // ascending

  bool operator==(const Partition&) const = default;
};

// Maximal nodes whose height is below the threshold. Throws on threshold <= 0.
Partition cut(const DendroTree& tree, double threshold);

struct ClusterMetrics {
  std::size_t cluster_count = 0;
  double ari = 0.0;
};

// Adjusted Rand Index of two labelings over the same items.
double adjusted_rand_index(std::span<const int> predicted, std::span<const int> truth);

// `truth` is indexed by leaf id.
ClusterMetrics cluster_metrics(const DendroTree& tree, const Partition& partition, std::span<const int> truth);

// Leaf id -> position of its cluster in partition.clusters.
std::vector<int> assignment_of(const DendroTree& tree, const Partition& partition);

nlohmann::json to_json(const DendroTree& tree);
DendroTree tree_from_json(const nlohmann::json& j);
void write_tree(const std::filesystem::path& path, const DendroTree& tree);
DendroTree read_tree(const std::filesystem::path& path);

nlohmann::json to_json(const DendroTree& tree, const Partition& partition);
Partition partition_from_json(const nlohmann::json& j);
void write_partition(const std::filesystem::path& path, const DendroTree& tree, const Partition& partition);
Partition read_partition(const std::filesystem::path& path);

}  // namespace loadermine
