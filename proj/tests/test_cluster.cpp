#include "loadermine/cluster.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace loadermine;

namespace {

FeatureVector vec(std::string id, std::size_t dim, std::vector<std::pair<std::uint32_t, std::uint32_t>> counts) {
  return {std::move(id), dim, std::move(counts)};
}

DendroTree random_tree(std::mt19937_64& rng, std::size_t n) {
  return agglomerate(pairwise_distance(oracle::random_vectors(rng, n, 6, 4)));
}

}  // namespace

TEST_SUITE("cluster") {
  TEST_CASE("euclidean distances") {
    const auto d = pairwise_distance({vec("a", 3, {{0, 3}}), vec("b", 3, {})});
    CHECK(d(0, 1) == doctest::Approx(3.0));
    const auto e = pairwise_distance({vec("a", 3, {{0, 1}, {1, 2}}), vec("b", 3, {{0, 4}, {2, 2}})});
    CHECK(e(0, 1) == doctest::Approx(std::sqrt(17.0)));
    CHECK(e(1, 0) == e(0, 1));
    CHECK(e(0, 0) == 0.0);
    const auto f = pairwise_distance({vec("a", 2, {{1, 5}}), vec("b", 2, {{1, 5}})});
    CHECK(f(0, 1) == 0.0);
  }

  TEST_CASE("distance errors") {
    CHECK_THROWS_AS(pairwise_distance({vec("a", 1, {})}), ClusterError);
    CHECK_THROWS_AS(pairwise_distance({vec("a", 1, {}), vec("b", 2, {})}), ClusterError);
  }

  TEST_CASE("dimension scales multiply coordinates") {
    const std::vector<double> scales = {2.0, 0.0};
    const auto d = pairwise_distance({vec("a", 2, {{0, 1}, {1, 7}}), vec("b", 2, {{0, 4}})}, scales);
    CHECK(d(0, 1) == doctest::Approx(6.0));
  }

  TEST_CASE("three point ward example") {
    DistanceMatrix d(3);
    d.set(0, 1, 1.0);
    d.set(0, 2, 10.0);
    d.set(1, 2, std::sqrt(101.0));
    const auto tree = agglomerate(d);
    REQUIRE(tree.nodes.size() == 5);
    CHECK(tree.node(3).left == 0);
    CHECK(tree.node(3).right == 1);
    CHECK(tree.node(3).height == doctest::Approx(1.0));
    CHECK(tree.node(4).height == doctest::Approx(std::sqrt(401.0 / 3.0)));
    CHECK(tree.root == 4);
    CHECK(tree.node(4).size == 3);
  }

  TEST_CASE("identical pair merges at zero") {
    const auto tree = agglomerate(pairwise_distance({vec("a", 1, {{0, 2}}), vec("b", 1, {{0, 2}})}));
    CHECK(tree.node(tree.root).height == 0.0);
  }

  TEST_CASE("fewer than two leaves is an error") { CHECK_THROWS_AS(agglomerate(DistanceMatrix(1)), ClusterError); }

  TEST_CASE("ties go to the smallest id pair") {
    DistanceMatrix d(4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) d.set(i, j, 1.0);
    const auto tree = agglomerate(d);
    CHECK(tree.node(4).left == 0);
    CHECK(tree.node(4).right == 1);
    CHECK(tree.node(5).left == 2);
    CHECK(tree.node(5).right == 3);
  }

  TEST_CASE("random 8-point sets match the brute-force agglomerator") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::vector<double>> points;
      std::vector<FeatureVector> vectors;
      for (int i = 0; i < 8; ++i) {
        std::vector<double> p;
        FeatureVector v{"l" + std::to_string(i), 3, {}};
        for (std::uint32_t d = 0; d < 3; ++d) {
          const auto c = static_cast<std::uint32_t>(rng() % 50);
          p.push_back(c);
          if (c) v.counts.emplace_back(d, c);
        }
        points.push_back(p);
        vectors.push_back(v);
      }
      const auto tree = agglomerate(pairwise_distance(vectors));
      std::string why;
      CHECK_MESSAGE(oracle::same_dendrogram(oracle::merges_of(tree), oracle::ward_reference(points), 8, 1e-9, &why), why);
    }
  }

  TEST_CASE("tree structure invariants") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t n = 2 + rng() % 30;
      const auto tree = random_tree(rng, n);
      CHECK(tree.nodes.size() == 2 * n - 1);
      CHECK(tree.leaf_count() == n);
      const auto parents = tree.parents();
      std::size_t roots = 0;
      for (const auto& node : tree.nodes) {
        if (parents[node.id] == kNoNode) ++roots;
        if (!node.is_leaf()) {
          CHECK(node.size == tree.node(node.left).size + tree.node(node.right).size);
          CHECK(node.height >= tree.node(node.left).height);
          CHECK(node.height >= tree.node(node.right).height);
          CHECK(node.left < node.right);
        }
      }
      CHECK(roots == 1);
      auto order = tree.leaf_order;
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < n; ++i) CHECK(order[i] == static_cast<NodeId>(i));
    }
  }

  TEST_CASE("cut above the root gives the root, below every height gives singletons") {
    std::mt19937_64 rng(10);
    const auto tree = random_tree(rng, 12);
    const double root_h = tree.node(tree.root).height;
    CHECK(cut(tree, root_h + 1.0).clusters == std::vector<NodeId>{tree.root});
    double smallest = INFINITY;
    for (const auto& node : tree.nodes) {
      if (!node.is_leaf() && node.height > 0) smallest = std::min(smallest, node.height);
    }
    const auto p = cut(tree, smallest);
    bool all_leaves = true;
    for (const NodeId c : p.clusters) {
      if (!tree.node(c).is_leaf() && tree.node(c).height > 0) all_leaves = false;
    }
    CHECK(all_leaves);
    CHECK_THROWS(cut(tree, 0.0));
  }

  TEST_CASE("cut predicate, cover and nesting") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const auto tree = random_tree(rng, 2 + rng() % 40);
      const auto parents = tree.parents();
      const double root_h = tree.node(tree.root).height;
      std::vector<double> ts;
      for (int k = 0; k < 25; ++k) ts.push_back(1e-3 + (root_h * 1.2) * static_cast<double>(rng() % 10000) / 10000.0);
      std::sort(ts.begin(), ts.end());
      std::vector<int> prev;
      for (const double t : ts) {
        const auto p = cut(tree, t);
        std::vector<int> cover(tree.leaf_count(), 0);
        for (const NodeId c : p.clusters) {
          CHECK(tree.node(c).height < t);
          const NodeId parent = parents[c];
          CHECK((parent == kNoNode || tree.node(parent).height >= t));
          for (const NodeId leaf : tree.leaves_under(c)) ++cover[leaf];
        }
        for (const int c : cover) CHECK(c == 1);
        const auto assign = assignment_of(tree, p);
        if (!prev.empty()) {
          // finer cut at the lower threshold: same fine cluster implies same coarse cluster
          for (std::size_t i = 0; i < assign.size(); ++i)
            for (std::size_t j = i + 1; j < assign.size(); ++j)
              if (prev[i] == prev[j]) CHECK(assign[i] == assign[j]);
        }
        prev = assign;
      }
    }
  }

  TEST_CASE("adjusted rand index") {
    const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
    CHECK(adjusted_rand_index(truth, truth) == doctest::Approx(1.0));
    const std::vector<int> renamed = {5, 5, 3, 3, 9, 9};
    CHECK(adjusted_rand_index(renamed, truth) == doctest::Approx(1.0));
    const std::vector<int> one(6, 0);
    const std::vector<int> balanced = {0, 0, 0, 1, 1, 1};
    CHECK(adjusted_rand_index(one, balanced) == doctest::Approx(0.0));

    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> x(20), y(20);
      for (auto& v : x) v = static_cast<int>(rng() % 4);
      for (auto& v : y) v = static_cast<int>(rng() % 5);
      const double got = adjusted_rand_index(x, y);
      CHECK(got == doctest::Approx(oracle::ari_by_pairs(x, y)).epsilon(1e-12));
      CHECK(got >= -1.0);
      CHECK(got <= 1.0);
    }
  }

  TEST_CASE("cluster metrics on a perfect partition") {
    std::vector<FeatureVector> vs = {vec("a", 1, {{0, 1}}), vec("b", 1, {{0, 2}}), vec("c", 1, {{0, 100}}),
                                     vec("d", 1, {{0, 101}})};
    const auto tree = agglomerate(pairwise_distance(vs));
    const auto p = cut(tree, 10.0);
    const std::vector<int> truth = {0, 0, 1, 1};
    const auto m = cluster_metrics(tree, p, truth);
    CHECK(m.cluster_count == 2);
    CHECK(m.ari == doctest::Approx(1.0));
  }

  TEST_CASE("tree and partition files round trip") {
    std::mt19937_64 rng(14);
    std::vector<std::string> ids;
    for (int i = 0; i < 9; ++i) ids.push_back("s" + std::to_string(i));
    const auto tree = agglomerate(pairwise_distance(oracle::random_vectors(rng, 9, 4, 3)), ids);
    const auto p = cut(tree, tree.node(tree.root).height / 2);
    const auto dir = std::filesystem::temp_directory_path();
    write_tree(dir / "lm-tree.json", tree);
    write_partition(dir / "lm-partition.json", tree, p);
    CHECK(read_tree(dir / "lm-tree.json") == tree);
    CHECK(read_partition(dir / "lm-partition.json") == p);
    CHECK(tree.node(0).log_id == "s0");
  }
}
