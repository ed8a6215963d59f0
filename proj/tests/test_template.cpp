#include "loadermine/template.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace loadermine;

namespace {

Template tpl(std::initializer_list<const char*> words) {
  Template t;
  for (const char* w : words) t.slots.push_back(w == nullptr ? Slot::gap() : Slot::of(w));
  return t;
}

std::vector<std::string> random_words(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::vector<std::string> out(rng() % (max_len + 1));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng() % alphabet));
  return out;
}

Template of_words(const std::vector<std::string>& words) {
  Template t;
  for (const auto& w : words) t.slots.push_back(Slot::of(w));
  return t;
}

}  // namespace

TEST_SUITE("template") {
  TEST_CASE("differing last token becomes a gap") {
    CHECK(align(tpl({"cd", " ", "tmp"}), tpl({"cd", " ", "var"})) == tpl({"cd", " ", nullptr}));
  }

  TEST_CASE("nothing in common") { CHECK(align(tpl({"a"}), tpl({"b"})) == tpl({nullptr})); }

  TEST_CASE("middle columns collapse into one gap") {
    CHECK(align(tpl({"a", "x", "b"}), tpl({"a", "y", "y", "b"})) == tpl({"a", nullptr, "b"}));
  }

  TEST_CASE("empty inputs") {
    CHECK(align(tpl({}), tpl({})).slots.empty());
    CHECK(align(tpl({"a"}), tpl({})) == tpl({nullptr}));
  }

  TEST_CASE("gaps align with gaps and tokens") {
    CHECK(align(tpl({"a", nullptr, "b"}), tpl({"a", nullptr, "b"})) == tpl({"a", nullptr, "b"}));
    CHECK(align(tpl({"a", nullptr}), tpl({"a", "c"})) == tpl({"a", nullptr}));
  }

  TEST_CASE("identity, symmetry and no adjacent gaps on random inputs") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 500; ++trial) {
      const auto a = of_words(random_words(rng, 10, 4));
      const auto b = of_words(random_words(rng, 10, 4));
      CHECK(align(a, a) == a);
      const auto ab = align(a, b);
      CHECK(ab == align(b, a));
      for (std::size_t i = 0; i + 1 < ab.slots.size(); ++i) CHECK(!(ab.slots[i].is_gap() && ab.slots[i + 1].is_gap()));
      CHECK(align(ab, ab) == ab);
    }
  }

  TEST_CASE("token slots equal the enumerated longest common subsequence") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 300; ++trial) {
      const auto a = random_words(rng, 12, 3);
      const auto b = random_words(rng, 12, 3);
      const auto t = align(of_words(a), of_words(b));
      CHECK(t.token_count() == oracle::lcs_by_enumeration(a, b));
      CHECK(oracle::is_subsequence(t.tokens(), a));
      CHECK(oracle::is_subsequence(t.tokens(), b));
    }
  }

  TEST_CASE("parameter validation") {
    CHECK_THROWS(AlignmentParams{0.0, 0.0, 0.0}.validate());
    CHECK_THROWS(AlignmentParams{1.0, 0.5, 0.0}.validate());
    CHECK_NOTHROW(AlignmentParams{}.validate());
  }

  TEST_CASE("templates over a tree") {
    const std::vector<TokenSequence> seqs = {{"x", tokenize("cd tmp")}, {"y", tokenize("cd var")}, {"z", tokenize("cd opt")}};
    DistanceMatrix d(3);
    d.set(0, 1, 1.0);
    d.set(0, 2, 2.0);
    d.set(1, 2, 2.0);
    const auto tree = agglomerate(d, {"x", "y", "z"});
    const auto templates = build_templates(tree, seqs);
    CHECK(templates.at(tree.root) == tpl({"cd", " ", nullptr}));
    CHECK(templates.at(0).stability() == 1.0);
    CHECK(templates.at(tree.root).stability() == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS(build_templates(tree, {seqs[0], seqs[1]}));
  }

  TEST_CASE("two identical leaves") {
    const std::vector<TokenSequence> seqs = {{"x", tokenize("ls -la")}, {"y", tokenize("ls -la")}};
    DistanceMatrix d(2);
    const auto tree = agglomerate(d, {"x", "y"});
    const auto t = build_templates(tree, seqs).at(tree.root);
    CHECK(t == Template::from_tokens(seqs[0].tokens));
    CHECK(t.stability() == 1.0);
  }

  TEST_CASE("every node's tokens are a subsequence of its leaves") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 20;
      std::vector<TokenSequence> seqs;
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < n; ++i) {
        TokenSequence s{"l" + std::to_string(i), {}};
        for (const auto& w : random_words(rng, 15, 4)) s.tokens.push_back({w, ByteClass::kAlnum});
        seqs.push_back(s);
        ids.push_back(s.log_id);
      }
      const auto vectors = oracle::random_vectors(rng, n, 4, 3);
      const auto tree = agglomerate(pairwise_distance(vectors), ids);
      const auto templates = build_templates(tree, seqs);
      for (const auto& node : tree.nodes) {
        const auto tokens = templates.at(node.id).tokens();
        for (const NodeId leaf : tree.leaves_under(node.id)) {
          std::vector<std::string> words;
          for (const auto& tok : seqs[leaf].tokens) words.push_back(tok.bytes);
          CHECK(oracle::is_subsequence(tokens, words));
        }
        const double s = templates.at(node.id).stability();
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
      }
    }
  }

  TEST_CASE("rendering") {
    CHECK(render_template(tpl({"rm", " -", "rf"})) == "rm -rf");
    CHECK(render_template(tpl({nullptr})) == "⟨*⟩");
    CHECK(render_template(tpl({"\r\n"})) == "\\x0d\\x0a");
    CHECK(render_tokens({"a\\b"}) == "a\\x5cb");
  }

  TEST_CASE("template file round trip") {
    std::map<NodeId, Template> m;
    m[3] = tpl({"a", nullptr, "\xff"});
    m[3].node_id = 3;
    m[7] = tpl({});
    m[7].node_id = 7;
    const auto path = std::filesystem::temp_directory_path() / "lm-templates.jsonl";
    write_templates(path, m);
    const auto back = read_templates(path);
    CHECK(back == m);
  }
}
