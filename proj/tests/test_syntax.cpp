#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "relex/syntax.hpp"
#include "relex/tensor.hpp"
#include "support/synthetic.hpp"

using namespace relex;
using namespace relex::testsupport;

TEST_CASE("parse_bracketed assigns left-to-right token indices") {
  ConstTree tree = parse_bracketed("(NP (DT the) (NN drug))");
  CHECK(tree.label == "NP");
  REQUIRE(tree.children.size() == 2);
  CHECK(tree.children[0].token == "the");
  CHECK(tree.children[0].token_index == 0);
  CHECK(tree.children[1].token == "drug");
  CHECK(tree.children[1].token_index == 1);
  CHECK(leaf_count(tree) == 2);
}

TEST_CASE("parse errors: unbalanced, empty node, bare token") {
  CHECK_THROWS_WITH_AS(parse_bracketed("((S (NN x))"), doctest::Contains("unbalanced"),
                       TreeParseError);
  CHECK_THROWS_AS(parse_bracketed("(S (NN x)))"), TreeParseError);
  CHECK_THROWS_WITH_AS(parse_bracketed("(S ())"), doctest::Contains("empty node label"),
                       TreeParseError);
  CHECK_THROWS_WITH_AS(parse_bracketed("(S)"), doctest::Contains("empty node"), TreeParseError);
  CHECK_THROWS_WITH_AS(parse_bracketed("(S (NN x) stray (NN y))"), doctest::Contains("bare token"),
                       TreeParseError);
  CHECK_THROWS_AS(parse_bracketed(""), TreeParseError);
}

TEST_CASE("print-parse round trip is the identity on random trees") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    ConstTree tree = random_tree(&rng, 5, 12);
    ConstTree reparsed = parse_bracketed(to_bracketed(tree));
    CHECK(reparsed == tree);
  }
}

TEST_CASE("extract_chunks keeps minimal NP/VP nodes only") {
  ConstTree tree = parse_bracketed("(S (NP (DT the) (NN drug)) (VP (VBZ inhibits) (NP (NN kinase))))");
  std::vector<ChunkSpan> chunks = extract_chunks(tree);
  // The VP contains an NP, so it is not minimal; its verb becomes a singleton.
  const std::vector<ChunkSpan> expected = {{ChunkKind::kNP, 0, 2},
                                           {ChunkKind::kSingleton, 2, 3},
                                           {ChunkKind::kNP, 3, 4}};
  CHECK(chunks == expected);
  CHECK(chunks == brute_force_chunks(tree));
}

TEST_CASE("a lone VP is a chunk; trees without NP/VP are all singletons") {
  CHECK(extract_chunks(parse_bracketed("(S (VP (VB run)))")) ==
        std::vector<ChunkSpan>{{ChunkKind::kVP, 0, 1}});
  CHECK(extract_chunks(parse_bracketed("(S (NN x) (NN y))")) ==
        std::vector<ChunkSpan>{{ChunkKind::kSingleton, 0, 1}, {ChunkKind::kSingleton, 1, 2}});
}

TEST_CASE("function tags count as their base category") {
  ConstTree tree = parse_bracketed("(S (NP-SBJ (NN subject)) (VP-1 (VB acts)))");
  const std::vector<ChunkSpan> expected = {{ChunkKind::kNP, 0, 1}, {ChunkKind::kVP, 1, 2}};
  CHECK(extract_chunks(tree) == expected);
}

TEST_CASE("unary NP over NP keeps the innermost") {
  ConstTree tree = parse_bracketed("(S (NP (NP (NN drug))) (VB works))");
  const std::vector<ChunkSpan> expected = {{ChunkKind::kNP, 0, 1}, {ChunkKind::kSingleton, 1, 2}};
  CHECK(extract_chunks(tree) == expected);
  CHECK(extract_chunks(tree) == brute_force_chunks(tree));
}

TEST_CASE("property: chunks tile the token range and match the oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    ConstTree tree = random_tree(&rng, 6, 20);
    std::vector<ChunkSpan> chunks = extract_chunks(tree);
    CHECK(chunks == brute_force_chunks(tree));
    int cursor = 0;
    for (const ChunkSpan& chunk : chunks) {
      CHECK(chunk.token_start == cursor);
      CHECK(chunk.token_start < chunk.token_end);
      cursor = chunk.token_end;
    }
    CHECK(cursor == leaf_count(tree));
    // No emitted NP/VP chunk strictly contains another.
    for (const ChunkSpan& a : chunks) {
      if (a.kind == ChunkKind::kSingleton) continue;
      for (const ChunkSpan& b : chunks) {
        if (&a == &b || b.kind == ChunkKind::kSingleton) continue;
        const bool strictly_contains = a.token_start <= b.token_start &&
                                       b.token_end <= a.token_end &&
                                       (a.token_start != b.token_start || a.token_end != b.token_end);
        CHECK_FALSE(strictly_contains);
      }
    }
  }
}

TEST_CASE("align_chunks_to_subwords unions contiguous token ranges") {
  const std::vector<std::pair<int, int>> map = {{1, 3}, {3, 4}};
  const std::vector<ChunkSpan> chunks = {{ChunkKind::kNP, 0, 2}};
  const auto ranges = align_chunks_to_subwords(chunks, map);
  REQUIRE(ranges.size() == 1);
  CHECK(ranges[0] == std::pair<int, int>{1, 4});

  SUBCASE("identity map keeps token ranges") {
    const std::vector<std::pair<int, int>> identity = {{0, 1}, {1, 2}, {2, 3}};
    const std::vector<ChunkSpan> singles = {{ChunkKind::kSingleton, 0, 1},
                                            {ChunkKind::kNP, 1, 3}};
    const auto r = align_chunks_to_subwords(singles, identity);
    CHECK(r[0] == std::pair<int, int>{0, 1});
    CHECK(r[1] == std::pair<int, int>{1, 3});
  }
  SUBCASE("empty subword range is an error") {
    const std::vector<std::pair<int, int>> broken = {{0, 0}, {0, 1}};
    CHECK_THROWS_AS(align_chunks_to_subwords({{ChunkKind::kNP, 0, 2}}, broken), std::out_of_range);
  }
}

TEST_CASE("property: chunk subword ranges concatenate to the whole interval") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    ConstTree tree = random_tree(&rng, 5, 15);
    const int t = leaf_count(tree);
    // Random contiguous map: token i gets 1..3 subwords.
    std::vector<std::pair<int, int>> map;
    int position = 1;  // pretend CLS sits at 0
    for (int i = 0; i < t; ++i) {
      const int width = 1 + static_cast<int>(rng.index(3));
      map.emplace_back(position, position + width);
      position += width;
    }
    const auto ranges = align_chunks_to_subwords(extract_chunks(tree), map);
    int cursor = 1;
    for (const auto& [first, last] : ranges) {
      CHECK(first == cursor);
      cursor = last;
    }
    CHECK(cursor == position);
  }
}

TEST_CASE("trees file reader skips comments and reports bad rows") {
  ScratchDir dir("trees");
  write_file(dir.file("trees.txt"), "# comment\n(S (NN a) (NN b))\n(S (VP (VB c)))\n");
  std::vector<ConstTree> trees = read_trees_file(dir.file("trees.txt"));
  REQUIRE(trees.size() == 2);
  CHECK(leaf_tokens(trees[0]) == std::vector<std::string>{"a", "b"});

  write_file(dir.file("bad.txt"), "(S (NN a)\n");
  CHECK_THROWS_WITH_AS(read_trees_file(dir.file("bad.txt")), doctest::Contains("bad.txt:1"),
                       TreeParseError);
}
