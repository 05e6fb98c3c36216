#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "relex/corpus.hpp"
#include "relex/tensor.hpp"
#include "support/synthetic.hpp"

using namespace relex;
using namespace relex::testsupport;

namespace {

struct MiniCorpusFiles {
  ScratchDir dir{"corpus"};
  std::string abstracts, entities, relations;

  MiniCorpusFiles(const std::string& a, const std::string& e, const std::string& r) {
    abstracts = write_file(dir.file("abstracts.tsv"), a);
    entities = write_file(dir.file("entities.tsv"), e);
    relations = write_file(dir.file("relations.tsv"), r);
  }
};

}  // namespace

TEST_CASE("load_corpus builds full_text as title + newline + abstract") {
  MiniCorpusFiles files("D1\tAspirin study\tAspirin inhibits COX2.\n",
                        "D1\tT1\tCHEMICAL\t0\t7\tAspirin\n"
                        "D1\tT2\tGENE\t31\t35\tCOX2\n",
                        "");
  Corpus corpus = load_corpus(files.abstracts, files.entities);
  REQUIRE(corpus.documents.size() == 1);
  const Document& doc = corpus.documents[0];
  CHECK(doc.full_text == "Aspirin study\nAspirin inhibits COX2.");
  CHECK(doc.full_text.size() == doc.title.size() + 1 + doc.abstract_text.size());
  REQUIRE(corpus.entities.size() == 2);
  CHECK(corpus.entities[0].surface == "Aspirin");
  CHECK(doc.full_text.substr(corpus.entities[0].start,
                             corpus.entities[0].end - corpus.entities[0].start) == "Aspirin");
}

TEST_CASE("span/surface mismatch names the entity") {
  MiniCorpusFiles files("D1\tT\tAspirin inhibits COX2.\n", "D1\tT1\tCHEMICAL\t0\t7\tCOX2!!!\n", "");
  try {
    load_corpus(files.abstracts, files.entities);
    FAIL("expected CorpusError");
  } catch (const CorpusError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("T1") != std::string::npos);
    CHECK(msg.find("mismatch") != std::string::npos);
  }
}

TEST_CASE("uniform off-by-one mismatches produce a corpus-level diagnostic") {
  // Both entity spans are shifted one character right of the truth.
  MiniCorpusFiles files("D1\tT\tAspirin binds COX2 now.\n",
                        "D1\tT1\tCHEMICAL\t3\t10\tAspirin\n"
                        "D1\tT2\tGENE\t17\t21\tCOX2\n",
                        "");
  try {
    load_corpus(files.abstracts, files.entities);
    FAIL("expected CorpusError");
  } catch (const CorpusError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("uniform offset shift") != std::string::npos);
    CHECK(msg.find("-1") != std::string::npos);
  }
}

TEST_CASE("code-point offsets are accepted and round trip unchanged") {
  // Greek alpha in the title shifts byte and code-point coordinates apart;
  // the offsets below count code points, as annotation tools usually do.
  const std::string abstracts = "D1\t\xCE\xB1" "B\tChem binds Gene.\n";
  const std::string entities =
      "D1\tT1\tCHEMICAL\t3\t7\tChem\n"
      "D1\tT2\tGENE\t14\t18\tGene\n";
  MiniCorpusFiles files(abstracts, entities, "");
  Corpus corpus = load_corpus(files.abstracts, files.entities);
  REQUIRE(corpus.entities.size() == 2);
  const Document& doc = corpus.documents[0];
  for (const Entity& ent : corpus.entities) {
    CHECK(doc.full_text.substr(ent.start, ent.end - ent.start) == ent.surface);
  }
  CHECK(corpus.entities[0].start == 4);  // byte offset after the 2-byte alpha
  CHECK(corpus.entities[1].start == 15);

  const std::string out = files.dir.file("entities_out.tsv");
  write_entities(out, corpus);
  CHECK(read_file(out) == entities);
}

TEST_CASE("duplicate doc_id and malformed rows are reported with location") {
  MiniCorpusFiles files("D1\tA\tB\nD1\tA\tB\nD2\tonly two columns\n", "", "");
  try {
    load_corpus(files.abstracts, files.entities);
    FAIL("expected CorpusError");
  } catch (const CorpusError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("duplicate doc_id: D1") != std::string::npos);
    CHECK(msg.find(":3:") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }
}

TEST_CASE("dangling entity references and duplicate relation rows are errors") {
  MiniCorpusFiles files("D1\tT\tAspirin binds COX2.\n",
                        "D1\tT1\tCHEMICAL\t2\t9\tAspirin\nD1\tT2\tGENE\t16\t20\tCOX2\n",
                        "D1\tINHIBITOR\tArg1:T1\tArg2:T9\n");
  CHECK_THROWS_WITH_AS(load_corpus(files.abstracts, files.entities, files.relations),
                       doctest::Contains("dangling entity reference T9"), CorpusError);

  MiniCorpusFiles dup("D1\tT\tAspirin binds COX2.\n",
                      "D1\tT1\tCHEMICAL\t2\t9\tAspirin\nD1\tT2\tGENE\t16\t20\tCOX2\n",
                      "D1\tINHIBITOR\tArg1:T1\tArg2:T2\nD1\tINHIBITOR\tArg1:T1\tArg2:T2\n");
  CHECK_THROWS_WITH_AS(load_corpus(dup.abstracts, dup.entities, dup.relations),
                       doctest::Contains("duplicate relation row"), CorpusError);
}

TEST_CASE("the same pair may carry two distinct labels") {
  MiniCorpusFiles files("D1\tT\tAspirin binds COX2.\n",
                        "D1\tT1\tCHEMICAL\t2\t9\tAspirin\nD1\tT2\tGENE\t16\t20\tCOX2\n",
                        "D1\tINHIBITOR\tArg1:T1\tArg2:T2\nD1\tACTIVATOR\tArg1:T1\tArg2:T2\n");
  Corpus corpus = load_corpus(files.abstracts, files.entities, files.relations);
  CHECK(corpus.relations.size() == 2);
}

TEST_CASE("paper-scale relation count loads intact") {
  // 17,070 relation rows spread over synthetic documents.
  ScratchDir dir("scale");
  std::string abstracts, entities, relations;
  const int docs = 1138;  // 1138 * 15 = 17,070
  for (int d = 0; d < docs; ++d) {
    const std::string id = "D" + std::to_string(d);
    abstracts += id + "\tT\t";
    std::string body;
    for (int p = 0; p < 15; ++p) {
      body += "chem" + std::to_string(p) + " binds gene" + std::to_string(p) + " . ";
    }
    abstracts += body + "\n";
    std::size_t offset = 2;  // past "T\n"
    for (int p = 0; p < 15; ++p) {
      const std::string chem = "chem" + std::to_string(p);
      const std::string gene = "gene" + std::to_string(p);
      const std::string tc = "T" + std::to_string(2 * p + 1);
      const std::string tg = "T" + std::to_string(2 * p + 2);
      entities += id + "\t" + tc + "\tCHEMICAL\t" + std::to_string(offset) + "\t" +
                  std::to_string(offset + chem.size()) + "\t" + chem + "\n";
      const std::size_t gene_at = offset + chem.size() + 7;
      entities += id + "\t" + tg + "\tGENE\t" + std::to_string(gene_at) + "\t" +
                  std::to_string(gene_at + gene.size()) + "\t" + gene + "\n";
      relations += id + "\tINHIBITOR\tArg1:" + tc + "\tArg2:" + tg + "\n";
      offset = gene_at + gene.size() + 3;
    }
  }
  write_file(dir.file("a.tsv"), abstracts);
  write_file(dir.file("e.tsv"), entities);
  write_file(dir.file("r.tsv"), relations);
  Corpus corpus = load_corpus(dir.file("a.tsv"), dir.file("e.tsv"), dir.file("r.tsv"));
  CHECK(corpus.relations.size() == 17070);
}

TEST_CASE("build_label_catalog sorts labels and counts annotations") {
  Corpus corpus;
  corpus.documents.push_back({"D1", "t", "a", "t\na"});
  corpus.relations = {{"D1", "B", "T1", "T2"}, {"D1", "A", "T1", "T2"}, {"D1", "A", "T3", "T4"}};
  corpus.rebuild_indexes();
  LabelCatalog catalog = build_label_catalog(corpus);
  REQUIRE(catalog.labels == std::vector<std::string>{"A", "B"});
  CHECK(catalog.counts == std::vector<long long>{2, 1});
  CHECK(catalog.index_of("B") == 1);
  CHECK(catalog.index_of("missing") == -1);

  Corpus empty;
  CHECK_THROWS_AS(build_label_catalog(empty), CorpusError);
}

TEST_CASE("catalog at paper scale: 13 labels with the reported rare counts") {
  Corpus corpus;
  corpus.documents.push_back({"D1", "t", "a", "t\na"});
  const std::vector<std::pair<std::string, int>> label_counts = {
      {"ACTIVATOR", 1429},       {"AGONIST", 659},
      {"AGONIST-ACTIVATOR", 39}, {"AGONIST-INHIBITOR", 15},
      {"ANTAGONIST", 972},       {"DIRECT-REGULATOR", 2250},
      {"INDIRECT-DOWNREGULATOR", 1330}, {"INDIRECT-UPREGULATOR", 1379},
      {"INHIBITOR", 5392},       {"PART-OF", 886},
      {"PRODUCT-OF", 921},       {"SUBSTRATE", 1771},
      {"SUBSTRATE_PRODUCT-OF", 27}};
  int t = 0;
  for (const auto& [label, count] : label_counts) {
    for (int i = 0; i < count; ++i) {
      corpus.relations.push_back(
          {"D1", label, "T" + std::to_string(++t), "T" + std::to_string(++t)});
    }
  }
  corpus.rebuild_indexes();
  LabelCatalog catalog = build_label_catalog(corpus);
  CHECK(catalog.size() == 13);
  CHECK(catalog.counts[catalog.index_of("AGONIST-INHIBITOR")] == 15);
  CHECK(catalog.counts[catalog.index_of("SUBSTRATE_PRODUCT-OF")] == 27);
  CHECK(catalog.counts[catalog.index_of("AGONIST-ACTIVATOR")] == 39);
}

TEST_CASE("serialize-load round trip reproduces the TSV rows") {
  SyntheticOptions options;
  options.n_docs = 6;
  options.sentences_per_doc = 2;
  options.seed = 7;
  options.n_negatives = 2;
  SyntheticData data = make_synthetic(options);
  ScratchDir dir("roundtrip");
  SyntheticFiles files = write_synthetic_files(data, dir.path(), "x");

  Corpus loaded = load_corpus(files.abstracts, files.entities, files.relations);
  const std::string a2 = dir.file("a2.tsv"), e2 = dir.file("e2.tsv"), r2 = dir.file("r2.tsv");
  write_abstracts(a2, loaded);
  write_entities(e2, loaded);
  write_relations(r2, loaded.relations);
  CHECK(read_file(files.abstracts) == read_file(a2));
  CHECK(read_file(files.entities) == read_file(e2));
  CHECK(read_file(files.relations) == read_file(r2));
}

TEST_CASE("property: injected dangling references always raise") {
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    SyntheticOptions options;
    options.n_docs = 2 + static_cast<int>(rng.index(4));
    options.seed = rng.next_u64();
    SyntheticData data = make_synthetic(options);
    REQUIRE(!data.corpus.relations.empty());
    const std::size_t victim = rng.index(data.corpus.relations.size());
    data.corpus.relations[victim].object_id = "T999";
    ScratchDir dir("dangle");
    SyntheticFiles files = write_synthetic_files(data, dir.path(), "x");
    CHECK_THROWS_WITH_AS(load_corpus(files.abstracts, files.entities, files.relations),
                         doctest::Contains("dangling entity reference"), CorpusError);
  }
}
