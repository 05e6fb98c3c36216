#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "relex/alignment.hpp"
#include "relex/checkpoint.hpp"
#include "relex/training.hpp"
#include "support/synthetic.hpp"

using namespace relex;
using namespace relex::testsupport;

namespace {

EncoderConfig tiny_config(ModelFamily family) {
  EncoderConfig config;
  config.d_model = 8;
  config.n_heads = 2;
  config.n_base_layers = 2;
  config.d_ff = 16;
  config.max_len = 64;
  config.dropout_p = 0.0;
  config.family = family;
  return config;
}

struct TinyWorld {
  SyntheticData data;
  SubwordVocab vocab;
  LabelCatalog catalog;
  std::vector<EncodedInstance> encoded;

  explicit TinyWorld(ModelFamily family, int n_docs = 6, std::uint64_t seed = 3,
                     int n_negatives = 1) {
    SyntheticOptions options;
    options.n_docs = n_docs;
    options.seed = seed;
    options.n_negatives = n_negatives;
    data = make_synthetic(options);
    std::vector<std::string> texts;
    for (const CandidateInstance& inst : data.instances) texts.push_back(inst.marked_text);
    vocab = build_vocab(texts, 2);
    std::map<std::string, long long> counts;
    for (const CandidateInstance& inst : data.instances) {
      for (const std::string& label : inst.gold_labels) ++counts[label];
    }
    for (const auto& [label, count] : counts) {
      catalog.labels.push_back(label);
      catalog.counts.push_back(count);
    }
    encoded = encode_instances(data.instances, &data.trees, vocab, family);
  }
};

}  // namespace

TEST_CASE("sum_subwords_to_tokens adds each token's pieces") {
  Mat vectors(4, 2);
  for (int i = 0; i < 4; ++i) {
    vectors.at(i, 0) = i + 1;
    vectors.at(i, 1) = 10.0 * (i + 1);
  }
  // Token 0 covers rows 1..2, token 1 covers row 3.
  const std::vector<std::pair<int, int>> map = {{1, 3}, {3, 4}};
  Mat tokens = sum_subwords_to_tokens(vectors, map);
  REQUIRE(tokens.rows == 2);
  CHECK(tokens.at(0, 0) == doctest::Approx(5.0));   // 2 + 3
  CHECK(tokens.at(0, 1) == doctest::Approx(50.0));
  CHECK(tokens.at(1, 0) == doctest::Approx(4.0));   // identity case
  CHECK_THROWS_AS(sum_subwords_to_tokens(vectors, {{1, 1}}), EncoderError);
}

TEST_CASE("sum_tokens_to_constituents adds unit members and conserves the grand sum") {
  Rng rng(5);
  Mat tokens(6, 3);
  for (double& v : tokens.data) v = rng.normal();
  std::vector<EncodedInstance::Unit> units(3);
  units[0].token_indices = {0, 1};
  units[1].token_indices = {2};
  units[2].token_indices = {3, 4, 5};
  Mat constituents = sum_tokens_to_constituents(tokens, units);
  REQUIRE(constituents.rows == 3);
  CHECK(constituents.at(0, 0) == doctest::Approx(tokens.at(0, 0) + tokens.at(1, 0)));
  CHECK(grand_sum(constituents) == doctest::Approx(grand_sum(tokens)).epsilon(1e-12));

  // All-singleton units: the grouping is the identity.
  std::vector<EncodedInstance::Unit> singles(6);
  for (int t = 0; t < 6; ++t) singles[t].token_indices = {t};
  Mat same = sum_tokens_to_constituents(tokens, singles);
  CHECK(same.data == tokens.data);

  std::vector<EncodedInstance::Unit> empty_unit(1);
  CHECK_THROWS_AS(sum_tokens_to_constituents(tokens, empty_unit), EncoderError);
}

TEST_CASE("constituent sequence length is 1 + chunks + marker singletons") {
  TinyWorld world(ModelFamily::kConst);
  for (std::size_t i = 0; i < world.encoded.size(); ++i) {
    const EncodedInstance& inst = world.encoded[i];
    const auto chunks = extract_chunks(world.data.trees[i]);
    std::vector<MarkerOccurrence> markers;
    strip_markers(world.data.instances[i].marked_text, &markers);
    CHECK(inst.n_constituents() ==
          1 + static_cast<int>(chunks.size()) + static_cast<int>(markers.size()));
    // Units partition the marked tokens.
    std::vector<int> seen(inst.token_to_subword.size(), 0);
    for (const auto& unit : inst.units) {
      for (int t : unit.token_indices) ++seen[static_cast<std::size_t>(t)];
    }
    for (int count : seen) CHECK(count == 1);
  }
}

TEST_CASE("marker splicing: markers become singleton units in marked-text order") {
  SubwordVocab vocab = build_vocab({"Chema binds Geneb now . Chema binds Geneb now ."}, 2);

  SUBCASE("markers around an entity inside a multi-token NP wrap that chunk") {
    CandidateInstance inst;
    inst.doc_id = "D";
    inst.subject_id = "T1";
    inst.object_id = "T2";
    inst.marked_text = "@@Chema@@ binds $$Geneb$$ now .";
    ConstTree tree =
        parse_bracketed("(S (NP (NN Chema) (NN binds)) (NN Geneb) (NN now) (. .))");
    EncodedInstance enc = encode_instance(inst, &tree, vocab, ModelFamily::kConst);
    // Chunks: NP(0,2) + 3 singletons; markers: 4.
    REQUIRE(enc.units.size() == 8);
    std::vector<std::string> shape;
    for (const auto& unit : enc.units) {
      shape.push_back(unit.is_marker ? "M" : std::to_string(unit.token_indices.size()));
    }
    // [@@][NP{Chema binds}][@@][$$][Geneb][$$][now][.]
    CHECK(shape == std::vector<std::string>{"M", "2", "M", "M", "1", "M", "1", "1"});
  }

  SUBCASE("a marker splitting a token keeps the fragments in one chunk unit") {
    CandidateInstance inst;
    inst.doc_id = "D";
    inst.subject_id = "T1";
    inst.object_id = "T2";
    // Subject span covers only "Chem" inside the token "Chema".
    inst.marked_text = "@@Chem@@a binds $$Geneb$$ .";
    ConstTree tree = parse_bracketed("(S (NP (NN Chema)) (NN binds) (NN Geneb) (. .))");
    EncodedInstance enc = encode_instance(inst, &tree, vocab, ModelFamily::kConst);
    REQUIRE(enc.units.size() == 4 + 4);  // 4 chunks + 4 markers
    // The NP unit holds both fragments ("Chem", "a") of the split token.
    bool found_fragments = false;
    for (const auto& unit : enc.units) {
      if (!unit.is_marker && unit.token_indices.size() == 2) found_fragments = true;
    }
    CHECK(found_fragments);
  }

  SUBCASE("the overlap marker encodes as two singleton units") {
    CandidateInstance inst;
    inst.doc_id = "D";
    inst.subject_id = "T1";
    inst.object_id = "T2";
    inst.overlap_case = true;
    const std::string cc(kOverlapMarker);
    inst.marked_text = cc + "Chema" + cc + " binds .";
    ConstTree tree = parse_bracketed("(S (NP (NN Chema)) (NN binds) (. .))");
    EncodedInstance enc = encode_instance(inst, &tree, vocab, ModelFamily::kConst);
    REQUIRE(enc.units.size() == 3 + 2);
    CHECK(enc.units[0].is_marker);
    CHECK(enc.units[2].is_marker);
  }

  SUBCASE("leaf/token mismatches are rejected") {
    CandidateInstance inst;
    inst.doc_id = "D";
    inst.subject_id = "T1";
    inst.object_id = "T2";
    inst.marked_text = "@@Chema@@ binds .";
    ConstTree tree = parse_bracketed("(S (NN Wrong) (NN binds) (. .))");
    CHECK_THROWS_AS(encode_instance(inst, &tree, vocab, ModelFamily::kConst), AlignmentError);
    ConstTree short_tree = parse_bracketed("(S (NN Chema))");
    CHECK_THROWS_AS(encode_instance(inst, &short_tree, vocab, ModelFamily::kConst),
                    AlignmentError);
    CHECK_THROWS_AS(encode_instance(inst, nullptr, vocab, ModelFamily::kConst), AlignmentError);
  }
}

TEST_CASE("forward outputs lie strictly inside (0,1) and have K columns") {
  for (ModelFamily family : {ModelFamily::kPlain, ModelFamily::kConst}) {
    TinyWorld world(family);
    EncoderConfig config = tiny_config(family);
    config.seed = 9;
    ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                     static_cast<int>(world.catalog.size()));
    Mat probs = forward_batch(params, config, world.encoded,
                              static_cast<int>(world.catalog.size()), {});
    CHECK(probs.rows == static_cast<int>(world.encoded.size()));
    CHECK(probs.cols == static_cast<int>(world.catalog.size()));
    for (double v : probs.data) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("inference is deterministic; seeds are bitwise reproducible") {
  TinyWorld world(ModelFamily::kConst);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  config.seed = 11;
  ModelParams a = init_params(config, static_cast<int>(world.vocab.size()),
                              static_cast<int>(world.catalog.size()));
  ModelParams b = init_params(config, static_cast<int>(world.vocab.size()),
                              static_cast<int>(world.catalog.size()));
  auto ta = a.named_tensors();
  auto tb = b.named_tensors();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].second->data == tb[i].second->data);  // bitwise equal
  }

  Mat p1 = forward_batch(a, config, world.encoded, static_cast<int>(world.catalog.size()), {});
  Mat p2 = forward_batch(a, config, world.encoded, static_cast<int>(world.catalog.size()), {});
  CHECK(p1.data == p2.data);

  EncoderConfig other = config;
  other.seed = 12;
  ModelParams c = init_params(other, static_cast<int>(world.vocab.size()),
                              static_cast<int>(world.catalog.size()));
  CHECK(c.tok_embedding.data != a.tok_embedding.data);
}

TEST_CASE("padding masks: padded and truncated forwards agree") {
  for (ModelFamily family : {ModelFamily::kPlain, ModelFamily::kConst}) {
    TinyWorld world(family);
    EncoderConfig config = tiny_config(family);
    config.seed = 21;
    ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                     static_cast<int>(world.catalog.size()));
    const int k = static_cast<int>(world.catalog.size());
    for (const EncodedInstance& inst : world.encoded) {
      EncodedInstance padded =
          pad_instance(inst, static_cast<int>(inst.subword_ids.size()) + 7,
                       static_cast<int>(inst.units.size()) + 3, world.vocab.pad_id);
      Mat truncated = forward_batch(params, config, {inst}, k, {});
      Mat masked = forward_batch(params, config, {padded}, k, {});
      for (int r = 0; r < k; ++r) {
        CHECK(masked.at(0, r) == doctest::Approx(truncated.at(0, r)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("grouping conserves the grand sum through both stages") {
  TinyWorld world(ModelFamily::kConst);
  Rng rng(17);
  for (const EncodedInstance& inst : world.encoded) {
    const int s = static_cast<int>(inst.subword_ids.size());
    Mat subwords(s, 4);
    for (double& v : subwords.data) v = rng.normal();
    Mat tokens = sum_subwords_to_tokens(subwords, inst.token_to_subword);
    Mat units = sum_tokens_to_constituents(tokens, inst.units);
    // Non-special subword rows: all but CLS (row 0) and SEP (last row).
    double non_special = 0.0;
    for (int i = 1; i < s - 1; ++i) {
      for (int j = 0; j < 4; ++j) non_special += subwords.at(i, j);
    }
    CHECK(grand_sum(tokens) == doctest::Approx(non_special).epsilon(1e-9));
    CHECK(grand_sum(units) == doctest::Approx(grand_sum(tokens)).epsilon(1e-9));
  }
}

TEST_CASE("sequence length over max_len is an error") {
  TinyWorld world(ModelFamily::kPlain);
  EncoderConfig config = tiny_config(ModelFamily::kPlain);
  config.max_len = 4;
  ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                   static_cast<int>(world.catalog.size()));
  CHECK_THROWS_WITH_AS(forward_batch(params, config, {world.encoded[0]},
                                     static_cast<int>(world.catalog.size()), {}),
                       doctest::Contains("max_len"), EncoderError);
}

TEST_CASE("mismatched chunk alignment is an error") {
  TinyWorld world(ModelFamily::kConst);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                   static_cast<int>(world.catalog.size()));
  EncodedInstance broken = world.encoded[0];
  REQUIRE(!broken.units.empty());
  broken.units[0].token_indices = {static_cast<int>(broken.token_to_subword.size()) + 3};
  CHECK_THROWS_WITH_AS(forward_batch(params, config, {broken},
                                     static_cast<int>(world.catalog.size()), {}),
                       doctest::Contains("chunk alignment"), EncoderError);
}

TEST_CASE("zero class weights silence all gradients") {
  TinyWorld world(ModelFamily::kConst);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  config.seed = 5;
  ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                   static_cast<int>(world.catalog.size()));
  std::vector<EncodedInstance> batch(world.encoded.begin(),
                                     world.encoded.begin() + std::min<std::size_t>(4, world.encoded.size()));
  Mat targets = targets_from_instances(batch, world.catalog);
  const std::vector<double> zero_weights(world.catalog.size(), 0.0);
  BatchGradients bg = backward_batch(params, config, batch, targets, zero_weights, {});
  CHECK(bg.loss == 0.0);
  for (const auto& [name, mat] : bg.grads.named_tensors()) {
    for (double v : mat->data) CHECK(v == 0.0);
  }
}

TEST_CASE("PAD embedding rows receive zero gradient") {
  TinyWorld world(ModelFamily::kConst);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  config.seed = 5;
  ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                   static_cast<int>(world.catalog.size()));
  std::vector<EncodedInstance> batch;
  for (std::size_t i = 0; i < 3 && i < world.encoded.size(); ++i) {
    batch.push_back(pad_instance(world.encoded[i],
                                 static_cast<int>(world.encoded[i].subword_ids.size()) + 5,
                                 static_cast<int>(world.encoded[i].units.size()) + 2,
                                 world.vocab.pad_id));
  }
  Mat targets = targets_from_instances(batch, world.catalog);
  const ClassWeights weights = compute_class_weights(world.catalog);
  BatchGradients bg = backward_batch(params, config, batch, targets, weights.w, {});
  const int pad_row = world.vocab.pad_id;
  for (int j = 0; j < config.d_model; ++j) {
    CHECK(bg.grads.tok_embedding.at(pad_row, j) == 0.0);
  }
}

TEST_CASE("finite differences validate backward on both families") {
  for (ModelFamily family : {ModelFamily::kPlain, ModelFamily::kConst}) {
    CAPTURE(family_name(family));
    TinyWorld world(family, 4);
    EncoderConfig config = tiny_config(family);
    config.seed = 77;
    ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                     static_cast<int>(world.catalog.size()));
    std::vector<EncodedInstance> batch(world.encoded.begin(), world.encoded.begin() + 3);
    Mat targets = targets_from_instances(batch, world.catalog);
    const ClassWeights weights = compute_class_weights(world.catalog);
    GradCheckResult result = finite_difference_check(params, config, batch, targets, weights.w, {},
                                                     4, 1e-4, 1e-3, 123);
    CHECK(result.checked > 0);
    CHECK(result.passed == result.checked);
  }
}

TEST_CASE("finite differences hold with dropout active (fixed mask seed)") {
  TinyWorld world(ModelFamily::kConst, 4);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  config.seed = 78;
  config.dropout_p = 0.1;
  ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                   static_cast<int>(world.catalog.size()));
  std::vector<EncodedInstance> batch(world.encoded.begin(), world.encoded.begin() + 2);
  Mat targets = targets_from_instances(batch, world.catalog);
  const ClassWeights weights = compute_class_weights(world.catalog);
  ForwardOptions options;
  options.training = true;
  options.dropout_seed = 4242;
  GradCheckResult result = finite_difference_check(params, config, batch, targets, weights.w,
                                                   options, 3, 1e-4, 1e-3, 321);
  CHECK(result.checked > 0);
  CHECK(result.passed == result.checked);
}

TEST_CASE("training-mode dropout is reproducible per seed and differs across seeds") {
  TinyWorld world(ModelFamily::kConst, 4);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  config.dropout_p = 0.3;
  config.seed = 1;
  ModelParams params = init_params(config, static_cast<int>(world.vocab.size()),
                                   static_cast<int>(world.catalog.size()));
  const int k = static_cast<int>(world.catalog.size());
  ForwardOptions t1{true, 999};
  ForwardOptions t2{true, 1000};
  Mat a = forward_batch(params, config, world.encoded, k, t1);
  Mat b = forward_batch(params, config, world.encoded, k, t1);
  Mat c = forward_batch(params, config, world.encoded, k, t2);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
}

TEST_CASE("checkpoints reload bit-exact") {
  TinyWorld world(ModelFamily::kConst);
  EncoderConfig config = tiny_config(ModelFamily::kConst);
  config.seed = 33;
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.vocab = world.vocab;
  ckpt.catalog = world.catalog;
  ckpt.params = init_params(config, static_cast<int>(world.vocab.size()),
                            static_cast<int>(world.catalog.size()));
  ScratchDir dir("ckpt");
  save_checkpoint(dir.file("m.ckpt"), ckpt);
  Checkpoint loaded = load_checkpoint(dir.file("m.ckpt"));
  CHECK(loaded.vocab.pieces == ckpt.vocab.pieces);
  CHECK(loaded.catalog.labels == ckpt.catalog.labels);
  CHECK(loaded.config.d_model == config.d_model);
  CHECK(loaded.config.family == config.family);
  auto ta = ckpt.params.named_tensors();
  auto tb = loaded.params.named_tensors();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].second->data == tb[i].second->data);
  }
  // Saving the reload reproduces the file byte for byte.
  save_checkpoint(dir.file("m2.ckpt"), loaded);
  CHECK(read_file(dir.file("m.ckpt")) == read_file(dir.file("m2.ckpt")));

  SUBCASE("corrupt magic is rejected") {
    write_file(dir.file("bad.ckpt"), "NOTACKPT");
    CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ckpt")), CheckpointError);
  }
}

TEST_CASE("plain and const families of one seed share base-layer initialization") {
  // The families differ only in the grouping stage and the two extra
  // constituent layers; with the const extras neutralized the two
  // decision paths stay structurally interchangeable.
  TinyWorld world(ModelFamily::kConst);
  EncoderConfig const_config = tiny_config(ModelFamily::kConst);
  const_config.seed = 2;
  EncoderConfig plain_config = tiny_config(ModelFamily::kPlain);
  plain_config.seed = 2;
  const int k = static_cast<int>(world.catalog.size());
  ModelParams const_params = init_params(const_config, static_cast<int>(world.vocab.size()), k);
  ModelParams plain_params = init_params(plain_config, static_cast<int>(world.vocab.size()), k);
  CHECK(const_params.base_layers.size() == plain_params.base_layers.size());
  CHECK(const_params.const_layers.size() == 2);
  CHECK(plain_params.const_layers.empty());
}
