#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "relex/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace relex;
using namespace relex::testsupport;

namespace {

struct PipelineWorld {
  ScratchDir dir{"pipe"};
  SyntheticFiles train_files, dev_files;

  PipelineWorld(int train_docs = 14, int dev_docs = 6, std::uint64_t seed = 100) {
    SyntheticOptions train_options;
    train_options.n_docs = train_docs;
    train_options.seed = seed;
    train_options.n_negatives = 2;
    SyntheticData train_data = make_synthetic(train_options);
    train_files = write_synthetic_files(train_data, dir.path(), "train");

    SyntheticOptions dev_options;
    dev_options.n_docs = dev_docs;
    dev_options.seed = seed + 1;
    dev_options.n_negatives = 1;
    SyntheticData dev_data = make_synthetic(dev_options);
    dev_files = write_synthetic_files(dev_data, dir.path(), "dev");
  }

  PipelineConfig config(const std::string& work_name) const {
    PipelineConfig config;
    config.work_dir = dir.path() + "/" + work_name;
    config.train = {train_files.abstracts, train_files.entities, train_files.relations,
                    train_files.trees};
    config.dev = {dev_files.abstracts, dev_files.entities, dev_files.relations, dev_files.trees};
    config.encoder.d_model = 16;
    config.encoder.n_heads = 2;
    config.encoder.n_base_layers = 1;
    config.encoder.d_ff = 32;
    config.encoder.max_len = 64;
    config.encoder.dropout_p = 0.1;
    config.trainer.batch_size = 8;
    config.trainer.learning_rate = 2e-3;
    config.trainer.max_epochs = 3;
    config.trainer.patience = 5;
    config.families = {ModelFamily::kPlain, ModelFamily::kConst};
    config.seeds_per_family = 2;
    config.selection = SelectionRule::kTopK;
    config.top_k = 2;
    config.vote_mode = VoteMode::kMajority;
    config.vocab_min_freq = 2;
    return config;
  }
};

Checkpoint tiny_checkpoint(ModelFamily family, const SyntheticData& data, std::uint64_t seed) {
  std::vector<std::string> texts;
  for (const CandidateInstance& inst : data.instances) texts.push_back(inst.marked_text);
  Checkpoint ckpt;
  ckpt.vocab = build_vocab(texts, 2);
  std::map<std::string, long long> counts;
  for (const CandidateInstance& inst : data.instances) {
    for (const std::string& label : inst.gold_labels) ++counts[label];
  }
  for (const auto& [label, count] : counts) {
    ckpt.catalog.labels.push_back(label);
    ckpt.catalog.counts.push_back(count);
  }
  ckpt.config.d_model = 16;
  ckpt.config.n_heads = 2;
  ckpt.config.n_base_layers = 1;
  ckpt.config.d_ff = 32;
  ckpt.config.max_len = 64;
  ckpt.config.dropout_p = 0.0;
  ckpt.config.family = family;
  ckpt.config.seed = seed;
  ckpt.params = init_params(ckpt.config, static_cast<int>(ckpt.vocab.size()),
                            static_cast<int>(ckpt.catalog.size()));
  return ckpt;
}

}  // namespace

TEST_CASE("all-zero classifier weights predict every label (inclusive threshold)") {
  SyntheticOptions options;
  options.n_docs = 4;
  options.seed = 5;
  SyntheticData data = make_synthetic(options);
  Checkpoint ckpt = tiny_checkpoint(ModelFamily::kPlain, data, 0);
  ckpt.params.head_w.fill(0.0);
  ckpt.params.head_b.fill(0.0);
  PredictionSet predictions = predict_instances(ckpt, data.instances, nullptr);
  REQUIRE(predictions.size() == data.instances.size());
  for (const auto& [key, labels] : predictions) {
    CHECK(labels.size() == ckpt.catalog.size());  // x_r = 0.5 exactly, >= 0.5 predicts
  }
}

TEST_CASE("empty instance list gives an empty prediction set") {
  SyntheticOptions options;
  options.n_docs = 3;
  options.seed = 6;
  SyntheticData data = make_synthetic(options);
  Checkpoint ckpt = tiny_checkpoint(ModelFamily::kPlain, data, 0);
  CHECK(predict_instances(ckpt, {}, nullptr).empty());
}

TEST_CASE("a model trained to memorize five instances predicts their gold sets") {
  SyntheticOptions options;
  options.n_docs = 5;
  options.seed = 777;
  SyntheticData data = make_synthetic(options);
  std::vector<std::string> texts;
  for (const CandidateInstance& inst : data.instances) texts.push_back(inst.marked_text);
  SubwordVocab vocab = build_vocab(texts, 2);
  std::map<std::string, long long> counts;
  for (const CandidateInstance& inst : data.instances) {
    for (const std::string& label : inst.gold_labels) ++counts[label];
  }
  LabelCatalog catalog;
  for (const auto& [label, count] : counts) {
    catalog.labels.push_back(label);
    catalog.counts.push_back(count);
  }
  EncoderConfig encoder;
  encoder.d_model = 16;
  encoder.n_heads = 2;
  encoder.n_base_layers = 1;
  encoder.d_ff = 32;
  encoder.dropout_p = 0.0;
  encoder.family = ModelFamily::kPlain;
  TrainConfig trainer;
  trainer.batch_size = 5;
  trainer.learning_rate = 5e-3;
  trainer.max_epochs = 300;
  trainer.patience = 1000;
  const auto encoded = encode_instances(data.instances, nullptr, vocab, ModelFamily::kPlain);
  TrainResult result = train_one(0, encoded, encoded, encoder, trainer, vocab, catalog);
  REQUIRE(result.log.best_dev_f1 == doctest::Approx(1.0));

  PredictionSet predictions = predict_instances(result.checkpoint, data.instances, nullptr);
  for (const CandidateInstance& inst : data.instances) {
    const auto& predicted = predictions.at({inst.doc_id, inst.subject_id, inst.object_id});
    CHECK(predicted == std::set<std::string>(inst.gold_labels.begin(), inst.gold_labels.end()));
  }
}

TEST_CASE("catalog/head mismatch is rejected") {
  SyntheticOptions options;
  options.n_docs = 3;
  options.seed = 6;
  SyntheticData data = make_synthetic(options);
  Checkpoint ckpt = tiny_checkpoint(ModelFamily::kPlain, data, 0);
  ckpt.catalog.labels.push_back("EXTRA");
  ckpt.catalog.counts.push_back(1);
  CHECK_THROWS_WITH_AS(predict_instances(ckpt, data.instances, nullptr),
                       doctest::Contains("catalog"), PipelineError);
}

TEST_CASE("kv config parsing round trips a pipeline config") {
  ScratchDir dir("cfg");
  const std::string config_text =
      "# pipeline configuration\n"
      "work_dir = work\n"
      "train.abstracts = ta.tsv\ntrain.entities = te.tsv\ntrain.relations = tr.tsv\n"
      "train.trees = tt.txt\n"
      "dev.abstracts = da.tsv\ndev.entities = de.tsv\ndev.relations = dr.tsv\n"
      "dev.trees = dt.txt\n"
      "encoder.d_model = 24\nencoder.n_heads = 3\nencoder.dropout = 0.2\n"
      "trainer.batch_size = 4\ntrainer.learning_rate = 1e-3\ntrainer.max_epochs = 7\n"
      "ensemble.families = plain, const\nensemble.seeds_per_family = 3\n"
      "ensemble.selection = top_k:2\nensemble.vote_mode = plurality\n"
      "vocab.min_freq = 1\n";
  write_file(dir.file("p.cfg"), config_text);
  PipelineConfig config = load_pipeline_config(dir.file("p.cfg"));
  CHECK(config.work_dir == dir.file("work"));
  CHECK(config.train.abstracts == dir.file("ta.tsv"));
  CHECK(config.encoder.d_model == 24);
  CHECK(config.encoder.n_heads == 3);
  CHECK(config.encoder.dropout_p == doctest::Approx(0.2));
  CHECK(config.trainer.batch_size == 4);
  CHECK(config.trainer.max_epochs == 7);
  REQUIRE(config.families.size() == 2);
  CHECK(config.families[0] == ModelFamily::kPlain);
  CHECK(config.families[1] == ModelFamily::kConst);
  CHECK(config.seeds_per_family == 3);
  CHECK(config.selection == SelectionRule::kTopK);
  CHECK(config.top_k == 2);
  CHECK(config.vote_mode == VoteMode::kPlurality);
  CHECK(config.vocab_min_freq == 1);

  write_file(dir.file("bad.cfg"), "this line has no equals sign\n");
  CHECK_THROWS_AS(load_pipeline_config(dir.file("bad.cfg")), PipelineError);
}

TEST_CASE("pipeline: 2 families x 2 seeds, top_k selection, vote over the union") {
  PipelineWorld world;
  PipelineConfig config = world.config("work_a");
  PipelineResult result = run_pipeline(config);
  CHECK(result.stages_run >= 5);
  CHECK(result.stages_skipped == 0);
  CHECK(std::filesystem::exists(result.predictions_path));
  REQUIRE(!result.report_path.empty());
  CHECK(std::filesystem::exists(result.report_path));
  for (const char* member : {"plain_seed0", "plain_seed1", "const_seed0", "const_seed1"}) {
    CHECK(std::filesystem::exists(world.dir.file("work_a/models/" + std::string(member) + ".ckpt")));
    CHECK(std::filesystem::exists(
        world.dir.file("work_a/predictions/" + std::string(member) + ".tsv")));
  }

  SUBCASE("rerun with unchanged inputs skips every stage and keeps outputs") {
    const std::string before = read_file(result.predictions_path);
    const std::string report_before = read_file(world.dir.file("work_a/report.tsv"));
    PipelineResult again = run_pipeline(config);
    CHECK(again.stages_run == 0);
    CHECK(again.stages_skipped >= 5);
    CHECK(read_file(result.predictions_path) == before);
    CHECK(read_file(world.dir.file("work_a/report.tsv")) == report_before);
  }

  SUBCASE("a fresh work directory reproduces byte-identical artifacts") {
    PipelineConfig other = world.config("work_b");
    PipelineResult second = run_pipeline(other);
    CHECK(read_file(result.predictions_path) == read_file(second.predictions_path));
    CHECK(read_file(world.dir.file("work_a/report.tsv")) ==
          read_file(world.dir.file("work_b/report.tsv")));
    CHECK(read_file(world.dir.file("work_a/models/summary.tsv")) ==
          read_file(world.dir.file("work_b/models/summary.tsv")));
  }
}

TEST_CASE("pipeline halts at parse-import when the const family lacks trees") {
  PipelineWorld world(8, 4, 321);
  PipelineConfig config = world.config("work_c");
  config.train.trees.clear();
  CHECK_THROWS_WITH_AS(run_pipeline(config), doctest::Contains("parse-import"), PipelineError);
}

TEST_CASE("structural A/B harness: families agree on shapes and decision rule") {
  // Chunks forced to all-SINGLETON and the constituent stage neutralized:
  // the const path must expose the same decision surface as plain.
  SyntheticOptions options;
  options.n_docs = 6;
  options.seed = 42;
  SyntheticData data = make_synthetic(options);

  // All-singleton trees: flat (S (NN t) ...).
  std::vector<ConstTree> flat_trees;
  for (const CandidateInstance& inst : data.instances) {
    ConstTree root;
    root.label = "S";
    int index = 0;
    for (const TokenSpan& tok : pre_split(strip_markers(inst.marked_text))) {
      ConstTree leaf;
      leaf.label = "NN";
      leaf.token = tok.surface;
      leaf.token_index = index++;
      root.children.push_back(std::move(leaf));
    }
    flat_trees.push_back(std::move(root));
  }

  Checkpoint plain_ckpt = tiny_checkpoint(ModelFamily::kPlain, data, 3);
  Checkpoint const_ckpt = tiny_checkpoint(ModelFamily::kConst, data, 3);
  // Identity-passthrough initialization for the constituent stage: the
  // extra layers add nothing and constituent positions are zeroed.
  const_ckpt.params.const_pos_embedding.fill(0.0);
  for (LayerParams& layer : const_ckpt.params.const_layers) {
    layer.wo.fill(0.0);
    layer.bo.fill(0.0);
    layer.ff_w2.fill(0.0);
    layer.ff_b2.fill(0.0);
  }

  PredictionSet plain_pred = predict_instances(plain_ckpt, data.instances, nullptr);
  PredictionSet const_pred = predict_instances(const_ckpt, data.instances, &flat_trees);

  REQUIRE(plain_pred.size() == const_pred.size());
  for (const auto& [key, labels] : plain_pred) {
    REQUIRE(const_pred.count(key) == 1);
    // Same label alphabet and the same inclusive >= 0.5 rule on both sides.
    for (const std::string& label : labels) {
      CHECK(plain_ckpt.catalog.index_of(label) >= 0);
    }
    for (const std::string& label : const_pred.at(key)) {
      CHECK(const_ckpt.catalog.index_of(label) >= 0);
    }
  }
}
