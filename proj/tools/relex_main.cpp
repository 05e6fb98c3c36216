// relex: a chemical-gene relation extraction pipeline with entity-pair
// markers, constituency-based chunking and majority-vote ensembling.
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "relex/alignment.hpp"
#include "relex/checkpoint.hpp"
#include "relex/corpus.hpp"
#include "relex/ensemble.hpp"
#include "relex/evaluate.hpp"
#include "relex/pipeline.hpp"
#include "relex/preprocess.hpp"
#include "relex/syntax.hpp"
#include "relex/training.hpp"

namespace {

using namespace relex;

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

TrainConfig trainer_from_kv(const std::map<std::string, std::string>& kv);
EncoderConfig encoder_from_kv(const std::map<std::string, std::string>& kv);

int cmd_prepare(const std::string& abstracts, const std::string& entities,
                const std::string& relations, const std::string& output,
                const std::string& report_path) {
  std::optional<std::string> rel;
  if (!relations.empty()) rel = relations;
  Corpus corpus = load_corpus(abstracts, entities, rel);
  PrepReport report;
  std::vector<CandidateInstance> instances = prepare_corpus(corpus, &report);
  write_instances(output, instances);
  std::string report_text;
  for (const std::string& line : report.lines()) report_text += line + "\n";
  if (report_path.empty()) {
    std::cerr << report_text;
  } else {
    write_text(report_path, report_text);
  }
  std::cerr << "wrote " << instances.size() << " instances to " << output << "\n";
  return 0;
}

int cmd_parse_import(const std::string& instances_path, const std::string& trees_path,
                     const std::string& output) {
  const std::vector<CandidateInstance> instances = read_instances(instances_path);
  const std::vector<ConstTree> trees = read_trees_file(trees_path);
  const std::vector<std::string> problems = verify_tree_alignment(instances, trees);
  if (!problems.empty()) {
    for (const std::string& p : problems) std::cerr << p << "\n";
    std::cerr << problems.size() << " alignment problems\n";
    return 1;
  }
  if (!output.empty()) write_trees_file(output, trees);
  std::cerr << trees.size() << " trees verified against " << instances_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& instances_path,
              const std::string& trees_path, const std::string& dev_instances_path,
              const std::string& dev_trees_path, const std::string& family_name_str,
              std::uint64_t seed, const std::string& output, const std::string& log_path) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_kv_file(config_path);
  EncoderConfig encoder = encoder_from_kv(kv);
  TrainConfig trainer = trainer_from_kv(kv);
  encoder.family = parse_family(family_name_str);
  trainer.seed = seed;

  const std::vector<CandidateInstance> train_inst = read_instances(instances_path);
  const std::vector<CandidateInstance> dev_inst = read_instances(dev_instances_path);
  std::vector<ConstTree> train_trees, dev_trees;
  if (encoder.family == ModelFamily::kConst) {
    if (trees_path.empty() || dev_trees_path.empty()) {
      std::cerr << "const family requires --trees and --dev-trees\n";
      return 1;
    }
    train_trees = read_trees_file(trees_path);
    dev_trees = read_trees_file(dev_trees_path);
  }

  std::vector<std::string> marked;
  marked.reserve(train_inst.size());
  for (const CandidateInstance& inst : train_inst) marked.push_back(inst.marked_text);
  int min_freq = 2;
  if (auto it = kv.find("vocab.min_freq"); it != kv.end()) min_freq = std::stoi(it->second);
  const SubwordVocab vocab = build_vocab(marked, min_freq);

  std::map<std::string, long long> counts;
  for (const CandidateInstance& inst : train_inst) {
    for (const std::string& label : inst.gold_labels) ++counts[label];
  }
  if (counts.empty()) {
    std::cerr << "train instances carry no gold labels\n";
    return 1;
  }
  LabelCatalog catalog;
  for (const auto& [label, count] : counts) {
    catalog.labels.push_back(label);
    catalog.counts.push_back(count);
  }

  const std::vector<ConstTree>* tt = encoder.family == ModelFamily::kConst ? &train_trees : nullptr;
  const std::vector<ConstTree>* dt = encoder.family == ModelFamily::kConst ? &dev_trees : nullptr;
  const auto train_encoded = encode_instances(train_inst, tt, vocab, encoder.family);
  const auto dev_encoded = encode_instances(dev_inst, dt, vocab, encoder.family);

  TrainResult result = train_one(seed, train_encoded, dev_encoded, encoder, trainer, vocab, catalog);
  save_checkpoint(output, result.checkpoint);
  if (!log_path.empty()) write_train_log(log_path, result.log);
  for (const TrainLogEntry& e : result.log.entries) {
    std::cerr << e.step << "\t" << e.train_loss << "\t" << e.dev_f1 << "\n";
  }
  std::cerr << "best dev F1 " << result.log.best_dev_f1 << " at step " << result.log.best_step
            << (result.log.stopped_early ? " (early stop)" : "") << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& instances_path,
                const std::string& trees_path, const std::string& output) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const std::vector<CandidateInstance> instances = read_instances(instances_path);
  std::vector<ConstTree> trees;
  const std::vector<ConstTree>* tp = nullptr;
  if (ckpt.config.family == ModelFamily::kConst) {
    if (trees_path.empty()) {
      std::cerr << "checkpoint uses the const family; --trees is required\n";
      return 1;
    }
    trees = read_trees_file(trees_path);
    tp = &trees;
  }
  write_predictions(output, predict_instances(ckpt, instances, tp));
  std::cerr << "wrote predictions for " << instances.size() << " instances to " << output << "\n";
  return 0;
}

int cmd_vote(const std::vector<std::string>& files, const std::string& mode_str,
             const std::string& output) {
  const VoteMode mode = parse_vote_mode(mode_str);
  write_predictions(output, vote_files(files, mode));
  std::cerr << "voted over " << files.size() << " prediction files (" << mode_str << ")\n";
  return 0;
}

EvalReport build_report(const std::string& gold_path, const std::string& pred_path,
                        const std::string& counts_path) {
  const PredictionSet gold = read_predictions(gold_path);
  const PredictionSet pred = read_predictions(pred_path);
  std::map<std::string, long long> counts;
  LabelCatalog catalog;
  if (!counts_path.empty()) {
    counts = read_train_counts(counts_path);
    for (const auto& [label, count] : counts) {
      catalog.labels.push_back(label);
      catalog.counts.push_back(count);
    }
  } else {
    std::set<std::string> labels;
    for (const auto& [key, set] : gold) labels.insert(set.begin(), set.end());
    for (const auto& [key, set] : pred) labels.insert(set.begin(), set.end());
    for (const std::string& label : labels) {
      catalog.labels.push_back(label);
      catalog.counts.push_back(1);
    }
  }
  EvalReport report = evaluate_predictions(gold, pred, catalog);
  if (!counts.empty()) {
    std::vector<std::pair<double, double>> points;
    for (const auto& [label, metrics] : report.per_label) {
      auto it = counts.find(label);
      if (it != counts.end()) points.emplace_back(static_cast<double>(it->second), metrics.prf.f1);
    }
    bool distinct = false;
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (points[i].first != points[0].first) distinct = true;
    }
    if (points.size() >= 2 && distinct) report.fit = least_squares_fit(points);
  }
  return report;
}

int cmd_evaluate(const std::string& gold_path, const std::string& pred_path,
                 const std::string& counts_path, const std::string& format,
                 const std::string& output) {
  const EvalReport report = build_report(gold_path, pred_path, counts_path);
  const std::string text =
      render_report(report, format == "tsv" ? ReportFormat::kTsv : ReportFormat::kText);
  if (output.empty()) {
    std::cout << text;
  } else {
    write_text(output, text);
  }
  return 0;
}

int cmd_analyze(const std::string& gold_path, const std::string& pred_path,
                const std::string& counts_path, const std::string& output) {
  const EvalReport report = build_report(gold_path, pred_path, counts_path);
  std::string text = render_report(report, ReportFormat::kTsv);
  text += "# prediction counts per label\n";
  for (const auto& [label, metrics] : report.per_label) {
    text += "PRED\t" + label + "\t" + std::to_string(metrics.pred_count) + "\n";
  }
  if (output.empty()) {
    std::cout << text;
  } else {
    write_text(output, text);
  }
  return 0;
}

int cmd_pipeline(const std::string& config_path) {
  const PipelineConfig config = load_pipeline_config(config_path);
  const PipelineResult result = run_pipeline(config);
  std::cerr << "pipeline done: " << result.stages_run << " stages run, " << result.stages_skipped
            << " skipped\n";
  std::cerr << "ensemble predictions: " << result.predictions_path << "\n";
  if (!result.report_path.empty()) std::cerr << "report: " << result.report_path << "\n";
  return 0;
}

EncoderConfig encoder_from_kv(const std::map<std::string, std::string>& kv) {
  EncoderConfig config;
  auto geti = [&](const char* key, int* out) {
    if (auto it = kv.find(key); it != kv.end()) *out = std::stoi(it->second);
  };
  geti("encoder.d_model", &config.d_model);
  geti("encoder.n_heads", &config.n_heads);
  geti("encoder.n_base_layers", &config.n_base_layers);
  geti("encoder.d_ff", &config.d_ff);
  geti("encoder.max_len", &config.max_len);
  if (auto it = kv.find("encoder.dropout"); it != kv.end()) config.dropout_p = std::stod(it->second);
  if (auto it = kv.find("encoder.pooling"); it != kv.end()) {
    config.pooling = it->second == "cls" ? PoolingMode::kCls : PoolingMode::kMean;
  }
  config.validate();
  return config;
}

TrainConfig trainer_from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig config;
  auto geti = [&](const char* key, int* out) {
    if (auto it = kv.find(key); it != kv.end()) *out = std::stoi(it->second);
  };
  geti("trainer.batch_size", &config.batch_size);
  geti("trainer.max_epochs", &config.max_epochs);
  geti("trainer.patience", &config.patience);
  geti("trainer.eval_every", &config.eval_every);
  if (auto it = kv.find("trainer.learning_rate"); it != kv.end()) {
    config.learning_rate = std::stod(it->second);
  }
  if (auto it = kv.find("trainer.clip_gradients"); it != kv.end()) {
    config.clip_gradients = it->second == "1" || it->second == "true";
  }
  if (auto it = kv.find("trainer.clip_norm"); it != kv.end()) {
    config.clip_norm = std::stod(it->second);
  }
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relex: chemical-gene relation extraction with constituency chunking"};
  app.require_subcommand(1);

  // prepare
  std::string abstracts, entities, relations, output, report_path;
  auto* prepare = app.add_subcommand("prepare", "build marker-tagged candidate instances");
  prepare->add_option("--abstracts", abstracts)->required();
  prepare->add_option("--entities", entities)->required();
  prepare->add_option("--relations", relations);
  prepare->add_option("-o,--output", output)->required();
  prepare->add_option("--report", report_path);

  // parse-import
  std::string pi_instances, pi_trees, pi_output;
  auto* parse_import = app.add_subcommand("parse-import", "verify trees against instances");
  parse_import->add_option("--instances", pi_instances)->required();
  parse_import->add_option("--trees", pi_trees)->required();
  parse_import->add_option("-o,--output", pi_output);

  // train
  std::string tr_config, tr_instances, tr_trees, tr_dev, tr_dev_trees, tr_family = "plain";
  std::string tr_output, tr_log;
  std::uint64_t tr_seed = 0;
  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--config", tr_config);
  train->add_option("--instances", tr_instances)->required();
  train->add_option("--trees", tr_trees);
  train->add_option("--dev-instances", tr_dev)->required();
  train->add_option("--dev-trees", tr_dev_trees);
  train->add_option("--family", tr_family)->check(CLI::IsMember({"plain", "const"}));
  train->add_option("--seed", tr_seed);
  train->add_option("-o,--output", tr_output)->required();
  train->add_option("--log", tr_log);

  // predict
  std::string pr_ckpt, pr_instances, pr_trees, pr_output;
  auto* predict = app.add_subcommand("predict", "predict label sets with one checkpoint");
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--instances", pr_instances)->required();
  predict->add_option("--trees", pr_trees);
  predict->add_option("-o,--output", pr_output)->required();

  // vote
  std::vector<std::string> vote_inputs;
  std::string vote_mode = "majority", vote_output;
  auto* vote = app.add_subcommand("vote", "majority-vote several prediction files");
  vote->add_option("files", vote_inputs)->required()->expected(-2);
  vote->add_option("--mode", vote_mode)->check(CLI::IsMember({"majority", "plurality"}));
  vote->add_option("-o,--output", vote_output)->required();

  // evaluate
  std::string ev_gold, ev_pred, ev_counts, ev_format = "text", ev_output;
  auto* evaluate = app.add_subcommand("evaluate", "micro and per-relation metrics");
  evaluate->add_option("--gold", ev_gold)->required();
  evaluate->add_option("--pred", ev_pred)->required();
  evaluate->add_option("--train-counts", ev_counts);
  evaluate->add_option("--format", ev_format)->check(CLI::IsMember({"text", "tsv"}));
  evaluate->add_option("-o,--output", ev_output);

  // analyze
  std::string an_gold, an_pred, an_counts, an_output;
  auto* analyze = app.add_subcommand("analyze", "per-relation analysis and F1-vs-count fit");
  analyze->add_option("--gold", an_gold)->required();
  analyze->add_option("--pred", an_pred)->required();
  analyze->add_option("--train-counts", an_counts);
  analyze->add_option("-o,--output", an_output);

  // pipeline
  std::string pl_config;
  auto* pipeline = app.add_subcommand("pipeline", "run the full multi-seed ensemble pipeline");
  pipeline->add_option("--config", pl_config)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cmd_prepare(abstracts, entities, relations, output, report_path);
    if (parse_import->parsed()) return cmd_parse_import(pi_instances, pi_trees, pi_output);
    if (train->parsed()) {
      return cmd_train(tr_config, tr_instances, tr_trees, tr_dev, tr_dev_trees, tr_family, tr_seed,
                       tr_output, tr_log);
    }
    if (predict->parsed()) return cmd_predict(pr_ckpt, pr_instances, pr_trees, pr_output);
    if (vote->parsed()) return cmd_vote(vote_inputs, vote_mode, vote_output);
    if (evaluate->parsed()) return cmd_evaluate(ev_gold, ev_pred, ev_counts, ev_format, ev_output);
    if (analyze->parsed()) return cmd_analyze(an_gold, an_pred, an_counts, an_output);
    if (pipeline->parsed()) return cmd_pipeline(pl_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
