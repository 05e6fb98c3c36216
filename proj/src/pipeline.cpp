#include "relex/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "relex/preprocess.hpp"
#include "relex/syntax.hpp"

namespace fs = std::filesystem;

namespace relex {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvBasis = 0xCBF29CE484222325ULL;

std::uint64_t hash_string(std::uint64_t h, const std::string& s) {
  h = fnv1a(h, s.data(), s.size());
  return fnv1a(h, "\x1f", 1);
}

std::uint64_t hash_file(std::uint64_t h, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return hash_string(h, "<missing:" + path + ">");
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
  }
  return hash_string(h, path);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int parallelism_cap(int n_tasks) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("RELEX_JOBS")) {
    const int requested = std::atoi(env);
    if (requested >= 1) cap = requested;
  }
  return std::min(cap, n_tasks);
}

// Runs one pipeline stage unless its stamp and outputs are current.
struct StageRunner {
  fs::path stamp_dir;
  int run_count = 0;
  int skip_count = 0;

  template <typename Fn>
  void stage(const std::string& name, std::uint64_t input_hash,
             const std::vector<std::string>& outputs, Fn&& body) {
    const fs::path stamp_path = stamp_dir / (name + ".hash");
    const std::string want = hex64(input_hash);
    bool current = fs::exists(stamp_path);
    if (current) {
      std::ifstream in(stamp_path);
      std::string have;
      in >> have;
      current = have == want;
    }
    for (const std::string& out : outputs) {
      if (!fs::exists(out)) current = false;
    }
    if (current) {
      ++skip_count;
      return;
    }
    try {
      body();
    } catch (const std::exception& e) {
      throw PipelineError("stage " + name + " failed: " + e.what());
    }
    std::ofstream out(stamp_path);
    out << want << "\n";
    ++run_count;
  }
};

struct SplitArtifacts {
  std::string instances;
  std::string report;
  std::string trees;  // checked copy; empty when unused
};

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw PipelineError("bad numeric value for " + key + ": \"" + value + "\"");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw PipelineError("bad integer value for " + key + ": \"" + value + "\"");
  }
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open config " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw PipelineError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw PipelineError(path + ":" + std::to_string(line_no) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

void PipelineConfig::validate() const {
  if (work_dir.empty()) throw PipelineError("work_dir is required");
  if (!train.present() || train.entities.empty() || train.relations.empty()) {
    throw PipelineError("train split needs abstracts, entities and relations");
  }
  if (!dev.present() || dev.entities.empty() || dev.relations.empty()) {
    throw PipelineError("dev split needs abstracts, entities and relations");
  }
  if (test.present() && test.entities.empty()) {
    throw PipelineError("test split needs an entities file");
  }
  if (families.empty()) throw PipelineError("at least one model family is required");
  if (seeds_per_family < 1) throw PipelineError("seeds_per_family must be >= 1");
  if (selection == SelectionRule::kTopK && (top_k < 1 || top_k > seeds_per_family)) {
    throw PipelineError("top_k out of range");
  }
  encoder.validate();
  trainer.validate();
}

PipelineConfig load_pipeline_config(const std::string& path) {
  const auto kv = read_kv_file(path);
  PipelineConfig config;
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    fs::path candidate(p);
    return candidate.is_absolute() ? p : (base / candidate).string();
  };
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };

  if (auto v = get("work_dir")) config.work_dir = resolve(*v);
  auto load_split = [&](const std::string& prefix, SplitPaths* split) {
    if (auto v = get(prefix + ".abstracts")) split->abstracts = resolve(*v);
    if (auto v = get(prefix + ".entities")) split->entities = resolve(*v);
    if (auto v = get(prefix + ".relations")) split->relations = resolve(*v);
    if (auto v = get(prefix + ".trees")) split->trees = resolve(*v);
  };
  load_split("train", &config.train);
  load_split("dev", &config.dev);
  load_split("test", &config.test);

  if (auto v = get("encoder.d_model")) config.encoder.d_model = static_cast<int>(parse_int("encoder.d_model", *v));
  if (auto v = get("encoder.n_heads")) config.encoder.n_heads = static_cast<int>(parse_int("encoder.n_heads", *v));
  if (auto v = get("encoder.n_base_layers")) {
    config.encoder.n_base_layers = static_cast<int>(parse_int("encoder.n_base_layers", *v));
  }
  if (auto v = get("encoder.d_ff")) config.encoder.d_ff = static_cast<int>(parse_int("encoder.d_ff", *v));
  if (auto v = get("encoder.max_len")) config.encoder.max_len = static_cast<int>(parse_int("encoder.max_len", *v));
  if (auto v = get("encoder.dropout")) config.encoder.dropout_p = parse_double("encoder.dropout", *v);
  if (auto v = get("encoder.pooling")) {
    if (*v == "mean") {
      config.encoder.pooling = PoolingMode::kMean;
    } else if (*v == "cls") {
      config.encoder.pooling = PoolingMode::kCls;
    } else {
      throw PipelineError("encoder.pooling must be mean or cls");
    }
  }

  if (auto v = get("trainer.batch_size")) config.trainer.batch_size = static_cast<int>(parse_int("trainer.batch_size", *v));
  if (auto v = get("trainer.learning_rate")) config.trainer.learning_rate = parse_double("trainer.learning_rate", *v);
  if (auto v = get("trainer.max_epochs")) config.trainer.max_epochs = static_cast<int>(parse_int("trainer.max_epochs", *v));
  if (auto v = get("trainer.patience")) config.trainer.patience = static_cast<int>(parse_int("trainer.patience", *v));
  if (auto v = get("trainer.eval_every")) config.trainer.eval_every = static_cast<int>(parse_int("trainer.eval_every", *v));
  if (auto v = get("trainer.seed")) config.trainer.seed = static_cast<std::uint64_t>(parse_int("trainer.seed", *v));
  if (auto v = get("trainer.clip_gradients")) config.trainer.clip_gradients = *v == "1" || *v == "true";
  if (auto v = get("trainer.clip_norm")) config.trainer.clip_norm = parse_double("trainer.clip_norm", *v);

  if (auto v = get("ensemble.families")) {
    config.families.clear();
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string name = trim(item);
      if (!name.empty()) config.families.push_back(parse_family(name));
    }
  }
  if (auto v = get("ensemble.seeds_per_family")) {
    config.seeds_per_family = static_cast<int>(parse_int("ensemble.seeds_per_family", *v));
  }
  if (auto v = get("ensemble.selection")) {
    if (*v == "drop_worst") {
      config.selection = SelectionRule::kDropWorst;
    } else if (v->rfind("top_k:", 0) == 0) {
      config.selection = SelectionRule::kTopK;
      config.top_k = static_cast<int>(parse_int("ensemble.selection", v->substr(6)));
    } else {
      throw PipelineError("ensemble.selection must be drop_worst or top_k:<k>");
    }
  }
  if (auto v = get("ensemble.vote_mode")) config.vote_mode = parse_vote_mode(*v);
  if (auto v = get("vocab.min_freq")) config.vocab_min_freq = static_cast<int>(parse_int("vocab.min_freq", *v));

  config.validate();
  return config;
}

PredictionSet predict_instances(const Checkpoint& checkpoint,
                                const std::vector<CandidateInstance>& instances,
                                const std::vector<ConstTree>* trees) {
  if (checkpoint.catalog.size() == 0) {
    throw PipelineError("checkpoint carries an empty label catalog");
  }
  if (checkpoint.params.head_w.cols != static_cast<int>(checkpoint.catalog.size())) {
    throw PipelineError("checkpoint catalog does not match its classifier head");
  }
  PredictionSet out;
  if (instances.empty()) return out;
  const std::vector<EncodedInstance> encoded =
      encode_instances(instances, trees, checkpoint.vocab, checkpoint.config.family);

  const std::size_t kChunk = 64;
  ForwardOptions options;  // inference
  for (std::size_t start = 0; start < encoded.size(); start += kChunk) {
    const std::size_t end = std::min(encoded.size(), start + kChunk);
    std::vector<EncodedInstance> batch(encoded.begin() + start, encoded.begin() + end);
    Mat probs = forward_batch(checkpoint.params, checkpoint.config, batch,
                              static_cast<int>(checkpoint.catalog.size()), options);
    const auto labels = predict_labels(probs, checkpoint.catalog);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      InstanceKey key{batch[i].doc_id, batch[i].subject_id, batch[i].object_id};
      out[key] = std::set<std::string>(labels[i].begin(), labels[i].end());
    }
  }
  return out;
}

namespace {

struct PreparedSplit {
  std::vector<CandidateInstance> instances;
  std::vector<ConstTree> trees;  // empty when no const family is active
};

LabelCatalog catalog_from_instances(const std::vector<CandidateInstance>& instances) {
  std::map<std::string, long long> counts;
  for (const CandidateInstance& inst : instances) {
    for (const std::string& label : inst.gold_labels) ++counts[label];
  }
  if (counts.empty()) throw PipelineError("no gold labels in the train instances");
  LabelCatalog catalog;
  for (const auto& [label, count] : counts) {
    catalog.labels.push_back(label);
    catalog.counts.push_back(count);
  }
  return catalog;
}

LabelCatalog read_train_counts_as_catalog(const std::string& path) {
  LabelCatalog catalog;
  for (const auto& [label, count] : read_train_counts(path)) {
    catalog.labels.push_back(label);
    catalog.counts.push_back(count);
  }
  if (catalog.labels.empty()) throw PipelineError("empty train counts file " + path);
  return catalog;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  for (const SplitPaths* split : {&config.train, &config.dev, &config.test}) {
    for (const std::string* path :
         {&split->abstracts, &split->entities, &split->relations, &split->trees}) {
      if (!path->empty() && !fs::exists(*path)) {
        throw PipelineError("configured input does not exist: " + *path);
      }
    }
  }
  const fs::path work(config.work_dir);
  fs::create_directories(work / "prepare");
  fs::create_directories(work / "trees");
  fs::create_directories(work / "models");
  fs::create_directories(work / "predictions");
  fs::create_directories(work / ".stamps");

  StageRunner runner{work / ".stamps"};
  const bool has_const = std::find(config.families.begin(), config.families.end(),
                                   ModelFamily::kConst) != config.families.end();
  const bool eval_on_test = config.test.present();
  const std::string eval_split = eval_on_test ? "test" : "dev";

  struct SplitDef {
    std::string name;
    const SplitPaths* paths;
  };
  std::vector<SplitDef> splits = {{"train", &config.train}, {"dev", &config.dev}};
  if (config.test.present()) splits.push_back({"test", &config.test});

  auto instances_path = [&](const std::string& name) {
    return (work / "prepare" / (name + "_instances.tsv")).string();
  };
  auto report_path_of = [&](const std::string& name) {
    return (work / "prepare" / (name + "_report.txt")).string();
  };
  auto checked_trees_path = [&](const std::string& name) {
    return (work / "trees" / (name + "_trees.txt")).string();
  };
  const std::string counts_path = (work / "prepare" / "train_counts.tsv").string();

  // ---- prepare ----
  {
    std::uint64_t h = hash_string(kFnvBasis, "prepare");
    std::vector<std::string> outputs = {counts_path};
    for (const SplitDef& s : splits) {
      h = hash_file(h, s.paths->abstracts);
      h = hash_file(h, s.paths->entities);
      if (!s.paths->relations.empty()) h = hash_file(h, s.paths->relations);
      outputs.push_back(instances_path(s.name));
      outputs.push_back(report_path_of(s.name));
    }
    runner.stage("prepare", h, outputs, [&]() {
      for (const SplitDef& s : splits) {
        std::optional<std::string> relations;
        if (!s.paths->relations.empty()) relations = s.paths->relations;
        Corpus corpus = load_corpus(s.paths->abstracts, s.paths->entities, relations);
        PrepReport report;
        std::vector<CandidateInstance> instances = prepare_corpus(corpus, &report);
        write_instances(instances_path(s.name), instances);
        std::ofstream rep(report_path_of(s.name), std::ios::binary);
        for (const std::string& line : report.lines()) rep << line << "\n";
        if (s.name == "train") {
          write_train_counts(counts_path, catalog_from_instances(instances));
        }
      }
    });
  }

  // ---- parse-import ----
  if (has_const) {
    std::uint64_t h = hash_string(kFnvBasis, "parse-import");
    std::vector<std::string> outputs;
    for (const SplitDef& s : splits) {
      if (s.paths->trees.empty()) {
        throw PipelineError("stage parse-import failed: const family enabled but no trees file "
                            "for the " + s.name + " split");
      }
      h = hash_file(h, s.paths->trees);
      h = hash_file(h, instances_path(s.name));
      outputs.push_back(checked_trees_path(s.name));
    }
    runner.stage("parse-import", h, outputs, [&]() {
      for (const SplitDef& s : splits) {
        const std::vector<CandidateInstance> instances = read_instances(instances_path(s.name));
        const std::vector<ConstTree> trees = read_trees_file(s.paths->trees);
        const std::vector<std::string> problems = verify_tree_alignment(instances, trees);
        if (!problems.empty()) {
          std::string msg = s.name + " trees do not match the instances:";
          for (std::size_t i = 0; i < std::min<std::size_t>(problems.size(), 10); ++i) {
            msg += "\n  " + problems[i];
          }
          throw PipelineError(msg);
        }
        write_trees_file(checked_trees_path(s.name), trees);
      }
    });
  }

  // ---- train ----
  struct Member {
    ModelFamily family;
    std::uint64_t seed = 0;
    std::string name;
    std::string checkpoint_path;
    std::string log_path;
    std::string prediction_path;
    double dev_f1 = 0.0;
  };
  std::vector<Member> members;
  for (ModelFamily family : config.families) {
    for (int s = 0; s < config.seeds_per_family; ++s) {
      Member m;
      m.family = family;
      m.seed = static_cast<std::uint64_t>(s);
      m.name = std::string(family_name(family)) + "_seed" + std::to_string(s);
      m.checkpoint_path = (work / "models" / (m.name + ".ckpt")).string();
      m.log_path = (work / "models" / (m.name + ".log")).string();
      m.prediction_path = (work / "predictions" / (m.name + ".tsv")).string();
      members.push_back(std::move(m));
    }
  }
  const std::string summary_path = (work / "models" / "summary.tsv").string();

  auto config_fingerprint = [&]() {
    std::uint64_t h = kFnvBasis;
    std::ostringstream os;
    os << config.encoder.d_model << ' ' << config.encoder.n_heads << ' '
       << config.encoder.n_base_layers << ' ' << config.encoder.d_ff << ' '
       << config.encoder.max_len << ' ' << config.encoder.dropout_p << ' '
       << static_cast<int>(config.encoder.pooling) << ' ' << config.trainer.batch_size << ' '
       << config.trainer.learning_rate << ' ' << config.trainer.max_epochs << ' '
       << config.trainer.patience << ' ' << config.trainer.eval_every << ' '
       << config.trainer.seed << ' ' << config.trainer.clip_gradients << ' '
       << config.trainer.clip_norm << ' ' << config.seeds_per_family << ' '
       << config.vocab_min_freq;
    for (ModelFamily f : config.families) os << ' ' << family_name(f);
    return hash_string(h, os.str());
  };

  {
    std::uint64_t h = hash_string(config_fingerprint(), "train");
    h = hash_file(h, instances_path("train"));
    h = hash_file(h, instances_path("dev"));
    if (has_const) {
      h = hash_file(h, checked_trees_path("train"));
      h = hash_file(h, checked_trees_path("dev"));
    }
    std::vector<std::string> outputs = {summary_path};
    for (const Member& m : members) {
      outputs.push_back(m.checkpoint_path);
      outputs.push_back(m.log_path);
    }
    runner.stage("train", h, outputs, [&]() {
      const std::vector<CandidateInstance> train_instances = read_instances(instances_path("train"));
      const std::vector<CandidateInstance> dev_instances = read_instances(instances_path("dev"));
      std::vector<ConstTree> train_trees, dev_trees;
      if (has_const) {
        train_trees = read_trees_file(checked_trees_path("train"));
        dev_trees = read_trees_file(checked_trees_path("dev"));
      }
      std::vector<std::string> marked;
      marked.reserve(train_instances.size());
      for (const CandidateInstance& inst : train_instances) marked.push_back(inst.marked_text);
      const SubwordVocab vocab = build_vocab(marked, config.vocab_min_freq);
      const LabelCatalog catalog = read_train_counts_as_catalog(counts_path);

      // Instances encoded once per family, shared by that family's seeds.
      std::map<ModelFamily, std::vector<EncodedInstance>> train_encoded, dev_encoded;
      for (ModelFamily family : config.families) {
        if (train_encoded.count(family) > 0) continue;
        const std::vector<ConstTree>* tt = family == ModelFamily::kConst ? &train_trees : nullptr;
        const std::vector<ConstTree>* dt = family == ModelFamily::kConst ? &dev_trees : nullptr;
        train_encoded[family] = encode_instances(train_instances, tt, vocab, family);
        dev_encoded[family] = encode_instances(dev_instances, dt, vocab, family);
      }

      std::atomic<std::size_t> next{0};
      std::vector<std::string> failures(members.size());
      auto worker = [&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= members.size()) return;
          Member& m = members[i];
          try {
            EncoderConfig enc = config.encoder;
            enc.family = m.family;
            TrainConfig tc = config.trainer;
            tc.seed = mix_seed(config.trainer.seed, m.seed);
            TrainResult result = train_one(mix_seed(config.trainer.seed, m.seed),
                                           train_encoded[m.family], dev_encoded[m.family], enc, tc,
                                           vocab, catalog);
            save_checkpoint(m.checkpoint_path, result.checkpoint);
            write_train_log(m.log_path, result.log);
            m.dev_f1 = result.log.best_dev_f1;
          } catch (const std::exception& e) {
            failures[i] = m.name + ": " + e.what();
          }
        }
      };
      const int n_threads = parallelism_cap(static_cast<int>(members.size()));
      std::vector<std::thread> pool;
      for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
      for (const std::string& failure : failures) {
        if (!failure.empty()) throw PipelineError(failure);
      }

      std::ofstream summary(summary_path, std::ios::binary);
      char buf[32];
      for (const Member& m : members) {
        std::snprintf(buf, sizeof(buf), "%.6f", m.dev_f1);
        // Paths relative to the work directory keep the file reproducible
        // across work directories.
        summary << family_name(m.family) << '\t' << m.seed << '\t' << "models/" << m.name
                << ".ckpt" << '\t' << buf << '\n';
      }
    });
  }

  // Reload the dev F1 summary (the stage may have been skipped).
  {
    std::ifstream in(summary_path);
    if (!in) throw PipelineError("stage train failed: missing summary " + summary_path);
    std::string line;
    std::size_t idx = 0;
    while (std::getline(in, line) && idx < members.size()) {
      const std::vector<std::string> cols = split_tabs(line);
      if (cols.size() == 4) members[idx].dev_f1 = std::stod(cols[3]);
      ++idx;
    }
  }

  // ---- predict ----
  const std::string eval_instances = instances_path(eval_split);
  const std::string eval_trees = has_const ? checked_trees_path(eval_split) : "";
  {
    std::uint64_t h = hash_string(config_fingerprint(), "predict");
    h = hash_file(h, eval_instances);
    if (has_const) h = hash_file(h, eval_trees);
    std::vector<std::string> outputs;
    for (const Member& m : members) {
      h = hash_file(h, m.checkpoint_path);
      outputs.push_back(m.prediction_path);
    }
    runner.stage("predict", h, outputs, [&]() {
      const std::vector<CandidateInstance> instances = read_instances(eval_instances);
      std::vector<ConstTree> trees;
      if (has_const) trees = read_trees_file(eval_trees);
      for (const Member& m : members) {
        const Checkpoint ckpt = load_checkpoint(m.checkpoint_path);
        const std::vector<ConstTree>* tp =
            ckpt.config.family == ModelFamily::kConst ? &trees : nullptr;
        write_predictions(m.prediction_path, predict_instances(ckpt, instances, tp));
      }
    });
  }

  // ---- vote ----
  const std::string ensemble_path = (work / "predictions" / "ensemble.tsv").string();
  {
    std::uint64_t h = hash_string(config_fingerprint(), "vote");
    h = hash_string(h, config.selection == SelectionRule::kTopK
                           ? "top_k:" + std::to_string(config.top_k)
                           : "drop_worst");
    h = hash_string(h, vote_mode_name(config.vote_mode));
    h = hash_file(h, summary_path);
    for (const Member& m : members) h = hash_file(h, m.prediction_path);
    runner.stage("vote", h, {ensemble_path}, [&]() {
      // Selection applies per family; the vote runs over the union.
      std::vector<std::string> chosen;
      for (ModelFamily family : config.families) {
        std::vector<MemberInfo> candidates;
        for (const Member& m : members) {
          if (m.family != family) continue;
          candidates.push_back({family_name(family), m.prediction_path, m.dev_f1, m.seed});
        }
        const EnsembleSpec spec =
            select_members(candidates, config.selection,
                           config.selection == SelectionRule::kTopK ? config.top_k : 0);
        for (const MemberInfo& info : spec.members) chosen.push_back(info.checkpoint_path);
      }
      if (chosen.size() == 1) {
        // A single member is its own ensemble.
        write_predictions(ensemble_path, read_predictions(chosen[0]));
      } else {
        write_predictions(ensemble_path, vote_files(chosen, config.vote_mode));
      }
    });
  }

  PipelineResult result;
  result.predictions_path = ensemble_path;

  // ---- evaluate + analyze (needs gold for the eval split) ----
  const std::string gold_path = eval_on_test ? config.test.relations : config.dev.relations;
  if (!gold_path.empty()) {
    const std::string report_txt = (work / "report.txt").string();
    const std::string report_tsv = (work / "report.tsv").string();
    const std::string analysis_path = (work / "analysis.tsv").string();
    std::uint64_t h = hash_string(kFnvBasis, "evaluate");
    h = hash_file(h, gold_path);
    h = hash_file(h, ensemble_path);
    h = hash_file(h, counts_path);
    runner.stage("evaluate", h, {report_txt, report_tsv, analysis_path}, [&]() {
      const std::string abstracts = eval_on_test ? config.test.abstracts : config.dev.abstracts;
      const std::string entities = eval_on_test ? config.test.entities : config.dev.entities;
      Corpus gold_corpus = load_corpus(abstracts, entities, gold_path);
      const PredictionSet gold = predictions_from_relations(gold_corpus.relations);
      const PredictionSet pred = read_predictions(ensemble_path);
      const LabelCatalog catalog = read_train_counts_as_catalog(counts_path);
      EvalReport report = evaluate_predictions(gold, pred, catalog);

      const auto train_counts = read_train_counts(counts_path);
      std::vector<std::pair<double, double>> points;
      for (const auto& [label, metrics] : report.per_label) {
        auto it = train_counts.find(label);
        if (it != train_counts.end()) {
          points.emplace_back(static_cast<double>(it->second), metrics.prf.f1);
        }
      }
      bool distinct_x = false;
      for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].first != points[0].first) distinct_x = true;
      }
      if (points.size() >= 2 && distinct_x) report.fit = least_squares_fit(points);

      std::ofstream(report_txt, std::ios::binary) << render_report(report, ReportFormat::kText);
      std::ofstream(report_tsv, std::ios::binary) << render_report(report, ReportFormat::kTsv);
      std::ofstream(analysis_path, std::ios::binary) << render_report(report, ReportFormat::kTsv);
    });
    result.report_path = report_txt;
  }

  result.stages_run = runner.run_count;
  result.stages_skipped = runner.skip_count;
  return result;
}

}  // namespace relex
