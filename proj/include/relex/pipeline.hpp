#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relex/alignment.hpp"
#include "relex/checkpoint.hpp"
#include "relex/ensemble.hpp"
#include "relex/evaluate.hpp"
#include "relex/training.hpp"

namespace relex {

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// key = value file with '#' comments; whitespace around both sides is
// trimmed.
std::map<std::string, std::string> read_kv_file(const std::string& path);

struct SplitPaths {
  std::string abstracts;
  std::string entities;
  std::string relations;  // may be empty (blind sets)
  std::string trees;      // required per split when a const family is enabled

  bool present() const { return !abstracts.empty(); }
};

struct PipelineConfig {
  std::string work_dir;
  SplitPaths train;
  SplitPaths dev;
  SplitPaths test;  // optional; evaluation falls back to dev
  EncoderConfig encoder;
  TrainConfig trainer;
  std::vector<ModelFamily> families = {ModelFamily::kConst};
  int seeds_per_family = 8;
  SelectionRule selection = SelectionRule::kDropWorst;
  int top_k = 4;
  VoteMode vote_mode = VoteMode::kMajority;
  int vocab_min_freq = 2;

  void validate() const;
};

PipelineConfig load_pipeline_config(const std::string& path);

// Per-instance label sets via the inclusive >= 0.5 threshold; every
// instance key appears, negatives with an empty set.
PredictionSet predict_instances(const Checkpoint& checkpoint,
                                const std::vector<CandidateInstance>& instances,
                                const std::vector<ConstTree>* trees);

struct PipelineResult {
  std::string predictions_path;
  std::string report_path;  // empty when no gold was available
  int stages_run = 0;
  int stages_skipped = 0;
};

// prepare -> parse-import -> train (multi-seed, parallel up to the
// RELEX_JOBS cap) -> predict -> vote -> evaluate -> analyze. Stages whose
// outputs exist and whose content-hash stamp matches are skipped; any
// stage failure halts with the stage name and the underlying error.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace relex
