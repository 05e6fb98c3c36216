#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relex/checkpoint.hpp"
#include "relex/corpus.hpp"
#include "relex/encoder.hpp"
#include "relex/tensor.hpp"

namespace relex {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// w_r = (sum_i N_i) / N_r over the catalog counts.
struct ClassWeights {
  std::vector<double> w;
};

ClassWeights compute_class_weights(const LabelCatalog& catalog);

// Per-instance loss (1/K) * sum_r -w_r [y_r log x_r + (1-y_r) log(1-x_r)],
// averaged over the batch. Probabilities are clamped to
// [1e-7, 1 - 1e-7] inside the logs.
double weighted_bce(const Mat& probabilities, const Mat& targets, const std::vector<double>& weights);

// 0/1 target matrix (batch x K) from per-instance gold label sets.
Mat targets_from_instances(const std::vector<EncodedInstance>& batch, const LabelCatalog& catalog);

struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Mat> m;  // first moments, aligned with named_tensors order
  std::vector<Mat> v;  // second moments
  long long step = 0;
};

AdamState make_adam_state(const ModelParams& params);

// Scalar Adam update with bias correction; t counts from 1.
void adam_update(double grad, double* m, double* v, double* x, long long t,
                 const AdamConfig& config);

void adam_step(ModelParams* params, const ModelParams& grads, AdamState* state,
               const AdamConfig& config);

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 10;
  int patience = 3;    // evaluations without dev-F1 gain before stopping
  int eval_every = 0;  // steps; 0 = once per epoch
  std::uint64_t seed = 0;
  bool clip_gradients = false;
  double clip_norm = 1.0;

  void validate() const;
};

struct TrainLogEntry {
  long long step = 0;
  double train_loss = 0.0;
  double dev_f1 = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  long long best_step = -1;
  double best_dev_f1 = -1.0;
  bool stopped_early = false;
};

struct TrainResult {
  Checkpoint checkpoint;  // parameters at the best dev F1
  TrainLog log;
};

// Label r is predicted when x_r >= 0.5; the empty set means NONE.
std::vector<std::vector<std::string>> predict_labels(const Mat& probabilities,
                                                     const LabelCatalog& catalog);

// Dev micro-F1 of a parameter set over encoded instances (inference mode).
double dev_micro_f1(const ModelParams& params, const EncoderConfig& config,
                    const std::vector<EncodedInstance>& dev, const LabelCatalog& catalog);

// Seeded mini-batch training with dev-F1 early stopping. Keeps the
// checkpoint of the best evaluation; fully deterministic for a fixed
// (seed, data, config) triple.
TrainResult train_one(std::uint64_t model_init_seed, const std::vector<EncodedInstance>& train,
                      const std::vector<EncodedInstance>& dev, EncoderConfig encoder_config,
                      const TrainConfig& train_config, const SubwordVocab& vocab,
                      const LabelCatalog& catalog);

void write_train_log(const std::string& path, const TrainLog& log);

}  // namespace relex
