#include "relex/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace relex {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

}  // namespace

ClassWeights compute_class_weights(const LabelCatalog& catalog) {
  ClassWeights weights;
  double total = 0.0;
  for (long long c : catalog.counts) {
    if (c <= 0) throw TrainingError("class weight undefined for zero-count label");
    total += static_cast<double>(c);
  }
  weights.w.reserve(catalog.counts.size());
  for (long long c : catalog.counts) weights.w.push_back(total / static_cast<double>(c));
  return weights;
}

double weighted_bce(const Mat& probabilities, const Mat& targets,
                    const std::vector<double>& weights) {
  if (probabilities.rows != targets.rows || probabilities.cols != targets.cols ||
      probabilities.cols != static_cast<int>(weights.size())) {
    throw TrainingError("weighted_bce shape mismatch");
  }
  const int k = probabilities.cols;
  double batch_sum = 0.0;
  for (int b = 0; b < probabilities.rows; ++b) {
    double instance_sum = 0.0;
    for (int r = 0; r < k; ++r) {
      const double x = std::min(std::max(probabilities.at(b, r), kClampLo), kClampHi);
      const double y = targets.at(b, r);
      instance_sum -= weights[r] * (y * std::log(x) + (1.0 - y) * std::log(1.0 - x));
    }
    batch_sum += instance_sum / k;
  }
  return batch_sum / probabilities.rows;
}

Mat targets_from_instances(const std::vector<EncodedInstance>& batch, const LabelCatalog& catalog) {
  Mat targets(static_cast<int>(batch.size()), static_cast<int>(catalog.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const std::string& label : batch[b].gold_labels) {
      const int idx = catalog.index_of(label);
      if (idx < 0) throw TrainingError("gold label \"" + label + "\" not in the catalog");
      targets.at(static_cast<int>(b), idx) = 1.0;
    }
  }
  return targets;
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState state;
  for (const auto& [name, mat] : params.named_tensors()) {
    state.m.emplace_back(mat->rows, mat->cols);
    state.v.emplace_back(mat->rows, mat->cols);
  }
  return state;
}

void adam_update(double grad, double* m, double* v, double* x, long long t,
                 const AdamConfig& config) {
  *m = config.beta1 * *m + (1.0 - config.beta1) * grad;
  *v = config.beta2 * *v + (1.0 - config.beta2) * grad * grad;
  const double m_hat = *m / (1.0 - std::pow(config.beta1, static_cast<double>(t)));
  const double v_hat = *v / (1.0 - std::pow(config.beta2, static_cast<double>(t)));
  *x -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
}

void adam_step(ModelParams* params, const ModelParams& grads, AdamState* state,
               const AdamConfig& config) {
  auto param_tensors = params->named_tensors();
  auto grad_tensors = grads.named_tensors();
  if (param_tensors.size() != grad_tensors.size() || param_tensors.size() != state->m.size()) {
    throw TrainingError("adam_step tensor list mismatch");
  }
  state->step += 1;
  for (std::size_t i = 0; i < param_tensors.size(); ++i) {
    Mat* p = param_tensors[i].second;
    const Mat* g = grad_tensors[i].second;
    Mat& m = state->m[i];
    Mat& v = state->v[i];
    for (std::size_t j = 0; j < p->data.size(); ++j) {
      if (!std::isfinite(g->data[j])) {
        throw TrainingError("non-finite gradient in " + param_tensors[i].first);
      }
      adam_update(g->data[j], &m.data[j], &v.data[j], &p->data[j], state->step, config);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw TrainingError("batch_size must be >= 1");
  if (patience < 1) throw TrainingError("patience must be >= 1");
  if (max_epochs < 1) throw TrainingError("max_epochs must be >= 1");
}

std::vector<std::vector<std::string>> predict_labels(const Mat& probabilities,
                                                     const LabelCatalog& catalog) {
  std::vector<std::vector<std::string>> out(probabilities.rows);
  for (int b = 0; b < probabilities.rows; ++b) {
    for (int r = 0; r < probabilities.cols; ++r) {
      if (probabilities.at(b, r) >= 0.5) out[b].push_back(catalog.labels[r]);
    }
  }
  return out;
}

double dev_micro_f1(const ModelParams& params, const EncoderConfig& config,
                    const std::vector<EncodedInstance>& dev, const LabelCatalog& catalog) {
  ForwardOptions options;  // inference mode
  Mat probs = forward_batch(params, config, dev, static_cast<int>(catalog.size()), options);
  const auto predicted = predict_labels(probs, catalog);

  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t b = 0; b < dev.size(); ++b) {
    std::set<std::string> gold(dev[b].gold_labels.begin(), dev[b].gold_labels.end());
    for (const std::string& label : predicted[b]) {
      if (gold.count(label) > 0) {
        ++tp;
      } else {
        ++fp;
      }
    }
    for (const std::string& label : gold) {
      if (std::find(predicted[b].begin(), predicted[b].end(), label) == predicted[b].end()) ++fn;
    }
  }
  const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

namespace {

double global_grad_norm(const ModelParams& grads) {
  double sq = 0.0;
  for (const auto& [name, mat] : grads.named_tensors()) {
    for (double v : mat->data) sq += v * v;
  }
  return std::sqrt(sq);
}

void scale_grads(ModelParams* grads, double factor) {
  for (auto& [name, mat] : grads->named_tensors()) {
    for (double& v : mat->data) v *= factor;
  }
}

}  // namespace

TrainResult train_one(std::uint64_t model_init_seed, const std::vector<EncodedInstance>& train,
                      const std::vector<EncodedInstance>& dev, EncoderConfig encoder_config,
                      const TrainConfig& train_config, const SubwordVocab& vocab,
                      const LabelCatalog& catalog) {
  train_config.validate();
  if (train.empty()) throw TrainingError("empty train set");
  if (dev.empty()) throw TrainingError("empty dev set");

  encoder_config.seed = model_init_seed;
  ModelParams params =
      init_params(encoder_config, static_cast<int>(vocab.size()), static_cast<int>(catalog.size()));
  AdamState adam = make_adam_state(params);
  AdamConfig adam_config{train_config.learning_rate, train_config.beta1, train_config.beta2,
                         train_config.epsilon};
  const ClassWeights weights = compute_class_weights(catalog);

  TrainResult result;
  ModelParams best_params = params;
  long long step = 0;
  int evals_without_gain = 0;
  double loss_accum = 0.0;
  long long loss_count = 0;
  bool stop = false;

  auto evaluate_now = [&]() {
    const double f1 = dev_micro_f1(params, encoder_config, dev, catalog);
    const double mean_loss = loss_count > 0 ? loss_accum / loss_count : 0.0;
    result.log.entries.push_back({step, mean_loss, f1});
    loss_accum = 0.0;
    loss_count = 0;
    if (f1 > result.log.best_dev_f1) {
      result.log.best_dev_f1 = f1;
      result.log.best_step = step;
      best_params = params;
      evals_without_gain = 0;
    } else {
      ++evals_without_gain;
      if (evals_without_gain >= train_config.patience) {
        result.log.stopped_early = true;
        stop = true;
      }
    }
  };

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < train_config.max_epochs && !stop; ++epoch) {
    Rng shuffle_rng(mix_seed(train_config.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size() && !stop; pos += train_config.batch_size) {
      const std::size_t end = std::min(order.size(), pos + train_config.batch_size);
      std::vector<EncodedInstance> batch;
      batch.reserve(end - pos);
      for (std::size_t i = pos; i < end; ++i) batch.push_back(train[order[i]]);
      Mat targets = targets_from_instances(batch, catalog);

      ForwardOptions options;
      options.training = true;
      options.dropout_seed = mix_seed(mix_seed(train_config.seed, 0x5eedULL), step);
      BatchGradients bg =
          backward_batch(params, encoder_config, batch, targets, weights.w, options);
      if (train_config.clip_gradients) {
        const double norm = global_grad_norm(bg.grads);
        if (norm > train_config.clip_norm) scale_grads(&bg.grads, train_config.clip_norm / norm);
      }
      adam_step(&params, bg.grads, &adam, adam_config);
      ++step;
      loss_accum += bg.loss;
      ++loss_count;

      if (train_config.eval_every > 0 && step % train_config.eval_every == 0) evaluate_now();
    }
    if (!stop && train_config.eval_every == 0) evaluate_now();
  }
  // A too-sparse eval_every must still leave one evaluation behind, or the
  // best checkpoint would be the untrained initialization.
  if (result.log.entries.empty()) evaluate_now();

  result.checkpoint.config = encoder_config;
  result.checkpoint.vocab = vocab;
  result.checkpoint.catalog = catalog;
  result.checkpoint.params = std::move(best_params);
  return result;
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainingError("cannot write " + path);
  char buf[64];
  for (const TrainLogEntry& e : log.entries) {
    std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6f\n", e.step, e.train_loss, e.dev_f1);
    out << buf;
  }
  out << "# best_step=" << log.best_step << " best_dev_f1=";
  std::snprintf(buf, sizeof(buf), "%.6f", log.best_dev_f1);
  out << buf << " stopped_early=" << (log.stopped_early ? 1 : 0) << "\n";
}

}  // namespace relex
