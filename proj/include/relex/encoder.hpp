#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "relex/syntax.hpp"
#include "relex/tensor.hpp"

namespace relex {

struct EncoderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// `plain` pools the subword sequence straight after the base layers;
// `constituent` groups subwords into constituent embeddings and runs two
// extra attention layers over them first.
enum class ModelFamily { kPlain, kConst };

enum class PoolingMode { kMean, kCls };

const char* family_name(ModelFamily f);
ModelFamily parse_family(const std::string& s);

struct EncoderConfig {
  int d_model = 32;
  int n_heads = 2;
  int n_base_layers = 2;
  int n_const_layers = 2;  // fixed at 2
  int d_ff = 64;
  int max_len = 128;
  double dropout_p = 0.1;
  std::uint64_t seed = 0;
  ModelFamily family = ModelFamily::kConst;
  PoolingMode pooling = PoolingMode::kMean;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

// One transformer block: multi-head self-attention and a feed-forward
// sublayer, each with residual connection and layer normalization.
struct LayerParams {
  Mat wq, wk, wv, wo;      // d_model x d_model
  Mat bq, bk, bv, bo;      // 1 x d_model
  Mat ln1_gain, ln1_bias;  // 1 x d_model
  Mat ff_w1, ff_b1;        // d_model x d_ff, 1 x d_ff
  Mat ff_w2, ff_b2;        // d_ff x d_model, 1 x d_model
  Mat ln2_gain, ln2_bias;  // 1 x d_model
};

// All learnable tensors. Shapes are determined solely by the config, the
// vocabulary size and the label count; two models built from the same
// config and seed are bitwise identical.
struct ModelParams {
  Mat tok_embedding;        // vocab x d_model
  Mat pos_embedding;        // max_len x d_model
  Mat const_pos_embedding;  // max_len x d_model (constituent family only)
  std::vector<LayerParams> base_layers;
  std::vector<LayerParams> const_layers;
  Mat head_w;  // d_model x K
  Mat head_b;  // 1 x K

  // Fixed traversal order shared by the optimizer, the checkpoint format
  // and the gradient checker.
  std::vector<std::pair<std::string, Mat*>> named_tensors();
  std::vector<std::pair<std::string, const Mat*>> named_tensors() const;
};

ModelParams init_params(const EncoderConfig& config, int vocab_size, int n_labels);
ModelParams zeros_like(const ModelParams& params);

// One model input. `units` lists the constituent units in order: minimal
// NP/VP chunks, singleton tokens, and inserted marker singletons, each as
// a set of indices into token_to_subword. Padding slots carry PAD ids
// (subwords) and empty masked positions (constituents).
struct EncodedInstance {
  std::string doc_id;
  std::string subject_id;
  std::string object_id;

  std::vector<int> subword_ids;  // [CLS] ... [SEP] (+ [PAD] tail if padded)
  int n_real_subwords = 0;       // positions >= this are padding
  std::vector<std::pair<int, int>> token_to_subword;

  struct Unit {
    ChunkKind kind = ChunkKind::kSingleton;
    bool is_marker = false;
    std::vector<int> token_indices;  // indices into token_to_subword
  };
  std::vector<Unit> units;  // empty for the plain family
  int n_pad_units = 0;      // masked constituent slots appended when batching

  std::vector<std::string> gold_labels;

  int n_constituents() const { return 1 + static_cast<int>(units.size()) + n_pad_units; }
  int n_real_constituents() const { return 1 + static_cast<int>(units.size()); }
};

// Grouping rule 1: token vector = sum of its subword vectors.
Mat sum_subwords_to_tokens(const Mat& subword_vectors,
                           const std::vector<std::pair<int, int>>& token_to_subword);

// Grouping rule 2: one vector per unit, summed over its member tokens.
Mat sum_tokens_to_constituents(const Mat& token_vectors,
                               const std::vector<EncodedInstance::Unit>& units);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

struct InstanceTape;  // defined in encoder.cpp

// Runs the full forward pass over a batch; returns per-label sigmoid
// probabilities, batch x K, every value strictly inside (0, 1).
Mat forward_batch(const ModelParams& params, const EncoderConfig& config,
                  const std::vector<EncodedInstance>& batch, int n_labels,
                  const ForwardOptions& options);

struct BatchGradients {
  double loss = 0.0;
  Mat probabilities;  // batch x K
  ModelParams grads;
};

// Exact gradients of the mean weighted binary cross entropy over the batch
// with respect to every parameter tensor. `targets` is batch x K with 0/1
// entries; class_weights has K entries.
BatchGradients backward_batch(const ModelParams& params, const EncoderConfig& config,
                              const std::vector<EncodedInstance>& batch, const Mat& targets,
                              const std::vector<double>& class_weights,
                              const ForwardOptions& options);

}  // namespace relex
