#include "relex/encoder.hpp"

#include <cmath>

namespace relex {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;
constexpr double kInitStddev = 0.02;
constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Mat col_slice(const Mat& m, int c0, int c1) {
  Mat out(m.rows, c1 - c0);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = m.at(i, j);
  }
  return out;
}

void add_col_slice(Mat& m, int c0, const Mat& part) {
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < part.cols; ++j) m.at(i, c0 + j) += part.at(i, j);
  }
}

Mat col_sums(const Mat& m) {
  Mat out(1, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) out.at(0, j) += m.at(i, j);
  }
  return out;
}

// Inverted dropout; mask entries are 0 or 1/(1-p).
Mat dropout_mask(int rows, int cols, double p, Rng* rng) {
  Mat mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : mask.data) v = rng->uniform() < p ? 0.0 : keep_scale;
  return mask;
}

void mul_inplace(Mat& a, const Mat& mask) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] *= mask.data[i];
}

struct LnTape {
  Mat xhat;
  std::vector<double> invstd;
};

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LnTape* tape) {
  Mat out(x.rows, x.cols);
  tape->xhat = Mat(x.rows, x.cols);
  tape->invstd.assign(x.rows, 0.0);
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const double* row = x.row(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    const double invstd = 1.0 / std::sqrt(var + kLayerNormEps);
    tape->invstd[i] = invstd;
    for (int j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * invstd;
      tape->xhat.at(i, j) = xh;
      out.at(i, j) = gain.at(0, j) * xh + bias.at(0, j);
    }
  }
  return out;
}

Mat layer_norm_backward(const Mat& dy, const LnTape& tape, const Mat& gain, Mat* dgain,
                        Mat* dbias) {
  const int d = dy.cols;
  Mat dx(dy.rows, dy.cols);
  for (int i = 0; i < dy.rows; ++i) {
    double sum_dyh = 0.0, sum_dyh_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dyh = dy.at(i, j) * gain.at(0, j);
      const double xh = tape.xhat.at(i, j);
      dgain->at(0, j) += dy.at(i, j) * xh;
      dbias->at(0, j) += dy.at(i, j);
      sum_dyh += dyh;
      sum_dyh_xhat += dyh * xh;
    }
    const double inv_d = 1.0 / d;
    for (int j = 0; j < d; ++j) {
      const double dyh = dy.at(i, j) * gain.at(0, j);
      const double xh = tape.xhat.at(i, j);
      dx.at(i, j) = tape.invstd[i] * (dyh - inv_d * sum_dyh - xh * inv_d * sum_dyh_xhat);
    }
  }
  return dx;
}

// Row-wise softmax over key positions [0, n_keys); the tail stays zero.
void masked_softmax_inplace(Mat& scores, int n_keys) {
  for (int i = 0; i < scores.rows; ++i) {
    double* row = scores.row(i);
    double max_v = row[0];
    for (int j = 1; j < n_keys; ++j) max_v = std::max(max_v, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n_keys; ++j) {
      row[j] = std::exp(row[j] - max_v);
      sum += row[j];
    }
    for (int j = 0; j < n_keys; ++j) row[j] /= sum;
    for (int j = n_keys; j < scores.cols; ++j) row[j] = 0.0;
  }
}

struct BlockTape {
  Mat input;
  Mat q, k, v;
  std::vector<Mat> attn_probs;       // per head, post-softmax, pre-dropout
  std::vector<Mat> attn_drop_masks;  // per head (training only)
  Mat heads_concat;
  Mat attn_proj;  // after output projection, pre-dropout
  Mat attn_proj_drop_mask;
  LnTape ln1;
  Mat h1;
  Mat ff_z1, ff_a1;
  Mat ff_out;  // pre-dropout
  Mat ff_drop_mask;
  LnTape ln2;
};

Mat block_forward(const Mat& x, const LayerParams& lp, const EncoderConfig& config, int n_keys,
                  bool training, Rng* rng, BlockTape* tape) {
  const int d = config.d_model;
  const int dh = config.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  tape->input = x;
  tape->q = matmul(x, lp.wq);
  add_row_inplace(tape->q, lp.bq);
  tape->k = matmul(x, lp.wk);
  add_row_inplace(tape->k, lp.bk);
  tape->v = matmul(x, lp.wv);
  add_row_inplace(tape->v, lp.bv);

  tape->heads_concat = Mat(x.rows, d);
  tape->attn_probs.clear();
  tape->attn_drop_masks.clear();
  for (int h = 0; h < config.n_heads; ++h) {
    const int c0 = h * dh;
    Mat qh = col_slice(tape->q, c0, c0 + dh);
    Mat kh = col_slice(tape->k, c0, c0 + dh);
    Mat vh = col_slice(tape->v, c0, c0 + dh);
    Mat scores = matmul_nt(qh, kh);
    for (double& s : scores.data) s *= scale;
    masked_softmax_inplace(scores, n_keys);
    tape->attn_probs.push_back(scores);
    Mat probs = scores;
    if (training && config.dropout_p > 0.0) {
      Mat mask = dropout_mask(probs.rows, probs.cols, config.dropout_p, rng);
      mul_inplace(probs, mask);
      tape->attn_drop_masks.push_back(std::move(mask));
    }
    Mat head_out = matmul(probs, vh);
    add_col_slice(tape->heads_concat, c0, head_out);
  }

  tape->attn_proj = matmul(tape->heads_concat, lp.wo);
  add_row_inplace(tape->attn_proj, lp.bo);
  Mat attn_final = tape->attn_proj;
  if (training && config.dropout_p > 0.0) {
    tape->attn_proj_drop_mask = dropout_mask(attn_final.rows, attn_final.cols, config.dropout_p, rng);
    mul_inplace(attn_final, tape->attn_proj_drop_mask);
  }

  Mat res1 = x;
  add_inplace(res1, attn_final);
  tape->h1 = layer_norm(res1, lp.ln1_gain, lp.ln1_bias, &tape->ln1);

  tape->ff_z1 = matmul(tape->h1, lp.ff_w1);
  add_row_inplace(tape->ff_z1, lp.ff_b1);
  tape->ff_a1 = tape->ff_z1;
  for (double& v : tape->ff_a1.data) v = gelu(v);
  tape->ff_out = matmul(tape->ff_a1, lp.ff_w2);
  add_row_inplace(tape->ff_out, lp.ff_b2);
  Mat ff_final = tape->ff_out;
  if (training && config.dropout_p > 0.0) {
    tape->ff_drop_mask = dropout_mask(ff_final.rows, ff_final.cols, config.dropout_p, rng);
    mul_inplace(ff_final, tape->ff_drop_mask);
  }

  Mat res2 = tape->h1;
  add_inplace(res2, ff_final);
  return layer_norm(res2, lp.ln2_gain, lp.ln2_bias, &tape->ln2);
}

// Returns the gradient with respect to the block input; accumulates
// parameter gradients into *grads.
Mat block_backward(const Mat& d_out, const LayerParams& lp, const EncoderConfig& config,
                   int n_keys, const BlockTape& tape, LayerParams* grads) {
  const int d = config.d_model;
  const int dh = config.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool dropped = tape.ff_drop_mask.size() > 0;

  // LN2
  Mat d_res2 = layer_norm_backward(d_out, tape.ln2, lp.ln2_gain, &grads->ln2_gain, &grads->ln2_bias);
  Mat d_h1 = d_res2;
  Mat d_ff = d_res2;
  if (dropped) mul_inplace(d_ff, tape.ff_drop_mask);

  // Feed-forward
  add_inplace(grads->ff_w2, matmul_tn(tape.ff_a1, d_ff));
  add_inplace(grads->ff_b2, col_sums(d_ff));
  Mat d_a1 = matmul_nt(d_ff, lp.ff_w2);
  for (std::size_t i = 0; i < d_a1.data.size(); ++i) d_a1.data[i] *= gelu_grad(tape.ff_z1.data[i]);
  add_inplace(grads->ff_w1, matmul_tn(tape.h1, d_a1));
  add_inplace(grads->ff_b1, col_sums(d_a1));
  add_inplace(d_h1, matmul_nt(d_a1, lp.ff_w1));

  // LN1
  Mat d_res1 = layer_norm_backward(d_h1, tape.ln1, lp.ln1_gain, &grads->ln1_gain, &grads->ln1_bias);
  Mat d_x = d_res1;
  Mat d_attn = d_res1;
  if (tape.attn_proj_drop_mask.size() > 0) mul_inplace(d_attn, tape.attn_proj_drop_mask);

  // Output projection
  add_inplace(grads->wo, matmul_tn(tape.heads_concat, d_attn));
  add_inplace(grads->bo, col_sums(d_attn));
  Mat d_concat = matmul_nt(d_attn, lp.wo);

  Mat d_q(tape.q.rows, d), d_k(tape.k.rows, d), d_v(tape.v.rows, d);
  for (int h = 0; h < config.n_heads; ++h) {
    const int c0 = h * dh;
    Mat d_head = col_slice(d_concat, c0, c0 + dh);
    Mat vh = col_slice(tape.v, c0, c0 + dh);
    const Mat& probs_pre = tape.attn_probs[h];
    Mat probs_post = probs_pre;
    if (!tape.attn_drop_masks.empty()) mul_inplace(probs_post, tape.attn_drop_masks[h]);

    Mat d_probs_post = matmul_nt(d_head, vh);
    add_col_slice(d_v, c0, matmul_tn(probs_post, d_head));
    if (!tape.attn_drop_masks.empty()) mul_inplace(d_probs_post, tape.attn_drop_masks[h]);

    // Softmax backward, rows independently, masked tail contributes zero.
    Mat d_scores(probs_pre.rows, probs_pre.cols);
    for (int i = 0; i < probs_pre.rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < n_keys; ++j) dot += d_probs_post.at(i, j) * probs_pre.at(i, j);
      for (int j = 0; j < n_keys; ++j) {
        d_scores.at(i, j) = probs_pre.at(i, j) * (d_probs_post.at(i, j) - dot);
      }
    }
    for (double& s : d_scores.data) s *= scale;

    Mat qh = col_slice(tape.q, c0, c0 + dh);
    Mat kh = col_slice(tape.k, c0, c0 + dh);
    add_col_slice(d_q, c0, matmul(d_scores, kh));
    add_col_slice(d_k, c0, matmul_tn(d_scores, qh));
  }

  add_inplace(grads->wq, matmul_tn(tape.input, d_q));
  add_inplace(grads->bq, col_sums(d_q));
  add_inplace(grads->wk, matmul_tn(tape.input, d_k));
  add_inplace(grads->bk, col_sums(d_k));
  add_inplace(grads->wv, matmul_tn(tape.input, d_v));
  add_inplace(grads->bv, col_sums(d_v));

  add_inplace(d_x, matmul_nt(d_q, lp.wq));
  add_inplace(d_x, matmul_nt(d_k, lp.wk));
  add_inplace(d_x, matmul_nt(d_v, lp.wv));
  return d_x;
}

}  // namespace

struct InstanceTape {
  Mat h0;  // embedding output, post-dropout
  Mat h0_drop_mask;
  std::vector<BlockTape> base;
  Mat base_out;
  Mat token_sums;
  Mat const_in;  // constituent sequence with positions, post-dropout
  Mat const_drop_mask;
  std::vector<BlockTape> cons;
  Mat const_out;
  Mat pooled;  // post-dropout
  Mat pooled_drop_mask;
  Mat logits;
  Mat probs;
};

const char* family_name(ModelFamily f) {
  return f == ModelFamily::kPlain ? "plain" : "const";
}

ModelFamily parse_family(const std::string& s) {
  if (s == "plain") return ModelFamily::kPlain;
  if (s == "const") return ModelFamily::kConst;
  throw EncoderError("unknown model family: " + s + " (expected plain or const)");
}

void EncoderConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw EncoderError("d_model must be a positive multiple of n_heads");
  }
  if (n_const_layers != 2) throw EncoderError("n_const_layers is fixed at 2");
  if (n_base_layers < 1) throw EncoderError("need at least one base layer");
  if (d_ff <= 0 || max_len <= 1) throw EncoderError("bad d_ff/max_len");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw EncoderError("dropout_p must be in [0,1)");
}

namespace {

void collect_layer(std::vector<std::pair<std::string, Mat*>>& out, const std::string& prefix,
                   LayerParams& lp) {
  out.emplace_back(prefix + ".wq", &lp.wq);
  out.emplace_back(prefix + ".bq", &lp.bq);
  out.emplace_back(prefix + ".wk", &lp.wk);
  out.emplace_back(prefix + ".bk", &lp.bk);
  out.emplace_back(prefix + ".wv", &lp.wv);
  out.emplace_back(prefix + ".bv", &lp.bv);
  out.emplace_back(prefix + ".wo", &lp.wo);
  out.emplace_back(prefix + ".bo", &lp.bo);
  out.emplace_back(prefix + ".ln1_gain", &lp.ln1_gain);
  out.emplace_back(prefix + ".ln1_bias", &lp.ln1_bias);
  out.emplace_back(prefix + ".ff_w1", &lp.ff_w1);
  out.emplace_back(prefix + ".ff_b1", &lp.ff_b1);
  out.emplace_back(prefix + ".ff_w2", &lp.ff_w2);
  out.emplace_back(prefix + ".ff_b2", &lp.ff_b2);
  out.emplace_back(prefix + ".ln2_gain", &lp.ln2_gain);
  out.emplace_back(prefix + ".ln2_bias", &lp.ln2_bias);
}

}  // namespace

std::vector<std::pair<std::string, Mat*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  out.emplace_back("tok_embedding", &tok_embedding);
  out.emplace_back("pos_embedding", &pos_embedding);
  if (const_pos_embedding.rows > 0) out.emplace_back("const_pos_embedding", &const_pos_embedding);
  for (std::size_t l = 0; l < base_layers.size(); ++l) {
    collect_layer(out, "base." + std::to_string(l), base_layers[l]);
  }
  for (std::size_t l = 0; l < const_layers.size(); ++l) {
    collect_layer(out, "const." + std::to_string(l), const_layers[l]);
  }
  out.emplace_back("head_w", &head_w);
  out.emplace_back("head_b", &head_b);
  return out;
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::named_tensors() const {
  auto mutable_view = const_cast<ModelParams*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(mutable_view.size());
  for (auto& [name, mat] : mutable_view) out.emplace_back(name, mat);
  return out;
}

namespace {

LayerParams make_layer(const EncoderConfig& config, Rng* rng) {
  const int d = config.d_model;
  LayerParams lp;
  auto gaussian = [&](int r, int c) {
    Mat m(r, c);
    for (double& v : m.data) v = rng->normal(0.0, kInitStddev);
    return m;
  };
  lp.wq = gaussian(d, d);
  lp.bq = Mat(1, d);
  lp.wk = gaussian(d, d);
  lp.bk = Mat(1, d);
  lp.wv = gaussian(d, d);
  lp.bv = Mat(1, d);
  lp.wo = gaussian(d, d);
  lp.bo = Mat(1, d);
  lp.ln1_gain = Mat(1, d);
  lp.ln1_gain.fill(1.0);
  lp.ln1_bias = Mat(1, d);
  lp.ff_w1 = gaussian(d, config.d_ff);
  lp.ff_b1 = Mat(1, config.d_ff);
  lp.ff_w2 = gaussian(config.d_ff, d);
  lp.ff_b2 = Mat(1, d);
  lp.ln2_gain = Mat(1, d);
  lp.ln2_gain.fill(1.0);
  lp.ln2_bias = Mat(1, d);
  return lp;
}

}  // namespace

ModelParams init_params(const EncoderConfig& config, int vocab_size, int n_labels) {
  config.validate();
  if (vocab_size <= 0 || n_labels <= 0) throw EncoderError("empty vocabulary or label catalog");
  Rng rng(config.seed);
  auto gaussian = [&](int r, int c) {
    Mat m(r, c);
    for (double& v : m.data) v = rng.normal(0.0, kInitStddev);
    return m;
  };
  ModelParams params;
  params.tok_embedding = gaussian(vocab_size, config.d_model);
  params.pos_embedding = gaussian(config.max_len, config.d_model);
  if (config.family == ModelFamily::kConst) {
    params.const_pos_embedding = gaussian(config.max_len, config.d_model);
  }
  for (int l = 0; l < config.n_base_layers; ++l) params.base_layers.push_back(make_layer(config, &rng));
  if (config.family == ModelFamily::kConst) {
    for (int l = 0; l < config.n_const_layers; ++l) {
      params.const_layers.push_back(make_layer(config, &rng));
    }
  }
  params.head_w = gaussian(config.d_model, n_labels);
  params.head_b = Mat(1, n_labels);
  return params;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  for (auto& [name, mat] : out.named_tensors()) mat->fill(0.0);
  return out;
}

Mat sum_subwords_to_tokens(const Mat& subword_vectors,
                           const std::vector<std::pair<int, int>>& token_to_subword) {
  Mat out(static_cast<int>(token_to_subword.size()), subword_vectors.cols);
  for (std::size_t t = 0; t < token_to_subword.size(); ++t) {
    const auto [first, last] = token_to_subword[t];
    if (first >= last) throw EncoderError("token " + std::to_string(t) + " has an empty subword range");
    if (first < 0 || last > subword_vectors.rows) {
      throw EncoderError("token subword range out of bounds");
    }
    for (int i = first; i < last; ++i) {
      for (int j = 0; j < subword_vectors.cols; ++j) {
        out.at(static_cast<int>(t), j) += subword_vectors.at(i, j);
      }
    }
  }
  return out;
}

Mat sum_tokens_to_constituents(const Mat& token_vectors,
                               const std::vector<EncodedInstance::Unit>& units) {
  Mat out(static_cast<int>(units.size()), token_vectors.cols);
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (units[u].token_indices.empty()) {
      throw EncoderError("constituent unit " + std::to_string(u) + " is empty");
    }
    for (int t : units[u].token_indices) {
      if (t < 0 || t >= token_vectors.rows) throw EncoderError("unit token index out of bounds");
      for (int j = 0; j < token_vectors.cols; ++j) {
        out.at(static_cast<int>(u), j) += token_vectors.at(t, j);
      }
    }
  }
  return out;
}

namespace {

void validate_instance(const EncodedInstance& inst, const EncoderConfig& config) {
  const int s = static_cast<int>(inst.subword_ids.size());
  if (s < 2) throw EncoderError("instance has no subwords");
  if (s > config.max_len) {
    throw EncoderError("sequence of length " + std::to_string(s) + " exceeds max_len " +
                       std::to_string(config.max_len));
  }
  if (inst.n_real_subwords < 2 || inst.n_real_subwords > s) {
    throw EncoderError("bad n_real_subwords");
  }
  if (config.family == ModelFamily::kConst) {
    if (inst.n_constituents() > config.max_len) {
      throw EncoderError("constituent sequence exceeds max_len");
    }
    for (const auto& unit : inst.units) {
      for (int t : unit.token_indices) {
        if (t < 0 || t >= static_cast<int>(inst.token_to_subword.size())) {
          throw EncoderError("mismatched chunk alignment: unit token index out of range");
        }
      }
    }
  }
}

Mat forward_instance(const ModelParams& params, const EncoderConfig& config,
                     const EncodedInstance& inst, const ForwardOptions& options,
                     std::uint64_t instance_seed, InstanceTape* tape) {
  validate_instance(inst, config);
  const int s = static_cast<int>(inst.subword_ids.size());
  const int d = config.d_model;
  const bool training = options.training;
  Rng rng(instance_seed);

  Mat h(s, d);
  for (int i = 0; i < s; ++i) {
    const int id = inst.subword_ids[i];
    if (id < 0 || id >= params.tok_embedding.rows) throw EncoderError("subword id out of range");
    for (int j = 0; j < d; ++j) {
      h.at(i, j) = params.tok_embedding.at(id, j) + params.pos_embedding.at(i, j);
    }
  }
  if (training && config.dropout_p > 0.0) {
    tape->h0_drop_mask = dropout_mask(s, d, config.dropout_p, &rng);
    mul_inplace(h, tape->h0_drop_mask);
  }
  tape->h0 = h;

  tape->base.resize(params.base_layers.size());
  for (std::size_t l = 0; l < params.base_layers.size(); ++l) {
    h = block_forward(h, params.base_layers[l], config, inst.n_real_subwords, training, &rng,
                      &tape->base[l]);
  }
  tape->base_out = h;

  Mat pooled(1, d);
  if (config.family == ModelFamily::kConst) {
    tape->token_sums = sum_subwords_to_tokens(h, inst.token_to_subword);
    Mat unit_vectors = sum_tokens_to_constituents(tape->token_sums, inst.units);

    const int c = inst.n_constituents();
    const int c_real = inst.n_real_constituents();
    Mat g(c, d);
    for (int j = 0; j < d; ++j) g.at(0, j) = h.at(0, j) + params.const_pos_embedding.at(0, j);
    for (int u = 0; u < unit_vectors.rows; ++u) {
      for (int j = 0; j < d; ++j) {
        g.at(1 + u, j) = unit_vectors.at(u, j) + params.const_pos_embedding.at(1 + u, j);
      }
    }
    if (training && config.dropout_p > 0.0) {
      tape->const_drop_mask = dropout_mask(c, d, config.dropout_p, &rng);
      mul_inplace(g, tape->const_drop_mask);
    }
    tape->const_in = g;

    tape->cons.resize(params.const_layers.size());
    for (std::size_t l = 0; l < params.const_layers.size(); ++l) {
      g = block_forward(g, params.const_layers[l], config, c_real, training, &rng, &tape->cons[l]);
    }
    tape->const_out = g;

    if (config.pooling == PoolingMode::kCls) {
      for (int j = 0; j < d; ++j) pooled.at(0, j) = g.at(0, j);
    } else {
      for (int i = 0; i < c_real; ++i) {
        for (int j = 0; j < d; ++j) pooled.at(0, j) += g.at(i, j);
      }
      for (int j = 0; j < d; ++j) pooled.at(0, j) /= c_real;
    }
  } else {
    if (config.pooling == PoolingMode::kCls) {
      for (int j = 0; j < d; ++j) pooled.at(0, j) = h.at(0, j);
    } else {
      for (int i = 0; i < inst.n_real_subwords; ++i) {
        for (int j = 0; j < d; ++j) pooled.at(0, j) += h.at(i, j);
      }
      for (int j = 0; j < d; ++j) pooled.at(0, j) /= inst.n_real_subwords;
    }
  }

  if (training && config.dropout_p > 0.0) {
    tape->pooled_drop_mask = dropout_mask(1, d, config.dropout_p, &rng);
    mul_inplace(pooled, tape->pooled_drop_mask);
  }
  tape->pooled = pooled;

  tape->logits = matmul(pooled, params.head_w);
  add_inplace(tape->logits, params.head_b);
  tape->probs = tape->logits;
  for (double& v : tape->probs.data) v = 1.0 / (1.0 + std::exp(-v));
  return tape->probs;
}

void backward_instance(const ModelParams& params, const EncoderConfig& config,
                       const EncodedInstance& inst, const InstanceTape& tape, const Mat& d_logits,
                       ModelParams* grads) {
  const int d = config.d_model;

  add_inplace(grads->head_w, matmul_tn(tape.pooled, d_logits));
  add_inplace(grads->head_b, d_logits);
  Mat d_pooled = matmul_nt(d_logits, params.head_w);
  if (tape.pooled_drop_mask.size() > 0) mul_inplace(d_pooled, tape.pooled_drop_mask);

  Mat d_base_out(tape.base_out.rows, d);
  if (config.family == ModelFamily::kConst) {
    const int c = tape.const_out.rows;
    const int c_real = inst.n_real_constituents();
    Mat d_g(c, d);
    if (config.pooling == PoolingMode::kCls) {
      for (int j = 0; j < d; ++j) d_g.at(0, j) = d_pooled.at(0, j);
    } else {
      for (int i = 0; i < c_real; ++i) {
        for (int j = 0; j < d; ++j) d_g.at(i, j) = d_pooled.at(0, j) / c_real;
      }
    }
    for (int l = static_cast<int>(params.const_layers.size()) - 1; l >= 0; --l) {
      d_g = block_backward(d_g, params.const_layers[l], config, c_real, tape.cons[l],
                           &grads->const_layers[l]);
    }
    if (tape.const_drop_mask.size() > 0) mul_inplace(d_g, tape.const_drop_mask);

    // Positions: CLS row and one row per real unit.
    for (int j = 0; j < d; ++j) grads->const_pos_embedding.at(0, j) += d_g.at(0, j);
    for (std::size_t u = 0; u < inst.units.size(); ++u) {
      for (int j = 0; j < d; ++j) {
        grads->const_pos_embedding.at(1 + static_cast<int>(u), j) += d_g.at(1 + static_cast<int>(u), j);
      }
    }

    // Undo the two summation stages: unit -> tokens -> subwords.
    Mat d_tokens(tape.token_sums.rows, d);
    for (std::size_t u = 0; u < inst.units.size(); ++u) {
      for (int t : inst.units[u].token_indices) {
        for (int j = 0; j < d; ++j) d_tokens.at(t, j) += d_g.at(1 + static_cast<int>(u), j);
      }
    }
    for (std::size_t t = 0; t < inst.token_to_subword.size(); ++t) {
      const auto [first, last] = inst.token_to_subword[t];
      for (int i = first; i < last; ++i) {
        for (int j = 0; j < d; ++j) d_base_out.at(i, j) += d_tokens.at(static_cast<int>(t), j);
      }
    }
    for (int j = 0; j < d; ++j) d_base_out.at(0, j) += d_g.at(0, j);  // CLS carry-through
  } else {
    if (config.pooling == PoolingMode::kCls) {
      for (int j = 0; j < d; ++j) d_base_out.at(0, j) = d_pooled.at(0, j);
    } else {
      for (int i = 0; i < inst.n_real_subwords; ++i) {
        for (int j = 0; j < d; ++j) d_base_out.at(i, j) = d_pooled.at(0, j) / inst.n_real_subwords;
      }
    }
  }

  Mat d_h = d_base_out;
  for (int l = static_cast<int>(params.base_layers.size()) - 1; l >= 0; --l) {
    d_h = block_backward(d_h, params.base_layers[l], config, inst.n_real_subwords, tape.base[l],
                         &grads->base_layers[l]);
  }
  if (tape.h0_drop_mask.size() > 0) mul_inplace(d_h, tape.h0_drop_mask);

  for (int i = 0; i < d_h.rows; ++i) {
    const int id = inst.subword_ids[i];
    for (int j = 0; j < d; ++j) {
      grads->tok_embedding.at(id, j) += d_h.at(i, j);
      grads->pos_embedding.at(i, j) += d_h.at(i, j);
    }
  }
}

}  // namespace

Mat forward_batch(const ModelParams& params, const EncoderConfig& config,
                  const std::vector<EncodedInstance>& batch, int n_labels,
                  const ForwardOptions& options) {
  if (params.head_w.cols != n_labels) throw EncoderError("label count mismatch with head");
  Mat probs(static_cast<int>(batch.size()), n_labels);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    InstanceTape tape;
    Mat p = forward_instance(params, config, batch[b], options,
                             mix_seed(options.dropout_seed, b), &tape);
    for (int j = 0; j < n_labels; ++j) probs.at(static_cast<int>(b), j) = p.at(0, j);
  }
  return probs;
}

BatchGradients backward_batch(const ModelParams& params, const EncoderConfig& config,
                              const std::vector<EncodedInstance>& batch, const Mat& targets,
                              const std::vector<double>& class_weights,
                              const ForwardOptions& options) {
  const int n_labels = params.head_w.cols;
  if (targets.rows != static_cast<int>(batch.size()) || targets.cols != n_labels) {
    throw EncoderError("target matrix shape mismatch");
  }
  if (static_cast<int>(class_weights.size()) != n_labels) {
    throw EncoderError("class weight count mismatch");
  }

  BatchGradients out;
  out.grads = zeros_like(params);
  out.probabilities = Mat(static_cast<int>(batch.size()), n_labels);
  const double batch_scale = 1.0 / static_cast<double>(batch.size());
  const double k_scale = 1.0 / static_cast<double>(n_labels);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    InstanceTape tape;
    Mat p = forward_instance(params, config, batch[b], options,
                             mix_seed(options.dropout_seed, b), &tape);
    Mat d_logits(1, n_labels);
    for (int r = 0; r < n_labels; ++r) {
      const double x = p.at(0, r);
      const double y = targets.at(static_cast<int>(b), r);
      const double w = class_weights[r];
      const double xc = std::min(std::max(x, kProbClampLo), kProbClampHi);
      out.probabilities.at(static_cast<int>(b), r) = x;
      out.loss -= batch_scale * k_scale * w *
                  (y * std::log(xc) + (1.0 - y) * std::log(1.0 - xc));
      if (x <= kProbClampLo || x >= kProbClampHi) {
        d_logits.at(0, r) = 0.0;  // clamp region: flat loss
      } else {
        d_logits.at(0, r) = batch_scale * k_scale * w * (x - y);
      }
    }
    backward_instance(params, config, batch[b], tape, d_logits, &out.grads);
  }
  if (!std::isfinite(out.loss)) throw EncoderError("non-finite loss");
  return out;
}

}  // namespace relex
