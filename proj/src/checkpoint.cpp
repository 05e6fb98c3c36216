#include "relex/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace relex {

namespace {

constexpr const char kMagic[] = "RELEXCKPT1\n";

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ULL << 32)) throw CheckpointError("corrupt string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw CheckpointError("truncated checkpoint");
  return s;
}

void put_mat(std::ostream& out, const Mat& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows));
  put_u64(out, static_cast<std::uint64_t>(m.cols));
  for (double v : m.data) put_f64(out, v);
}

Mat get_mat(std::istream& in) {
  const int rows = static_cast<int>(get_u64(in));
  const int cols = static_cast<int>(get_u64(in));
  if (rows < 0 || cols < 0 || static_cast<long long>(rows) * cols > (1LL << 32)) {
    throw CheckpointError("corrupt tensor shape");
  }
  Mat m(rows, cols);
  for (double& v : m.data) v = get_f64(in);
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(kMagic, sizeof(kMagic) - 1);

  put_u64(out, static_cast<std::uint64_t>(ckpt.config.d_model));
  put_u64(out, static_cast<std::uint64_t>(ckpt.config.n_heads));
  put_u64(out, static_cast<std::uint64_t>(ckpt.config.n_base_layers));
  put_u64(out, static_cast<std::uint64_t>(ckpt.config.n_const_layers));
  put_u64(out, static_cast<std::uint64_t>(ckpt.config.d_ff));
  put_u64(out, static_cast<std::uint64_t>(ckpt.config.max_len));
  put_f64(out, ckpt.config.dropout_p);
  put_u64(out, ckpt.config.seed);
  put_u64(out, ckpt.config.family == ModelFamily::kConst ? 1 : 0);
  put_u64(out, ckpt.config.pooling == PoolingMode::kCls ? 1 : 0);

  put_u64(out, ckpt.vocab.pieces.size());
  for (const std::string& p : ckpt.vocab.pieces) put_string(out, p);

  put_u64(out, ckpt.catalog.labels.size());
  for (std::size_t i = 0; i < ckpt.catalog.labels.size(); ++i) {
    put_string(out, ckpt.catalog.labels[i]);
    put_u64(out, static_cast<std::uint64_t>(ckpt.catalog.counts[i]));
  }

  const auto tensors = ckpt.params.named_tensors();
  put_u64(out, tensors.size());
  for (const auto& [name, mat] : tensors) {
    put_string(out, name);
    put_mat(out, *mat);
  }
  if (!out) throw CheckpointError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path + " is not a checkpoint (bad magic)");
  }

  Checkpoint ckpt;
  ckpt.config.d_model = static_cast<int>(get_u64(in));
  ckpt.config.n_heads = static_cast<int>(get_u64(in));
  ckpt.config.n_base_layers = static_cast<int>(get_u64(in));
  ckpt.config.n_const_layers = static_cast<int>(get_u64(in));
  ckpt.config.d_ff = static_cast<int>(get_u64(in));
  ckpt.config.max_len = static_cast<int>(get_u64(in));
  ckpt.config.dropout_p = get_f64(in);
  ckpt.config.seed = get_u64(in);
  ckpt.config.family = get_u64(in) == 1 ? ModelFamily::kConst : ModelFamily::kPlain;
  ckpt.config.pooling = get_u64(in) == 1 ? PoolingMode::kCls : PoolingMode::kMean;
  ckpt.config.validate();

  const std::uint64_t n_pieces = get_u64(in);
  ckpt.vocab.pieces.reserve(n_pieces);
  for (std::uint64_t i = 0; i < n_pieces; ++i) ckpt.vocab.pieces.push_back(get_string(in));
  ckpt.vocab.rebuild_lookup();

  const std::uint64_t n_labels = get_u64(in);
  for (std::uint64_t i = 0; i < n_labels; ++i) {
    ckpt.catalog.labels.push_back(get_string(in));
    ckpt.catalog.counts.push_back(static_cast<long long>(get_u64(in)));
  }

  ckpt.params = init_params(ckpt.config, static_cast<int>(ckpt.vocab.size()),
                            static_cast<int>(ckpt.catalog.size()));
  auto tensors = ckpt.params.named_tensors();
  const std::uint64_t n_tensors = get_u64(in);
  if (n_tensors != tensors.size()) {
    throw CheckpointError("tensor count mismatch: file has " + std::to_string(n_tensors) +
                          ", model expects " + std::to_string(tensors.size()));
  }
  for (auto& [name, mat] : tensors) {
    const std::string stored = get_string(in);
    if (stored != name) {
      throw CheckpointError("tensor order mismatch: expected " + name + ", found " + stored);
    }
    Mat loaded = get_mat(in);
    if (loaded.rows != mat->rows || loaded.cols != mat->cols) {
      throw CheckpointError("tensor shape mismatch for " + name);
    }
    *mat = std::move(loaded);
  }
  return ckpt;
}

}  // namespace relex
