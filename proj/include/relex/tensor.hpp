#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace relex {

// Dense row-major matrix of doubles. Vectors are 1×n or n×1 as convenient.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const { return data.size(); }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

Mat matmul(const Mat& a, const Mat& b);     // (m,k)x(k,n)
Mat matmul_tn(const Mat& a, const Mat& b);  // aT b: (k,m),(k,n) -> (m,n)
Mat matmul_nt(const Mat& a, const Mat& b);  // a bT: (m,k),(n,k) -> (m,n)
void add_inplace(Mat& a, const Mat& b);
void axpy_inplace(Mat& a, double alpha, const Mat& b);  // a += alpha * b
void add_row_inplace(Mat& a, const Mat& row_vec);       // broadcast a 1xN row
double grand_sum(const Mat& a);

// Deterministic random source. Everything is built from std::mt19937_64
// with explicit transforms, so sequences are identical across platforms
// and standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal(double mean = 0.0, double stddev = 1.0);

  std::size_t index(std::size_t n);  // uniform in [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Combines two 64-bit values into a fresh seed (splitmix-style).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace relex
