#include "relex/tensor.hpp"

#include <cassert>
#include <cmath>

namespace relex {

Mat matmul(const Mat& a, const Mat& b) {
  assert(a.cols == b.rows);
  Mat out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  assert(a.rows == b.rows);
  Mat out(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const double* arow = a.row(k);
    const double* brow = b.row(k);
    for (int i = 0; i < a.cols; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.row(i);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  assert(a.cols == b.cols);
  Mat out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
  return out;
}

void add_inplace(Mat& a, const Mat& b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy_inplace(Mat& a, double alpha, const Mat& b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += alpha * b.data[i];
}

void add_row_inplace(Mat& a, const Mat& row_vec) {
  assert(row_vec.rows == 1 && row_vec.cols == a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* arow = a.row(i);
    for (int j = 0; j < a.cols; ++j) arow[j] += row_vec.at(0, j);
  }
}

double grand_sum(const Mat& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return s;
}

double Rng::normal(double mean, double stddev) {
  // Box-Muller; the second variate of each pair is discarded so the
  // stream position is a simple function of the call count.
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  return mean + stddev * z;
}

std::size_t Rng::index(std::size_t n) {
  if (n <= 1) return 0;
  // Rejection sampling for an unbiased, implementation-independent draw.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = gen_();
  while (x >= limit) x = gen_();
  return static_cast<std::size_t>(x % n);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace relex
