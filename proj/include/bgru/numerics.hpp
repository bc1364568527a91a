#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bgru {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Mat& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  std::string shape_string() const;

  bool operator==(const Mat& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(std::size_t rows, std::size_t cols);

/// Throws ShapeError naming both shapes when `a` and `b` differ.
void require_same_shape(const Mat& a, const Mat& b, std::string_view what);

Mat matmul(const Mat& a, const Mat& b);

/// out = m * x (overwrites out). Sizes must already agree.
void matvec(const Mat& m, std::span<const double> x, std::span<double> out);

/// acc += outer(u, v)
void add_outer(Mat& acc, std::span<const double> u, std::span<const double> v);

/// out += mᵀ * d
void matvec_transposed_add(const Mat& m, std::span<const double> d, std::span<double> out);

Mat hadamard(const Mat& a, const Mat& b);
Mat map(const Mat& a, const std::function<double(double)>& f);
double frobenius_norm(const Mat& a);
double max_abs(const Mat& a);
bool all_finite(const Mat& a);
bool all_finite(std::span<const double> v);

double sigmoid(double x);

/// Deterministic 64-bit generator (std::mt19937_64) with hand-rolled
/// distributions so sample streams do not depend on the standard library.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t below(std::size_t n);

  /// Independent child stream keyed by name and optional indices; does not advance this stream.
  SeededRng split(std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

Mat bernoulli_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double p);
Mat gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev);

/// Central finite-difference gradient of a scalar function of a matrix.
Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& x, double eps);

}  // namespace bgru
