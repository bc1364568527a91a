#include "bgru/numerics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bgru/errors.hpp"

namespace bgru {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     bgru::shape_string(rows, cols));
  }
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat Mat::column(std::span<const double> v) {
  return Mat(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

std::string shape_string(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

std::string Mat::shape_string() const { return bgru::shape_string(rows_, cols_); }

void require_same_shape(const Mat& a, const Mat& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + a.shape_string() + " x " + b.shape_string());
  }
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

void matvec(const Mat& m, std::span<const double> x, std::span<double> out) {
  const std::size_t cols = m.cols();
  const double* p = m.data().data();
  for (std::size_t i = 0; i < m.rows(); ++i, p += cols) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += p[j] * x[j];
    out[i] = s;
  }
}

void add_outer(Mat& acc, std::span<const double> u, std::span<const double> v) {
  const std::size_t cols = acc.cols();
  double* p = acc.data().data();
  for (std::size_t i = 0; i < acc.rows(); ++i, p += cols) {
    const double ui = u[i];
    if (ui == 0.0) continue;
    for (std::size_t j = 0; j < cols; ++j) p[j] += ui * v[j];
  }
}

void matvec_transposed_add(const Mat& m, std::span<const double> d, std::span<double> out) {
  const std::size_t cols = m.cols();
  const double* p = m.data().data();
  for (std::size_t i = 0; i < m.rows(); ++i, p += cols) {
    const double di = d[i];
    if (di == 0.0) continue;
    for (std::size_t j = 0; j < cols; ++j) out[j] += p[j] * di;
  }
}

Mat hadamard(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "hadamard");
  Mat out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Mat map(const Mat& a, const std::function<double(double)>& f) {
  Mat out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

double frobenius_norm(const Mat& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Mat& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool all_finite(const Mat& a) { return all_finite(std::span<const double>(a.data())); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t SeededRng::below(std::size_t n) {
  if (n == 0) return 0;
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

SeededRng SeededRng::split(std::string_view name, std::uint64_t a, std::uint64_t b) const {
  // FNV-1a over the stream name, then mixed with the parent seed and indices.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = splitmix64(seed_ ^ h);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ (b * 0x9e3779b97f4a7c15ULL));
  return SeededRng(s);
}

Mat bernoulli_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError("bernoulli_matrix: probability " + std::to_string(p) + " outside [0,1]");
  }
  Mat out(rows, cols);
  for (auto& v : out.data()) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return out;
}

Mat gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Mat out(rows, cols);
  for (auto& v : out.data()) v = stddev * rng.normal();
  return out;
}

Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be positive");
  Mat grad(x.rows(), x.cols());
  Mat probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at element " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace bgru
