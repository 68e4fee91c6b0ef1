#pragma once

// Dense 64-bit numeric kernel shared by the recurrent and baseline models.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hoopseq {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v);
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// W·x + b with x and b column vectors (or matching column counts for b broadcast per column).
Matrix affine(const Matrix& w, const Matrix& x, const Matrix& b);

// y[r] += W[r, :]·x over a row-major block; the hot loop of every layer.
void gemv_accumulate(const Matrix& w, std::span<const double> x, std::span<double> y);
// y += Wᵀ·g
void gemv_transpose_accumulate(const Matrix& w, std::span<const double> g, std::span<double> y);
// W += g ⊗ x
void outer_accumulate(Matrix& w, std::span<const double> g, std::span<const double> x);

double sigmoid(double z) noexcept;
double tanh_act(double z) noexcept;
double relu(double z) noexcept;
Matrix sigmoid(const Matrix& z);
Matrix tanh_act(const Matrix& z);
Matrix relu(const Matrix& z);

inline constexpr double kProbabilityClamp = 1e-12;

// Binary cross-entropy on a probability clamped into [1e-12, 1 - 1e-12].
double bce_loss(double y_hat, int y);
// Derivative of the clamped loss with respect to y_hat (zero where the clamp is active).
double bce_grad(double y_hat, int y);

struct ParamTensor {
  ParamTensor() = default;
  ParamTensor(std::string name_, std::size_t rows, std::size_t cols)
      : name(std::move(name_)), value(rows, cols), grad(rows, cols) {}

  std::string name;
  Matrix value;
  Matrix grad;
};

using ParamList = std::vector<ParamTensor*>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  // One bias-corrected step over every parameter; gradients are zeroed afterwards.
  void update(std::span<ParamTensor* const> params);

  std::int64_t step_count() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<Matrix>& first_moments() const noexcept { return m_; }
  const std::vector<Matrix>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

double global_grad_norm(std::span<ParamTensor* const> params);
// Rescales all gradients so the global L2 norm is at most max_norm; returns the factor applied.
double clip_global_norm(std::span<ParamTensor* const> params, double max_norm);
void zero_grads(std::span<ParamTensor* const> params);

/// xoshiro256** seeded through splitmix64. The stream for a given seed is
/// identical on every platform; distributions are implemented here rather than
/// taken from <random>, whose distribution algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next() noexcept;
  double uniform() noexcept;  // [0, 1)
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  std::uint64_t below(std::uint64_t n) noexcept;  // [0, n)
  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Independent child stream keyed by `key`; depends only on (seed, key).
  Rng split(std::uint64_t key) const noexcept;

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords_per_param = 0;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::vector<std::pair<std::string, double>> per_param;
  double max_error = 0.0;
  bool passed(double tolerance) const noexcept { return max_error < tolerance; }
};

/// Central-difference check of the gradients already stored in `params`
/// against `loss`. Error per coordinate is |a - n| / max(1, |a| + |n|).
GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<ParamTensor* const> params,
                           const GradCheckOptions& options = {});

// 64-bit FNV-1a, used for config fingerprints and dataset digests.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t value);

}  // namespace hoopseq
