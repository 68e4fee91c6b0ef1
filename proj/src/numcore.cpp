#include "numcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "error.hpp"

namespace hoopseq {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match " +
                     shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix affine(const Matrix& w, const Matrix& x, const Matrix& b) {
  Matrix out = matmul(w, x);
  if (b.rows() != out.rows() || (b.cols() != 1 && b.cols() != out.cols())) {
    throw ShapeError("affine bias " + b.shape_string() + " vs product " + out.shape_string());
  }
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(i, b.cols() == 1 ? 0 : j);
  }
  return out;
}

void gemv_accumulate(const Matrix& w, std::span<const double> x, std::span<double> y) {
  const std::size_t n = w.cols();
  const double* p = w.values().data();
  for (std::size_t r = 0; r < w.rows(); ++r, p += n) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += p[c] * x[c];
    y[r] += acc;
  }
}

void gemv_transpose_accumulate(const Matrix& w, std::span<const double> g, std::span<double> y) {
  const std::size_t n = w.cols();
  const double* p = w.values().data();
  double* out = y.data();
  for (std::size_t r = 0; r < w.rows(); ++r, p += n) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) out[c] += p[c] * gr;
  }
}

void outer_accumulate(Matrix& w, std::span<const double> g, std::span<const double> x) {
  const std::size_t n = w.cols();
  double* p = w.values().data();
  const double* xs = x.data();
  for (std::size_t r = 0; r < w.rows(); ++r, p += n) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) p[c] += gr * xs[c];
  }
}

double sigmoid(double z) noexcept {
  // Two branches so exp() only ever sees a non-positive argument.
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double tanh_act(double z) noexcept { return std::tanh(z); }

double relu(double z) noexcept { return z < 0.0 ? 0.0 : z; }

namespace {
template <class F>
Matrix map(const Matrix& z, F f) {
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = f(z[i]);
  return out;
}
}  // namespace

Matrix sigmoid(const Matrix& z) { return map(z, [](double v) { return sigmoid(v); }); }
Matrix tanh_act(const Matrix& z) { return map(z, [](double v) { return tanh_act(v); }); }
Matrix relu(const Matrix& z) { return map(z, [](double v) { return relu(v); }); }

namespace {
void check_label(int y) {
  if (y != 0 && y != 1) throw ValidationError("label must be 0 or 1, got " + std::to_string(y));
}
}  // namespace

double bce_loss(double y_hat, int y) {
  check_label(y);
  const double p = std::clamp(y_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return y == 1 ? -std::log(p) : -std::log1p(-p);
}

double bce_grad(double y_hat, int y) {
  check_label(y);
  if (y_hat < kProbabilityClamp || y_hat > 1.0 - kProbabilityClamp) return 0.0;
  return y == 1 ? -1.0 / y_hat : 1.0 / (1.0 - y_hat);
}

void AdamState::update(std::span<ParamTensor* const> params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const ParamTensor* p : params) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (m_.size() != params.size()) {
    throw ShapeError("optimizer tracks " + std::to_string(m_.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamTensor& p = *params[k];
    if (!m_[k].same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw ShapeError("optimizer state for '" + p.name + "' is " + m_[k].shape_string() +
                       ", parameter is " + p.value.shape_string());
    }
  }

  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamTensor& p = *params[k];
    auto w = p.value.values();
    auto g = p.grad.values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
      g[i] = 0.0;
    }
  }
}

double global_grad_norm(std::span<ParamTensor* const> params) {
  double sq = 0.0;
  for (const ParamTensor* p : params) {
    for (double g : p->grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_norm(std::span<ParamTensor* const> params, double max_norm) {
  if (max_norm <= 0.0) return 1.0;
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (ParamTensor* p : params) {
    for (double& g : p->grad.values()) g *= scale;
  }
  return scale;
}

void zero_grads(std::span<ParamTensor* const> params) {
  for (ParamTensor* p : params) p->grad.fill(0.0);
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next() noexcept {
  const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = std::rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() noexcept {
  // Box-Muller; u1 is shifted away from zero so log() stays finite.
  const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  // Lemire's multiply-shift with rejection.
  unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::split(std::uint64_t key) const noexcept {
  std::uint64_t sm = seed_ ^ (key * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return Rng(splitmix64(sm));
}

GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<ParamTensor* const> params,
                           const GradCheckOptions& options) {
  const double first = loss();
  const double second = loss();
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second)) {
    throw NumericError("gradient check: forward pass is not deterministic (" +
                       std::to_string(first) + " vs " + std::to_string(second) + ")");
  }

  GradCheckResult result;
  Rng rng(options.seed);
  const double h = options.step;
  for (ParamTensor* p : params) {
    auto w = p->value.values();
    std::vector<std::size_t> coords(w.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_param);
    }
    double worst = 0.0;
    for (std::size_t i : coords) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = loss();
      w[i] = saved - h;
      const double down = loss();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double err =
          std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, err);
    }
    result.per_param.emplace_back(p->name, worst);
    result.max_error = std::max(result.max_error, worst);
  }
  return result;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) noexcept {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace hoopseq
