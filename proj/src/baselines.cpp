#include "baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace hoopseq {

void RowSet::check() const {
  if (x.rows() != y.size()) {
    throw ShapeError("row set has " + std::to_string(x.rows()) + " rows but " +
                     std::to_string(y.size()) + " labels");
  }
  for (int label : y) {
    if (label != 0 && label != 1) throw ValidationError("labels must be 0 or 1");
  }
}

namespace {

void require_rows(const RowSet& data, const char* model) {
  data.check();
  if (data.size() == 0) throw ValidationError(std::string(model) + ": training set is empty");
}

void require_width(std::span<const double> row, std::size_t features) {
  if (row.size() != features) {
    throw ShapeError("input row has " + std::to_string(row.size()) + " features, model expects " +
                     std::to_string(features));
  }
}

void glorot(Matrix& w, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
}

void check_finite_loss(double loss, std::size_t epoch, const char* model) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(model) + ": loss became non-finite in epoch " +
                       std::to_string(epoch) + "; lower the learning rate");
  }
}

}  // namespace

std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < n; s += batch_size) starts.push_back(s);
  if (starts.size() > 1 && n - starts.back() == 1) starts.pop_back();
  starts.push_back(n);
  return starts;
}

// ---------------------------------------------------------------- logistic regression

LogRegModel::LogRegModel(std::size_t features, double C_)
    : w("logreg.w", 1, features), b("logreg.b", 1, 1), C(C_) {
  if (!(C_ > 0.0)) throw ValidationError("logistic regression C must be positive");
}

double LogRegModel::predict(std::span<const double> row) const {
  require_width(row, w.value.cols());
  double z = b.value[0];
  for (std::size_t j = 0; j < row.size(); ++j) z += w.value[j] * row[j];
  return sigmoid(z);
}

double LogRegModel::loss(const RowSet& data, bool with_grad) {
  const std::size_t n = data.size();
  const std::size_t F = w.value.cols();
  if (data.x.cols() != F) throw ShapeError("logistic regression feature count mismatch");
  if (with_grad) {
    w.grad.fill(0.0);
    b.grad.fill(0.0);
  }
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = data.x.row(r);
    const double p = predict(row);
    total += bce_loss(p, data.y[r]);
    if (with_grad) {
      const double d = p - data.y[r];
      for (std::size_t j = 0; j < F; ++j) w.grad[j] += d * row[j];
      b.grad[0] += d;
    }
  }
  double sq = 0.0;
  for (double v : w.value.values()) sq += v * v;
  const double nd = static_cast<double>(n);
  if (with_grad) {
    for (std::size_t j = 0; j < F; ++j) w.grad[j] = w.grad[j] / nd + w.value[j] / (C * nd);
    b.grad[0] /= nd;
  }
  return total / nd + sq / (2.0 * C * nd);
}

LogRegModel logreg_train(const RowSet& data, const LogRegConfig& config, std::vector<double>* curve) {
  require_rows(data, "logistic regression");
  if (!(config.lr > 0.0)) throw ValidationError("learning rate must be positive");
  LogRegModel model(data.x.cols(), config.C);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const double l = model.loss(data, true);
    check_finite_loss(l, e + 1, "logistic regression");
    if (curve != nullptr) curve->push_back(l);
    for (ParamTensor* p : model.params()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= config.lr * p->grad[i];
    }
  }
  zero_grads(model.params());
  return model;
}

// ---------------------------------------------------------------- random forest

double gini(double count0, double count1) {
  const double n = count0 + count1;
  if (n <= 0.0) return 0.0;
  const double p0 = count0 / n;
  const double p1 = count1 / n;
  return 1.0 - p0 * p0 - p1 * p1;
}

int DecisionTree::vote(std::span<const double> row) const {
  std::size_t at = 0;
  while (!nodes[at].leaf()) {
    const TreeNode& n = nodes[at];
    at = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[at].count1 > nodes[at].count0 ? 1 : 0;
}

double Forest::predict(std::span<const double> row) const {
  if (!trained()) throw ValidationError("forest is not trained");
  require_width(row, features);
  std::size_t votes = 0;
  for (const auto& t : trees) votes += static_cast<std::size_t>(t.vote(row));
  return static_cast<double>(votes) / static_cast<double>(trees.size());
}

namespace {

constexpr double kGiniTolerance = 1e-12;

struct TreeBuilder {
  const RowSet& data;
  const ForestSpec& spec;
  std::size_t mtry;
  Rng& rng;
  DecisionTree tree;
  std::vector<double> importance;
  std::vector<std::size_t> feature_pool;
  std::vector<std::pair<double, int>> column;

  int build(std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    std::uint32_t c1 = 0;
    for (std::size_t i : idx) c1 += static_cast<std::uint32_t>(data.y[i]);
    const auto c0 = static_cast<std::uint32_t>(idx.size()) - c1;
    tree.nodes[id].count0 = c0;
    tree.nodes[id].count1 = c1;

    const std::size_t n = idx.size();
    if ((spec.max_depth >= 0 && depth >= spec.max_depth) || c0 == 0 || c1 == 0 ||
        n < 2 * spec.min_samples_leaf) {
      return id;
    }

    // Random feature subset, scanned in ascending index order.
    for (std::size_t k = 0; k < mtry; ++k) {
      const std::size_t j = k + rng.below(feature_pool.size() - k);
      std::swap(feature_pool[k], feature_pool[j]);
    }
    std::vector<std::size_t> chosen(feature_pool.begin(), feature_pool.begin() + static_cast<std::ptrdiff_t>(mtry));
    std::sort(chosen.begin(), chosen.end());

    const double parent = gini(c0, c1);
    double best = parent;
    int best_feature = -1;
    double best_threshold = 0.0;
    const double nd = static_cast<double>(n);
    for (std::size_t f : chosen) {
      column.clear();
      for (std::size_t i : idx) column.emplace_back(data.x(i, f), data.y[i]);
      std::sort(column.begin(), column.end());
      double l1 = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        l1 += column[i].second;
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (nl < spec.min_samples_leaf || nr < spec.min_samples_leaf) continue;
        const double l0 = static_cast<double>(nl) - l1;
        const double r1 = static_cast<double>(c1) - l1;
        const double r0 = static_cast<double>(nr) - r1;
        const double weighted = (static_cast<double>(nl) * gini(l0, l1) + static_cast<double>(nr) * gini(r0, r1)) / nd;
        if (weighted < best - kGiniTolerance) {
          best = weighted;
          best_feature = static_cast<int>(f);
          double mid = column[i].first + (column[i + 1].first - column[i].first) / 2.0;
          if (!(mid < column[i + 1].first)) mid = column[i].first;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return id;

    importance[static_cast<std::size_t>(best_feature)] += nd * (parent - best);
    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) {
      (data.x(i, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(i);
    }
    idx.clear();
    idx.shrink_to_fit();
    tree.nodes[id].feature = best_feature;
    tree.nodes[id].threshold = best_threshold;
    const int l = build(left, depth + 1);
    tree.nodes[id].left = l;
    const int r = build(right, depth + 1);
    tree.nodes[id].right = r;
    return id;
  }
};

void normalize_or_uniform(std::vector<double>& v) {
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  if (total > 0.0) {
    for (double& x : v) x /= total;
  } else if (!v.empty()) {
    std::fill(v.begin(), v.end(), 1.0 / static_cast<double>(v.size()));
  }
}

}  // namespace

Forest forest_train(const RowSet& data, const ForestSpec& spec) {
  require_rows(data, "random forest");
  if (spec.trees == 0) throw ValidationError("forest needs at least one tree");
  if (spec.min_samples_leaf == 0) throw ValidationError("min samples per leaf must be at least 1");
  if (spec.max_depth < -1) throw ValidationError("max depth must be -1 (unlimited) or non-negative");
  const std::size_t F = data.x.cols();
  if (F == 0) throw ShapeError("random forest needs at least one feature");
  const std::size_t ones = static_cast<std::size_t>(std::count(data.y.begin(), data.y.end(), 1));
  if (ones == 0 || ones == data.size()) {
    throw ValidationError("random forest: training labels contain a single class");
  }
  const std::size_t mtry = spec.max_features == 0
                               ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(F))))
                               : std::min(spec.max_features, F);

  Forest forest;
  forest.spec = spec;
  forest.features = F;
  forest.importances.assign(F, 0.0);
  const Rng root(spec.seed);
  const std::size_t n = data.size();
  for (std::size_t t = 0; t < spec.trees; ++t) {
    Rng rng = root.split(t);
    std::vector<std::size_t> idx(n);
    if (spec.bootstrap) {
      for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    } else {
      std::iota(idx.begin(), idx.end(), 0);
    }
    TreeBuilder b{data, spec, mtry, rng, {}, std::vector<double>(F, 0.0), {}, {}};
    b.feature_pool.resize(F);
    std::iota(b.feature_pool.begin(), b.feature_pool.end(), 0);
    b.build(idx, 0);
    normalize_or_uniform(b.importance);
    const bool split_any = b.tree.nodes.size() > 1;
    if (split_any) {
      for (std::size_t f = 0; f < F; ++f) forest.importances[f] += b.importance[f];
    }
    forest.trees.push_back(std::move(b.tree));
  }
  normalize_or_uniform(forest.importances);
  return forest;
}

std::vector<FeatureRank> forest_importances(const Forest& forest) {
  if (!forest.trained()) throw ValidationError("forest is not trained");
  std::vector<FeatureRank> ranks;
  for (std::size_t f = 0; f < forest.importances.size(); ++f) ranks.push_back({f, forest.importances[f]});
  std::stable_sort(ranks.begin(), ranks.end(),
                   [](const FeatureRank& a, const FeatureRank& b) { return a.importance > b.importance; });
  return ranks;
}

// ---------------------------------------------------------------- dense helpers

namespace {

// Y = X W^T + b, row per sample.
Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.cols()) {
    throw ShapeError("dense input " + x.shape_string() + " vs kernel " + w.shape_string());
  }
  Matrix y(x.rows(), w.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto out = y.row(r);
    std::copy(b.values().begin(), b.values().end(), out.begin());
    gemv_accumulate(w, x.row(r), out);
  }
  return y;
}

// Accumulates dW, db; returns dX.
Matrix dense_backward(const Matrix& x, const Matrix& dy, ParamTensor& w, ParamTensor& b) {
  Matrix dx(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    outer_accumulate(w.grad, dy.row(r), x.row(r));
    for (std::size_t k = 0; k < dy.cols(); ++k) b.grad[k] += dy(r, k);
    gemv_transpose_accumulate(w.value, dy.row(r), dx.row(r));
  }
  return dx;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = relu(v);
}

void relu_backward(Matrix& grad, const Matrix& activated) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > 0.0)) grad[i] = 0.0;
  }
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng* rng) {
  Matrix m(rows, cols, 1.0);
  if (rate <= 0.0) return m;
  if (rng == nullptr) throw ValidationError("train-mode dropout needs an RNG");
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : m.values()) v = rng->bernoulli(rate) ? 0.0 : keep;
  return m;
}

void hadamard(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> order, std::size_t b0, std::size_t b1) {
  Matrix out(b1 - b0, x.cols());
  for (std::size_t i = b0; i < b1; ++i) {
    const auto src = x.row(order[i]);
    std::copy(src.begin(), src.end(), out.row(i - b0).begin());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- MLP

MlpModel::MlpModel(const MlpSpec& s) : spec(s) {
  if (s.units.size() != 3) throw ShapeError("MLP expects three hidden layer sizes");
  if (s.input_features == 0 || s.units[0] == 0 || s.units[1] == 0 || s.units[2] == 0) {
    throw ShapeError("MLP layer sizes must be positive");
  }
  if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw ValidationError("dropout rate must be in [0, 1)");
  const std::size_t u1 = s.units[0], u2 = s.units[1], u3 = s.units[2];
  w1 = ParamTensor("mlp.dense_1.W", u1, s.input_features);
  b1 = ParamTensor("mlp.dense_1.b", u1, 1);
  gamma = ParamTensor("mlp.batchnorm.gamma", u1, 1);
  beta = ParamTensor("mlp.batchnorm.beta", u1, 1);
  w2 = ParamTensor("mlp.dense_2.W", u2, u1);
  b2 = ParamTensor("mlp.dense_2.b", u2, 1);
  w3 = ParamTensor("mlp.dense_3.W", u3, u2);
  b3 = ParamTensor("mlp.dense_3.b", u3, 1);
  w4 = ParamTensor("mlp.output.W", 1, u3);
  b4 = ParamTensor("mlp.output.b", 1, 1);
  gamma.value.fill(1.0);
  running_mean.assign(u1, 0.0);
  running_var.assign(u1, 1.0);
}

ParamList MlpModel::params() { return {&w1, &b1, &gamma, &beta, &w2, &b2, &w3, &b3, &w4, &b4}; }

std::vector<const ParamTensor*> MlpModel::params() const {
  auto mut = const_cast<MlpModel*>(this)->params();
  return {mut.begin(), mut.end()};
}

void initialize(MlpModel& m, std::uint64_t seed) {
  Rng rng(seed);
  glorot(m.w1.value, rng, m.w1.value.cols(), m.w1.value.rows());
  glorot(m.w2.value, rng, m.w2.value.cols(), m.w2.value.rows());
  glorot(m.w3.value, rng, m.w3.value.cols(), m.w3.value.rows());
  glorot(m.w4.value, rng, m.w4.value.cols(), m.w4.value.rows());
  for (ParamTensor* b : {&m.b1, &m.beta, &m.b2, &m.b3, &m.b4}) b->value.fill(0.0);
  m.gamma.value.fill(1.0);
  std::fill(m.running_mean.begin(), m.running_mean.end(), 0.0);
  std::fill(m.running_var.begin(), m.running_var.end(), 1.0);
  zero_grads(m.params());
}

namespace {

struct MlpCache {
  Matrix a1, xhat, bn, mask1, d1, a2, mask2, d2, a3;
  std::vector<double> mean, var, logits, probs;
};

MlpCache mlp_pass(const MlpModel& m, const Matrix& x, NetMode mode, Rng* rng) {
  if (x.cols() != m.spec.input_features) {
    throw ShapeError("MLP input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(m.spec.input_features));
  }
  const std::size_t B = x.rows();
  const std::size_t u1 = m.spec.units[0];
  MlpCache c;
  c.a1 = dense_forward(x, m.w1.value, m.b1.value);
  relu_inplace(c.a1);

  c.mean.assign(u1, 0.0);
  c.var.assign(u1, 0.0);
  if (mode == NetMode::Train) {
    if (B < 2) {
      throw ValidationError("batch normalization needs at least 2 samples per training batch (got " +
                            std::to_string(B) + ")");
    }
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t j = 0; j < u1; ++j) c.mean[j] += c.a1(r, j);
    }
    for (double& v : c.mean) v /= static_cast<double>(B);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t j = 0; j < u1; ++j) {
        const double d = c.a1(r, j) - c.mean[j];
        c.var[j] += d * d;
      }
    }
    for (double& v : c.var) v /= static_cast<double>(B);
  } else {
    c.mean = m.running_mean;
    c.var = m.running_var;
  }
  c.xhat = Matrix(B, u1);
  c.bn = Matrix(B, u1);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t j = 0; j < u1; ++j) {
      const double xh = (c.a1(r, j) - c.mean[j]) / std::sqrt(c.var[j] + m.spec.bn_epsilon);
      c.xhat(r, j) = xh;
      c.bn(r, j) = m.gamma.value[j] * xh + m.beta.value[j];
    }
  }
  const bool train = mode == NetMode::Train;
  c.mask1 = train ? dropout_mask(B, u1, m.spec.dropout, rng) : Matrix(B, u1, 1.0);
  c.d1 = c.bn;
  hadamard(c.d1, c.mask1);
  c.a2 = dense_forward(c.d1, m.w2.value, m.b2.value);
  relu_inplace(c.a2);
  c.mask2 = train ? dropout_mask(B, m.spec.units[1], m.spec.dropout, rng) : Matrix(B, m.spec.units[1], 1.0);
  c.d2 = c.a2;
  hadamard(c.d2, c.mask2);
  c.a3 = dense_forward(c.d2, m.w3.value, m.b3.value);
  relu_inplace(c.a3);
  const Matrix logits = dense_forward(c.a3, m.w4.value, m.b4.value);
  c.logits.assign(logits.values().begin(), logits.values().end());
  c.probs.resize(B);
  for (std::size_t r = 0; r < B; ++r) c.probs[r] = sigmoid(c.logits[r]);
  return c;
}

void update_running(MlpModel& m, const MlpCache& c) {
  const double mom = m.spec.bn_momentum;
  for (std::size_t j = 0; j < m.running_mean.size(); ++j) {
    m.running_mean[j] = mom * m.running_mean[j] + (1.0 - mom) * c.mean[j];
    m.running_var[j] = mom * m.running_var[j] + (1.0 - mom) * c.var[j];
  }
}

}  // namespace

std::vector<double> MlpModel::forward(const Matrix& x, NetMode mode, Rng* rng, bool update) {
  MlpCache c = mlp_pass(*this, x, mode, rng);
  if (mode == NetMode::Train && update) update_running(*this, c);
  return c.probs;
}

double MlpModel::predict(std::span<const double> row) const {
  const Matrix x(1, row.size(), std::vector<double>(row.begin(), row.end()));
  return mlp_pass(*this, x, NetMode::Eval, nullptr).probs[0];
}

double MlpModel::loss_and_grad(const Matrix& x, std::span<const int> y, Rng* rng, bool update) {
  if (y.size() != x.rows()) throw ShapeError("MLP batch labels do not match rows");
  MlpCache c = mlp_pass(*this, x, NetMode::Train, rng);
  if (update) update_running(*this, c);
  const std::size_t B = x.rows();
  const double inv = 1.0 / static_cast<double>(B);
  double loss = 0.0;
  Matrix dlogit(B, 1);
  for (std::size_t r = 0; r < B; ++r) {
    loss += bce_loss(c.probs[r], y[r]);
    dlogit[r] = (c.probs[r] - y[r]) * inv;
  }
  Matrix da3 = dense_backward(c.a3, dlogit, w4, b4);
  relu_backward(da3, c.a3);
  Matrix dd2 = dense_backward(c.d2, da3, w3, b3);
  hadamard(dd2, c.mask2);
  relu_backward(dd2, c.a2);
  Matrix dd1 = dense_backward(c.d1, dd2, w2, b2);
  hadamard(dd1, c.mask1);

  const std::size_t u1 = spec.units[0];
  Matrix da1(B, u1);
  for (std::size_t j = 0; j < u1; ++j) {
    const double inv_std = 1.0 / std::sqrt(c.var[j] + spec.bn_epsilon);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t r = 0; r < B; ++r) {
      gamma.grad[j] += dd1(r, j) * c.xhat(r, j);
      beta.grad[j] += dd1(r, j);
      const double dxhat = dd1(r, j) * gamma.value[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * c.xhat(r, j);
    }
    for (std::size_t r = 0; r < B; ++r) {
      const double dxhat = dd1(r, j) * gamma.value[j];
      da1(r, j) = inv_std * inv *
                  (static_cast<double>(B) * dxhat - sum_dxhat - c.xhat(r, j) * sum_dxhat_xhat);
    }
  }
  relu_backward(da1, c.a1);
  dense_backward(x, da1, w1, b1);
  return loss * inv;
}

std::vector<NetEpoch> mlp_train(MlpModel& model, const RowSet& data, const NetTrainConfig& config) {
  require_rows(data, "MLP");
  if (data.size() < 2) throw ValidationError("MLP training needs at least 2 rows for batch normalization");
  if (config.batch_size < 2) throw ValidationError("MLP batch size must be at least 2 for batch normalization");
  AdamState adam(AdamConfig{.lr = config.lr});
  ParamList params = model.params();
  zero_grads(params);
  const Rng root(config.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<NetEpoch> curve;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler = root.split(2 * e + 1);
    shuffler.shuffle(order);
    const auto bounds = batch_bounds(order.size(), config.batch_size);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
      const Matrix xb = gather_rows(data.x, order, bounds[k], bounds[k + 1]);
      std::vector<int> yb;
      for (std::size_t i = bounds[k]; i < bounds[k + 1]; ++i) yb.push_back(data.y[order[i]]);
      Rng dropout = root.split((static_cast<std::uint64_t>(e + 1) << 32) | k);
      const double l = model.loss_and_grad(xb, yb, &dropout);
      check_finite_loss(l, e + 1, "MLP");
      total += l * static_cast<double>(yb.size());
      adam.update(params);
    }
    curve.push_back({e + 1, total / static_cast<double>(data.size())});
  }
  return curve;
}

// ---------------------------------------------------------------- CNN

std::vector<std::size_t> cnn_width_trace(std::size_t features) {
  std::vector<long long> trace;
  long long w = static_cast<long long>(features);
  for (int stage = 0; stage < 3; ++stage) {
    w = w - 1;
    trace.push_back(w);
    w = w >= 0 ? w / 2 : w;
    trace.push_back(w);
  }
  if (features < 15) {
    std::string text;
    for (long long t : trace) text += (text.empty() ? "" : ", ") + std::to_string(t);
    throw ShapeError("CNN needs at least 15 input features for three conv/pool stages; width trace for " +
                     std::to_string(features) + " features: [" + text + "]");
  }
  return {trace.begin(), trace.end()};
}

CnnModel::CnnModel(const CnnSpec& s) : spec(s) {
  if (s.filters.size() != 3) throw ShapeError("CNN expects three convolution stages");
  const auto widths = cnn_width_trace(s.input_features);
  std::size_t in = 1;
  for (std::size_t l = 0; l < 3; ++l) {
    if (s.filters[l] == 0) throw ShapeError("CNN filter counts must be positive");
    kernels.emplace_back("cnn.conv_" + std::to_string(l + 1) + ".K", s.filters[l], 2 * in);
    biases.emplace_back("cnn.conv_" + std::to_string(l + 1) + ".b", s.filters[l], 1);
    in = s.filters[l];
  }
  const std::size_t flat = widths.back() * s.filters.back();
  dense_w = ParamTensor("cnn.dense.W", s.dense_units, flat);
  dense_b = ParamTensor("cnn.dense.b", s.dense_units, 1);
  out_w = ParamTensor("cnn.output.W", 1, s.dense_units);
  out_b = ParamTensor("cnn.output.b", 1, 1);
}

ParamList CnnModel::params() {
  ParamList all;
  for (std::size_t l = 0; l < kernels.size(); ++l) {
    all.push_back(&kernels[l]);
    all.push_back(&biases[l]);
  }
  all.insert(all.end(), {&dense_w, &dense_b, &out_w, &out_b});
  return all;
}

std::vector<const ParamTensor*> CnnModel::params() const {
  auto mut = const_cast<CnnModel*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::size_t CnnModel::flatten_size() const { return dense_w.value.cols(); }

void initialize(CnnModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l < m.kernels.size(); ++l) {
    Matrix& k = m.kernels[l].value;
    // Keras fan sizes for a (1,2) kernel: in_channels*2 and filters*2.
    glorot(k, rng, k.cols(), 2 * k.rows());
    m.biases[l].value.fill(0.0);
  }
  glorot(m.dense_w.value, rng, m.dense_w.value.cols(), m.dense_w.value.rows());
  glorot(m.out_w.value, rng, m.out_w.value.cols(), m.out_w.value.rows());
  m.dense_b.value.fill(0.0);
  m.out_b.value.fill(0.0);
  zero_grads(m.params());
}

namespace {

struct CnnCache {
  std::vector<Matrix> inputs;  // input to each conv stage (width x channels)
  std::vector<Matrix> conv;    // post-ReLU conv outputs
  std::vector<std::vector<std::size_t>> argmax;  // pooled index -> source row in conv
  std::vector<double> flat;
  std::vector<double> hidden;
  double logit = 0.0;
  double prob = 0.0;
};

Matrix conv_forward(const Matrix& in, const Matrix& k, const Matrix& b) {
  const std::size_t C = in.cols();
  const std::size_t W = in.rows() - 1;
  Matrix out(W, k.rows());
  for (std::size_t w = 0; w < W; ++w) {
    auto dst = out.row(w);
    std::copy(b.values().begin(), b.values().end(), dst.begin());
    gemv_accumulate(k, std::span<const double>(in.values().data() + w * C, 2 * C), dst);
  }
  return out;
}

CnnCache cnn_pass(const CnnModel& m, std::span<const double> row) {
  require_width(row, m.spec.input_features);
  CnnCache c;
  Matrix x(row.size(), 1, std::vector<double>(row.begin(), row.end()));
  for (std::size_t l = 0; l < 3; ++l) {
    Matrix conv = conv_forward(x, m.kernels[l].value, m.biases[l].value);
    relu_inplace(conv);
    const std::size_t P = conv.rows() / 2;
    const std::size_t C = conv.cols();
    Matrix pooled(P, C);
    std::vector<std::size_t> arg(P * C);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double a = conv(2 * p, ch);
        const double b = conv(2 * p + 1, ch);
        const bool first = !(b > a);
        pooled(p, ch) = first ? a : b;
        arg[p * C + ch] = first ? 2 * p : 2 * p + 1;
      }
    }
    c.inputs.push_back(std::move(x));
    c.conv.push_back(std::move(conv));
    c.argmax.push_back(std::move(arg));
    x = std::move(pooled);
  }
  c.flat.assign(x.values().begin(), x.values().end());
  c.hidden.assign(m.dense_b.value.values().begin(), m.dense_b.value.values().end());
  gemv_accumulate(m.dense_w.value, c.flat, c.hidden);
  for (double& h : c.hidden) h = relu(h);
  c.logit = m.out_b.value[0];
  for (std::size_t k = 0; k < c.hidden.size(); ++k) c.logit += m.out_w.value[k] * c.hidden[k];
  c.prob = sigmoid(c.logit);
  return c;
}

void cnn_backward(CnnModel& m, const CnnCache& c, double dlogit) {
  m.out_b.grad[0] += dlogit;
  std::vector<double> dh(c.hidden.size());
  for (std::size_t k = 0; k < dh.size(); ++k) {
    m.out_w.grad[k] += dlogit * c.hidden[k];
    dh[k] = c.hidden[k] > 0.0 ? dlogit * m.out_w.value[k] : 0.0;
    m.dense_b.grad[k] += dh[k];
  }
  outer_accumulate(m.dense_w.grad, dh, c.flat);
  std::vector<double> dflat(c.flat.size(), 0.0);
  gemv_transpose_accumulate(m.dense_w.value, dh, dflat);

  Matrix dpooled(c.conv[2].rows() / 2, c.conv[2].cols(), std::move(dflat));
  for (std::size_t l = 3; l-- > 0;) {
    const Matrix& conv = c.conv[l];
    const std::size_t C = conv.cols();
    Matrix dconv(conv.rows(), C);
    for (std::size_t p = 0; p < dpooled.rows(); ++p) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t src = c.argmax[l][p * C + ch];
        if (conv(src, ch) > 0.0) dconv(src, ch) += dpooled(p, ch);
      }
    }
    const Matrix& in = c.inputs[l];
    const std::size_t Cin = in.cols();
    Matrix din(in.rows(), Cin);
    for (std::size_t w = 0; w < dconv.rows(); ++w) {
      const auto g = dconv.row(w);
      outer_accumulate(m.kernels[l].grad, g, std::span<const double>(in.values().data() + w * Cin, 2 * Cin));
      for (std::size_t o = 0; o < C; ++o) m.biases[l].grad[o] += g[o];
      if (l > 0) {
        gemv_transpose_accumulate(m.kernels[l].value, g,
                                  std::span<double>(din.values().data() + w * Cin, 2 * Cin));
      }
    }
    dpooled = std::move(din);
  }
}

}  // namespace

double CnnModel::predict(std::span<const double> row) const { return cnn_pass(*this, row).prob; }

Matrix CnnModel::first_conv(std::span<const double> row) const {
  require_width(row, spec.input_features);
  const Matrix x(row.size(), 1, std::vector<double>(row.begin(), row.end()));
  return conv_forward(x, kernels[0].value, biases[0].value);
}

double CnnModel::penalty() const {
  double sq = 0.0;
  for (const auto& k : kernels) {
    for (double v : k.value.values()) sq += v * v;
  }
  for (double v : dense_w.value.values()) sq += v * v;
  return spec.l2 * sq;
}

double CnnModel::loss_and_grad(const Matrix& x, std::span<const int> y) {
  if (y.size() != x.rows() || x.rows() == 0) throw ShapeError("CNN batch labels do not match rows");
  const double inv = 1.0 / static_cast<double>(x.rows());
  double loss = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const CnnCache c = cnn_pass(*this, x.row(r));
    loss += bce_loss(c.prob, y[r]);
    cnn_backward(*this, c, (c.prob - y[r]) * inv);
  }
  const double scale = 2.0 * spec.l2;
  auto add_l2 = [&](ParamTensor& p) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += scale * p.value[i];
  };
  for (auto& k : kernels) add_l2(k);
  add_l2(dense_w);
  return loss * inv + penalty();
}

std::vector<NetEpoch> cnn_train(CnnModel& model, const RowSet& data, const NetTrainConfig& config) {
  require_rows(data, "CNN");
  if (config.batch_size == 0) throw ValidationError("batch size must be at least 1");
  AdamState adam(AdamConfig{.lr = config.lr});
  ParamList params = model.params();
  zero_grads(params);
  const Rng root(config.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<NetEpoch> curve;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler = root.split(2 * e + 1);
    shuffler.shuffle(order);
    const auto bounds = batch_bounds(order.size(), config.batch_size);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
      const Matrix xb = gather_rows(data.x, order, bounds[k], bounds[k + 1]);
      std::vector<int> yb;
      for (std::size_t i = bounds[k]; i < bounds[k + 1]; ++i) yb.push_back(data.y[order[i]]);
      const double l = model.loss_and_grad(xb, yb);
      check_finite_loss(l, e + 1, "CNN");
      total += l * static_cast<double>(yb.size());
      adam.update(params);
    }
    curve.push_back({e + 1, total / static_cast<double>(data.size())});
  }
  return curve;
}

}  // namespace hoopseq
