#pragma once

// Single-row comparison models: L2 logistic regression, CART random forest,
// batch-normalized MLP and a 1x2-kernel CNN.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numcore.hpp"

namespace hoopseq {

// Labelled rows for the non-sequence models.
struct RowSet {
  Matrix x;             // n x F
  std::vector<int> y;   // n labels in {0, 1}

  std::size_t size() const noexcept { return y.size(); }
  void check() const;
};

// ---------------------------------------------------------------- logistic regression

struct LogRegConfig {
  double C = 1.0;  // penalty ||w||^2 / (2 C n)
  std::size_t epochs = 2000;
  double lr = 0.1;
};

struct LogRegModel {
  ParamTensor w;  // (1, F)
  ParamTensor b;  // (1, 1)
  double C = 1.0;

  LogRegModel() = default;
  explicit LogRegModel(std::size_t features, double C = 1.0);

  double predict(std::span<const double> row) const;
  // Mean BCE plus the L2 term; writes the analytic gradient into w.grad/b.grad when asked.
  double loss(const RowSet& data, bool with_grad);
  ParamList params() { return {&w, &b}; }
};

// Appends the objective before each step to `curve` when given.
LogRegModel logreg_train(const RowSet& data, const LogRegConfig& config, std::vector<double>* curve = nullptr);

// ---------------------------------------------------------------- random forest

struct ForestSpec {
  std::size_t trees = 200;
  int max_depth = -1;  // -1 = unlimited, 0 = root leaf
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // 0 = ceil(sqrt(F))
  bool bootstrap = true;
  std::uint64_t seed = 7;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  std::uint32_t count0 = 0;
  std::uint32_t count1 = 0;

  bool leaf() const noexcept { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int vote(std::span<const double> row) const;
};

struct FeatureRank {
  std::size_t feature = 0;
  double importance = 0.0;
};

struct Forest {
  ForestSpec spec;
  std::size_t features = 0;
  std::vector<DecisionTree> trees;
  std::vector<double> importances;  // mean decrease in Gini, normalized

  bool trained() const noexcept { return !trees.empty(); }
  double predict(std::span<const double> row) const;  // fraction of trees voting 1
};

double gini(double count0, double count1);
Forest forest_train(const RowSet& data, const ForestSpec& spec);
// Features ordered by importance, descending (ties by index).
std::vector<FeatureRank> forest_importances(const Forest& forest);

// ---------------------------------------------------------------- shared dense helpers

struct NetTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 7;
};

struct NetEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
};

// ---------------------------------------------------------------- MLP

struct MlpSpec {
  std::size_t input_features = 66;
  std::vector<std::size_t> units{128, 64, 32};
  double dropout = 0.3;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
};

enum class NetMode { Train, Eval };

struct MlpModel {
  MlpSpec spec;
  ParamTensor w1, b1, gamma, beta, w2, b2, w3, b3, w4, b4;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  MlpModel() = default;
  explicit MlpModel(const MlpSpec& spec);
  ParamList params();
  std::vector<const ParamTensor*> params() const;

  // Forward over a batch. In train mode uses batch statistics, updates the
  // running ones (unless `update_running` is false) and applies dropout from `rng`.
  std::vector<double> forward(const Matrix& x, NetMode mode, Rng* rng = nullptr,
                              bool update_running = true);
  // Mean BCE over the batch with gradients accumulated into the parameters.
  double loss_and_grad(const Matrix& x, std::span<const int> y, Rng* rng, bool update_running = true);
  double predict(std::span<const double> row) const;
};

void initialize(MlpModel& model, std::uint64_t seed);
std::vector<NetEpoch> mlp_train(MlpModel& model, const RowSet& data, const NetTrainConfig& config);

// ---------------------------------------------------------------- CNN

struct CnnSpec {
  std::size_t input_features = 66;
  std::vector<std::size_t> filters{32, 64, 128};
  std::size_t dense_units = 128;
  double l2 = 0.001;
};

// Widths after conv1, pool1, conv2, pool2, conv3, pool3 (valid 1x2 convs, floor 1x2 pools).
std::vector<std::size_t> cnn_width_trace(std::size_t features);

struct CnnModel {
  CnnSpec spec;
  std::vector<ParamTensor> kernels;  // kernels[l]: (filters[l], 2 * in_channels), column k*in + c
  std::vector<ParamTensor> biases;   // (filters[l], 1)
  ParamTensor dense_w, dense_b;      // (dense_units, flatten), (dense_units, 1)
  ParamTensor out_w, out_b;          // (1, dense_units), (1, 1)

  CnnModel() = default;
  explicit CnnModel(const CnnSpec& spec);
  ParamList params();
  std::vector<const ParamTensor*> params() const;
  std::size_t flatten_size() const;

  double predict(std::span<const double> row) const;
  double penalty() const;  // l2 * sum of squared regularized kernels
  // Mean BCE plus the penalty, gradients accumulated into the parameters.
  double loss_and_grad(const Matrix& x, std::span<const int> y);
  // First convolution before its ReLU (width x filters), for inspection.
  Matrix first_conv(std::span<const double> row) const;
};

void initialize(CnnModel& model, std::uint64_t seed);
std::vector<NetEpoch> cnn_train(CnnModel& model, const RowSet& data, const NetTrainConfig& config);

// Batch start offsets for n samples; a trailing batch of one joins its predecessor.
std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t batch_size);

}  // namespace hoopseq
