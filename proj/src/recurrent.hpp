#pragma once

// LSTM cell, stacked sequence-to-one network with a dense/dropout head,
// truncated backpropagation through time and mini-batch training.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "numcore.hpp"

namespace hoopseq {

struct LstmLayerParams {
  LstmLayerParams() = default;
  LstmLayerParams(std::size_t input, std::size_t hidden, const std::string& prefix);

  std::size_t input = 0;
  std::size_t hidden = 0;
  // Each W is (hidden, hidden + input) and acts on [h_prev, x].
  ParamTensor wf, wi, wc, wo;
  ParamTensor bf, bi, bc, bo;  // (hidden, 1)

  ParamList params();
};

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;

  static LstmState zeros(std::size_t hidden) { return {std::vector<double>(hidden), std::vector<double>(hidden)}; }
};

struct LstmCellCache {
  std::vector<double> z;  // [h_prev, x]
  std::vector<double> c_prev;
  std::vector<double> f, i, g, o;  // g is the candidate c~
  std::vector<double> c;
  std::vector<double> tanh_c;
  std::vector<double> h;
};

LstmState lstm_cell_forward(std::span<const double> x, const LstmState& prev,
                            const LstmLayerParams& p, LstmCellCache* cache = nullptr);

// Accumulates parameter gradients into p.*.grad. dh/dc are gradients flowing into
// this step's outputs; dh_prev/dc_prev/dx receive (overwrite) the input gradients.
void lstm_cell_backward(const LstmCellCache& cache, LstmLayerParams& p, std::span<const double> dh,
                        std::span<const double> dc, std::span<double> dh_prev,
                        std::span<double> dc_prev, std::span<double> dx);

// Rows of `sequence` are timesteps. Returns (L, hidden) or (1, hidden).
Matrix lstm_layer_forward(const Matrix& sequence, const LstmLayerParams& p, bool return_sequences);

struct StackSpec {
  std::size_t input_features = kMatchupFeatureCount;
  std::size_t seq_len = 410;
  std::vector<std::size_t> lstm_units{50, 25, 12};
  std::size_t head_units = 32;
  double dropout = 0.3;

  static StackSpec desk(std::size_t input_features = kMatchupFeatureCount);
  static StackSpec paper(std::size_t input_features = kMatchupFeatureCount);
  void validate() const;
};

struct StackParams {
  StackParams() = default;
  explicit StackParams(const StackSpec& spec);

  std::vector<LstmLayerParams> layers;
  ParamTensor dense_w, dense_b;  // (head, last_units), (head, 1)
  ParamTensor out_w, out_b;      // (1, head), (1, 1)

  ParamList params();
  std::vector<const ParamTensor*> params() const;
  std::size_t parameter_count() const;
};

// Xavier-uniform input blocks, uniform(+-1/sqrt(hidden)) recurrent blocks,
// forget bias +1; head kernels Xavier-uniform. Sub-streams split from `seed`.
void initialize(StackParams& net, std::uint64_t seed);

enum class Mode { Train, Eval };

struct ForwardTrace {
  std::size_t seq_len = 0;
  std::size_t kept = 0;  // timesteps cached (the last `kept`)
  std::vector<std::vector<LstmCellCache>> steps;  // [layer][k], k = 0 oldest kept
  std::vector<double> last_h;
  std::vector<double> dense_pre;
  std::vector<double> dense_act;
  std::vector<double> mask;  // inverted-dropout multipliers
  std::vector<double> head_in;
  double logit = 0.0;
  double prob = 0.0;
  bool ready = false;
};

struct StackInput {
  const Matrix& rows;
  SequenceWindow window;
};

// Runs the stack on one window. With a trace, caches the last `bptt` timesteps
// of every layer for stack_backward. `dropout_rng` is required in train mode.
double stack_forward(const StackParams& net, const StackSpec& spec, const StackInput& input,
                     Mode mode, Rng* dropout_rng = nullptr, ForwardTrace* trace = nullptr,
                     std::size_t bptt = 0);

// Accumulates d(loss)/d(param) into net's grad buffers given d(loss)/d(logit).
// Gradients of timesteps older than the cached span are treated as zero.
void stack_backward(StackParams& net, const ForwardTrace& trace, double dlogit);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t bptt = 64;
  double clip_norm = 5.0;
  double val_fraction = 0.0;
  std::uint64_t seed = 7;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  std::optional<std::size_t> best_epoch;
  bool stopped_early = false;
};

// Returning true stops training after the epoch.
using EpochCallback = std::function<bool(const EpochStats&)>;

TrainResult train_stack(StackParams& net, const StackSpec& spec, const Matrix& rows,
                        std::span<const SequenceWindow> windows, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});

double predict_window(const StackParams& net, const StackSpec& spec, const Matrix& rows,
                      const SequenceWindow& window);

// Layer-by-layer output shapes, computed from a StackSpec without data.
std::string shape_walkthrough(const StackSpec& spec);

}  // namespace hoopseq
