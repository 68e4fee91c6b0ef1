#include <gtest/gtest.h>

#include <cmath>

#include "error.hpp"
#include "recurrent.hpp"

using namespace hoopseq;

namespace {

void randomize(ParamList params, Rng& rng, double scale) {
  for (ParamTensor* p : params) {
    for (double& v : p->value.values()) v = rng.uniform(-scale, scale);
  }
}

Matrix random_rows(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

SequenceWindow full_window(std::size_t length) {
  SequenceWindow w;
  w.start = 0;
  w.length = length;
  w.target = length;
  return w;
}

StackSpec mini_spec() {
  StackSpec s;
  s.input_features = 4;
  s.seq_len = 6;
  s.lstm_units = {3, 2};
  s.head_units = 2;
  s.dropout = 0.3;
  return s;
}

}  // namespace

TEST(LstmCell, ZeroParametersGiveHalfGatesAndZeroState) {
  LstmLayerParams p(3, 2, "l");
  LstmCellCache cache;
  const std::vector<double> x = {4.0, -2.0, 9.0};
  const auto s = lstm_cell_forward(x, LstmState::zeros(2), p, &cache);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(cache.f[k], 0.5);
    EXPECT_EQ(cache.i[k], 0.5);
    EXPECT_EQ(cache.o[k], 0.5);
    EXPECT_EQ(cache.g[k], 0.0);
    EXPECT_EQ(s.c[k], 0.0);
    EXPECT_EQ(s.h[k], 0.0);
  }
}

TEST(LstmCell, ScalarUnitPreactivationMatchesOracle) {
  // Weights 1 on [h_prev, x] = [0, 1] with zero bias: every pre-activation is 1.
  LstmLayerParams p(1, 1, "l");
  for (ParamTensor* w : {&p.wf, &p.wi, &p.wc, &p.wo}) w->value.fill(1.0);
  LstmCellCache cache;
  const std::vector<double> x = {1.0};
  const auto s = lstm_cell_forward(x, LstmState::zeros(1), p, &cache);
  EXPECT_NEAR(cache.f[0], 0.7310585786300049, 1e-12);
  EXPECT_NEAR(cache.g[0], 0.7615941559557649, 1e-12);
  EXPECT_NEAR(s.c[0], 0.55676994115, 1e-10);
  EXPECT_NEAR(s.h[0], 0.3696, 1e-4);
  EXPECT_NEAR(s.h[0], 0.36960, 1e-5);
}

TEST(LstmCell, ScalarAllOnesIncludingBias) {
  LstmLayerParams p(1, 1, "l");
  for (ParamTensor* t : p.params()) t->value.fill(1.0);
  const std::vector<double> x = {1.0};
  const auto s = lstm_cell_forward(x, LstmState::zeros(1), p);
  const double gate = 1.0 / (1.0 + std::exp(-2.0));
  const double c = gate * std::tanh(2.0);
  EXPECT_NEAR(s.c[0], c, 1e-15);
  EXPECT_NEAR(s.h[0], gate * std::tanh(c), 1e-15);
}

TEST(LstmCell, SaturatedGatesRetainMemory) {
  LstmLayerParams p(2, 3, "l");
  p.bf.value.fill(20.0);
  p.bi.value.fill(-20.0);
  LstmState prev{{0.1, -0.4, 0.9}, {1.5, -2.0, 0.3}};
  const std::vector<double> x = {0.7, -0.2};
  const auto s = lstm_cell_forward(x, prev, p);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.c[k], prev.c[k], 1e-8);
}

TEST(LstmCell, CellUpdateDecomposition) {
  Rng rng(4);
  LstmLayerParams p(2, 3, "l");
  randomize(p.params(), rng, 0.5);
  LstmState prev{{0.2, 0.1, -0.3}, {0.8, -1.1, 0.4}};
  const std::vector<double> x = {0.3, 0.6};
  LstmCellCache cache;

  p.bi.value.fill(-60.0);  // i == 0
  auto s = lstm_cell_forward(x, prev, p, &cache);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.c[k], cache.f[k] * prev.c[k], 1e-15);

  p.bi.value.fill(0.0);
  p.bf.value.fill(-60.0);  // f == 0
  s = lstm_cell_forward(x, prev, p, &cache);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.c[k], cache.i[k] * cache.g[k], 1e-15);
}

TEST(LstmCell, GateRangesAndHiddenBound) {
  Rng rng(8);
  LstmLayerParams p(5, 4, "l");
  for (int trial = 0; trial < 200; ++trial) {
    randomize(p.params(), rng, 3.0);
    LstmState s{std::vector<double>(4), std::vector<double>(4)};
    for (int t = 0; t < 20; ++t) {
      std::vector<double> x(5);
      for (double& v : x) v = rng.uniform(-10.0, 10.0);
      LstmCellCache c;
      s = lstm_cell_forward(x, s, p, &c);
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_GE(c.f[k], 0.0);
        EXPECT_LE(c.f[k], 1.0);
        EXPECT_GE(c.i[k], 0.0);
        EXPECT_LE(c.i[k], 1.0);
        EXPECT_GE(c.o[k], 0.0);
        EXPECT_LE(c.o[k], 1.0);
        EXPECT_LE(std::abs(c.g[k]), 1.0);
        EXPECT_LE(std::abs(s.h[k]), 1.0);
      }
    }
  }
}

TEST(LstmCell, ModerateInputsKeepGatesStrictlyInside) {
  Rng rng(9);
  LstmLayerParams p(3, 3, "l");
  randomize(p.params(), rng, 1.0);
  LstmCellCache c;
  const std::vector<double> x = {1.0, -2.0, 0.5};
  lstm_cell_forward(x, LstmState::zeros(3), p, &c);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_GT(c.f[k], 0.0);
    EXPECT_LT(c.f[k], 1.0);
    EXPECT_GT(c.g[k], -1.0);
    EXPECT_LT(c.g[k], 1.0);
  }
}

TEST(LstmCell, ShapeMismatch) {
  LstmLayerParams p(3, 2, "l");
  const std::vector<double> x = {1.0, 2.0};
  EXPECT_THROW(lstm_cell_forward(x, LstmState::zeros(2), p), ShapeError);
  const std::vector<double> x3 = {1.0, 2.0, 3.0};
  EXPECT_THROW(lstm_cell_forward(x3, LstmState::zeros(3), p), ShapeError);
}

TEST(LstmCell, GradientsMatchFiniteDifferences) {
  Rng rng(21);
  LstmLayerParams p(4, 3, "cell");
  randomize(p.params(), rng, 0.8);
  const LstmState prev{{0.3, -0.2, 0.5}, {0.7, -0.4, 0.1}};
  const std::vector<double> x = {0.5, -1.0, 0.25, 0.9};
  const std::vector<double> rh = {0.6, -1.3, 0.8};
  const std::vector<double> rc = {-0.4, 0.2, 1.1};
  auto loss = [&] {
    const auto s = lstm_cell_forward(x, prev, p);
    double l = 0.0;
    for (std::size_t k = 0; k < 3; ++k) l += rh[k] * s.h[k] + rc[k] * s.c[k];
    return l;
  };
  ParamList params = p.params();
  zero_grads(params);
  LstmCellCache cache;
  lstm_cell_forward(x, prev, p, &cache);
  std::vector<double> dh_prev(3), dc_prev(3), dx(4);
  lstm_cell_backward(cache, p, rh, rc, dh_prev, dc_prev, dx);
  const auto r = grad_check(loss, params);
  EXPECT_LT(r.max_error, 1e-5);

  // Input gradient via perturbation of x.
  for (std::size_t j = 0; j < 4; ++j) {
    std::vector<double> xp = x, xm = x;
    xp[j] += 1e-5;
    xm[j] -= 1e-5;
    auto eval = [&](const std::vector<double>& xv) {
      const auto s = lstm_cell_forward(xv, prev, p);
      double l = 0.0;
      for (std::size_t k = 0; k < 3; ++k) l += rh[k] * s.h[k] + rc[k] * s.c[k];
      return l;
    };
    EXPECT_NEAR(dx[j], (eval(xp) - eval(xm)) / 2e-5, 1e-8);
  }
}

TEST(LstmLayer, SingleStepEqualsCell) {
  Rng rng(2);
  LstmLayerParams p(3, 4, "l");
  randomize(p.params(), rng, 1.0);
  const Matrix seq = random_rows(rng, 1, 3);
  const auto cell = lstm_cell_forward(seq.row(0), LstmState::zeros(4), p);
  const Matrix out = lstm_layer_forward(seq, p, false);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out[k], cell.h[k]);
  EXPECT_THROW(lstm_layer_forward(Matrix(0, 3), p, true), ValidationError);
}

TEST(LstmLayer, RetentionSaturatedSequenceIsMonotone) {
  LstmLayerParams p(1, 1, "l");
  p.bf.value.fill(20.0);
  p.bc.value.fill(1.0);
  const Matrix seq(50, 1, 0.7);
  const Matrix h = lstm_layer_forward(seq, p, true);
  // Scalar recurrence: c_t = f c_{t-1} + i tanh(1), h_t = o tanh(c_t), i = o = 1/2.
  const double f = 1.0 / (1.0 + std::exp(-20.0));
  double c = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    c = f * c + 0.5 * std::tanh(1.0);
    EXPECT_NEAR(h[t], 0.5 * std::tanh(c), 1e-15);
    if (t > 0) EXPECT_GE(h[t], h[t - 1]);
    if (t > 0 && t < 20) EXPECT_GT(h[t], h[t - 1]);
    EXPECT_LE(h[t], 0.5);
  }
  EXPECT_NEAR(h[49], 0.5, 1e-9);
}

TEST(LstmLayer, FullScaleDimensionsProduceExpectedShapes) {
  const StackSpec spec = StackSpec::paper();
  StackParams net(spec);
  initialize(net, 3);
  Rng rng(5);
  const Matrix seq = random_rows(rng, spec.seq_len, spec.input_features);
  const Matrix a = lstm_layer_forward(seq, net.layers[0], true);
  EXPECT_EQ(a.rows(), 9840u);
  EXPECT_EQ(a.cols(), 200u);
  const Matrix b = lstm_layer_forward(a, net.layers[1], true);
  EXPECT_EQ(b.rows(), 9840u);
  EXPECT_EQ(b.cols(), 100u);
  const Matrix c = lstm_layer_forward(b, net.layers[2], false);
  EXPECT_EQ(c.rows(), 1u);
  EXPECT_EQ(c.cols(), 50u);
  for (double v : c.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Stack, ShapeWalkthroughForPaperProfile) {
  const std::string text = shape_walkthrough(StackSpec::paper());
  EXPECT_NE(text.find("(9840, 200) → (9840, 100) → (50) → (32) → (1)"), std::string::npos) << text;
  EXPECT_NE(text.find("(9840, 66)"), std::string::npos);
  StackParams net(StackSpec::paper());
  EXPECT_NE(text.find("total parameters: " + std::to_string(net.parameter_count())), std::string::npos);
}

TEST(Stack, ZeroParametersGiveOneHalf) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  Rng rng(1);
  const Matrix rows = random_rows(rng, 6, 4, 5.0);
  EXPECT_EQ(predict_window(net, spec, rows, full_window(6)), 0.5);
}

TEST(Stack, EvalIsBitIdenticalAcrossCalls) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  initialize(net, 17);
  Rng rng(2);
  const Matrix rows = random_rows(rng, 6, 4);
  const double a = predict_window(net, spec, rows, full_window(6));
  const double b = predict_window(net, spec, rows, full_window(6));
  EXPECT_EQ(a, b);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
}

TEST(Stack, TrainDropoutRateIsNearThirtyPercent) {
  StackSpec spec = mini_spec();
  spec.head_units = 32;
  StackParams net(spec);
  initialize(net, 3);
  Rng rng(4);
  const Matrix rows = random_rows(rng, 6, 4);
  Rng dropout(99);
  ForwardTrace trace;
  std::size_t zeros = 0;
  const std::size_t draws = 10000;
  for (std::size_t d = 0; d < draws; ++d) {
    stack_forward(net, spec, StackInput{rows, full_window(6)}, Mode::Train, &dropout, &trace, 6);
    for (double m : trace.mask) {
      zeros += m == 0.0;
      if (m != 0.0) EXPECT_DOUBLE_EQ(m, 1.0 / 0.7);
    }
  }
  const double n = static_cast<double>(draws * 32);
  const double z = (zeros - 0.3 * n) / std::sqrt(n * 0.3 * 0.7);
  EXPECT_LT(std::abs(z), 3.29) << zeros;  // two-sided p > 0.001
}

TEST(Stack, FullWindowGradientCheck) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  initialize(net, 5);
  Rng rng(6);
  randomize(net.params(), rng, 0.7);
  const Matrix rows = random_rows(rng, 6, 4);
  const int y = 1;
  auto loss = [&] { return bce_loss(predict_window(net, spec, rows, full_window(6)), y); };
  ParamList params = net.params();
  zero_grads(params);
  ForwardTrace trace;
  const double p = stack_forward(net, spec, StackInput{rows, full_window(6)}, Mode::Eval, nullptr, &trace, 6);
  stack_backward(net, trace, p - y);
  const auto r = grad_check(loss, params);
  for (const auto& [name, err] : r.per_param) EXPECT_LT(err, 1e-5) << name;
}

TEST(Stack, GradientCheckWithFixedDropoutMask) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  initialize(net, 8);
  Rng rng(7);
  const Matrix rows = random_rows(rng, 6, 4);
  auto forward = [&](ForwardTrace* t) {
    Rng dropout(1234);
    return stack_forward(net, spec, StackInput{rows, full_window(6)}, Mode::Train, &dropout, t, 6);
  };
  auto loss = [&] { return bce_loss(forward(nullptr), 0); };
  ParamList params = net.params();
  zero_grads(params);
  ForwardTrace trace;
  const double p = forward(&trace);
  stack_backward(net, trace, p - 0);
  EXPECT_LT(grad_check(loss, params).max_error, 1e-5);
}

TEST(Stack, ZeroIncomingGradientGivesZeroGradients) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  initialize(net, 9);
  Rng rng(1);
  const Matrix rows = random_rows(rng, 6, 4);
  ForwardTrace trace;
  stack_forward(net, spec, StackInput{rows, full_window(6)}, Mode::Eval, nullptr, &trace, 6);
  stack_backward(net, trace, 0.0);
  for (const ParamTensor* p : std::as_const(net).params()) {
    for (double g : p->grad.values()) EXPECT_EQ(g, 0.0) << p->name;
  }
}

TEST(Stack, TruncatedMatchesFullWhenEarlyInputsAreZero) {
  StackSpec spec = mini_spec();
  spec.seq_len = 10;
  StackParams full(spec);
  initialize(full, 10);
  StackParams trunc = full;
  Rng rng(3);
  Matrix rows = random_rows(rng, 10, 4);
  for (std::size_t r = 0; r < 6; ++r) {
    for (double& v : rows.row(r)) v = 0.0;
  }
  ForwardTrace t1, t2;
  const double p1 = stack_forward(full, spec, StackInput{rows, full_window(10)}, Mode::Eval, nullptr, &t1, 10);
  const double p2 = stack_forward(trunc, spec, StackInput{rows, full_window(10)}, Mode::Eval, nullptr, &t2, 4);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(t2.kept, 4u);
  stack_backward(full, t1, p1 - 1);
  stack_backward(trunc, t2, p2 - 1);
  // Input-weight blocks of the first layer only see x_t, which is zero before the kept span.
  const auto& a = full.layers[0];
  const auto& b = trunc.layers[0];
  const std::size_t H = a.hidden;
  std::size_t compared = 0;
  for (auto [pa, pb] : {std::pair{&a.wf, &b.wf}, {&a.wi, &b.wi}, {&a.wc, &b.wc}, {&a.wo, &b.wo}}) {
    for (std::size_t r = 0; r < pa->grad.rows(); ++r) {
      for (std::size_t c = H; c < pa->grad.cols(); ++c) {
        EXPECT_NEAR(pa->grad(r, c), pb->grad(r, c), 1e-5);
        ++compared;
      }
    }
  }
  EXPECT_EQ(compared, 4u * 3u * 4u);
  // Head gradients do not depend on truncation at all.
  EXPECT_EQ(full.dense_w.grad, trunc.dense_w.grad);
}

TEST(Stack, BackwardWithoutTraceIsError) {
  StackParams net(mini_spec());
  ForwardTrace empty;
  EXPECT_THROW(stack_backward(net, empty, 0.1), ValidationError);
}

TEST(Stack, SpecMismatchIsError) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  StackSpec other = spec;
  other.lstm_units = {3, 3};
  const Matrix rows(6, 4);
  EXPECT_THROW(predict_window(net, other, rows, full_window(6)), ShapeError);
  EXPECT_THROW(predict_window(net, spec, rows, full_window(5)), ShapeError);
  EXPECT_THROW(predict_window(net, spec, Matrix(6, 5), full_window(6)), ShapeError);
}

TEST(Train, ZeroEpochsLeavesParametersUntouched) {
  const StackSpec spec = mini_spec();
  StackParams net(spec);
  initialize(net, 11);
  const StackParams before = net;
  Rng rng(1);
  const Matrix rows = random_rows(rng, 20, 4);
  const auto windows = build_windows(20, 6, 1).windows;
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto result = train_stack(net, spec, rows, windows, cfg);
  EXPECT_TRUE(result.curve.empty());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    EXPECT_EQ(net.params()[i]->value, std::as_const(before).params()[i]->value);
  }
}

namespace {

struct ToyTask {
  Matrix rows;
  std::vector<SequenceWindow> windows;
};

ToyTask toy_task(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ToyTask t{random_rows(rng, n, 4), {}};
  t.windows = build_windows(n, 6, 1).windows;
  for (auto& w : t.windows) w.target_label = t.rows(w.target - 3, 0) > 0 ? 1 : 0;
  return t;
}

}  // namespace

TEST(Train, SameSeedSameParameters) {
  const StackSpec spec = mini_spec();
  const ToyTask task = toy_task(80, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr = 0.01;
  cfg.val_fraction = 0.2;
  StackParams a(spec), b(spec);
  initialize(a, 1);
  initialize(b, 1);
  const auto ra = train_stack(a, spec, task.rows, task.windows, cfg);
  const auto rb = train_stack(b, spec, task.rows, task.windows, cfg);
  ASSERT_EQ(ra.curve.size(), 3u);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i]->value, b.params()[i]->value);
  }
  EXPECT_EQ(ra.curve.back().train_loss, rb.curve.back().train_loss);
  EXPECT_TRUE(ra.best_epoch.has_value());
  EXPECT_TRUE(ra.curve[0].val_loss.has_value());
}

TEST(Train, LossDecreasesOnLearnableToyTask) {
  StackSpec spec = mini_spec();
  spec.lstm_units = {8, 4};
  spec.head_units = 8;
  spec.dropout = 0.0;
  const ToyTask task = toy_task(300, 12);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.lr = 0.01;
  StackParams net(spec);
  initialize(net, 2);
  const auto r = train_stack(net, spec, task.rows, task.windows, cfg);
  EXPECT_LT(r.curve.back().train_loss, 0.6 * r.curve.front().train_loss);
}

TEST(Train, CallbackCanStopEarly) {
  const StackSpec spec = mini_spec();
  const ToyTask task = toy_task(40, 4);
  TrainConfig cfg;
  cfg.epochs = 50;
  StackParams net(spec);
  initialize(net, 1);
  const auto r = train_stack(net, spec, task.rows, task.windows, cfg,
                             [](const EpochStats& s) { return s.epoch == 2; });
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.curve.size(), 2u);
}

TEST(Train, NonFiniteLossAborts) {
  const StackSpec spec = mini_spec();
  ToyTask task = toy_task(40, 4);
  task.rows(0, 0) = std::nan("");
  TrainConfig cfg;
  cfg.epochs = 1;
  StackParams net(spec);
  initialize(net, 1);
  EXPECT_THROW(train_stack(net, spec, task.rows, task.windows, cfg), NumericError);
}

TEST(Train, RejectsBadConfig) {
  const StackSpec spec = mini_spec();
  const ToyTask task = toy_task(40, 4);
  StackParams net(spec);
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(train_stack(net, spec, task.rows, task.windows, cfg), ValidationError);
  cfg = TrainConfig{};
  EXPECT_THROW(train_stack(net, spec, task.rows, {}, cfg), ValidationError);
}
