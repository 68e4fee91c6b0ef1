#include "recurrent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "error.hpp"

namespace hoopseq {

LstmLayerParams::LstmLayerParams(std::size_t input_, std::size_t hidden_, const std::string& prefix)
    : input(input_),
      hidden(hidden_),
      wf(prefix + ".W_f", hidden_, hidden_ + input_),
      wi(prefix + ".W_i", hidden_, hidden_ + input_),
      wc(prefix + ".W_c", hidden_, hidden_ + input_),
      wo(prefix + ".W_o", hidden_, hidden_ + input_),
      bf(prefix + ".b_f", hidden_, 1),
      bi(prefix + ".b_i", hidden_, 1),
      bc(prefix + ".b_c", hidden_, 1),
      bo(prefix + ".b_o", hidden_, 1) {
  if (input_ == 0 || hidden_ == 0) throw ShapeError("LSTM layer needs positive input and hidden sizes");
}

ParamList LstmLayerParams::params() { return {&wf, &wi, &wc, &wo, &bf, &bi, &bc, &bo}; }

LstmState lstm_cell_forward(std::span<const double> x, const LstmState& prev,
                            const LstmLayerParams& p, LstmCellCache* cache) {
  const std::size_t H = p.hidden;
  if (x.size() != p.input) {
    throw ShapeError("LSTM input has " + std::to_string(x.size()) + " values, layer expects " +
                     std::to_string(p.input));
  }
  if (prev.h.size() != H || prev.c.size() != H) {
    throw ShapeError("LSTM state has size " + std::to_string(prev.h.size()) + "/" +
                     std::to_string(prev.c.size()) + ", layer hidden size is " + std::to_string(H));
  }
  std::vector<double> z(H + p.input);
  std::copy(prev.h.begin(), prev.h.end(), z.begin());
  std::copy(x.begin(), x.end(), z.begin() + static_cast<std::ptrdiff_t>(H));

  std::vector<double> f(p.bf.value.values().begin(), p.bf.value.values().end());
  std::vector<double> i(p.bi.value.values().begin(), p.bi.value.values().end());
  std::vector<double> g(p.bc.value.values().begin(), p.bc.value.values().end());
  std::vector<double> o(p.bo.value.values().begin(), p.bo.value.values().end());
  gemv_accumulate(p.wf.value, z, f);
  gemv_accumulate(p.wi.value, z, i);
  gemv_accumulate(p.wc.value, z, g);
  gemv_accumulate(p.wo.value, z, o);

  LstmState next{std::vector<double>(H), std::vector<double>(H)};
  std::vector<double> tc(H);
  for (std::size_t k = 0; k < H; ++k) {
    f[k] = sigmoid(f[k]);
    i[k] = sigmoid(i[k]);
    g[k] = tanh_act(g[k]);
    o[k] = sigmoid(o[k]);
    next.c[k] = f[k] * prev.c[k] + i[k] * g[k];
    tc[k] = tanh_act(next.c[k]);
    next.h[k] = o[k] * tc[k];
  }
  if (cache != nullptr) {
    cache->z = std::move(z);
    cache->c_prev = prev.c;
    cache->f = std::move(f);
    cache->i = std::move(i);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c = next.c;
    cache->tanh_c = std::move(tc);
    cache->h = next.h;
  }
  return next;
}

void lstm_cell_backward(const LstmCellCache& cache, LstmLayerParams& p, std::span<const double> dh,
                        std::span<const double> dc, std::span<double> dh_prev,
                        std::span<double> dc_prev, std::span<double> dx) {
  const std::size_t H = p.hidden;
  if (cache.f.size() != H) throw ShapeError("LSTM cache does not match layer");
  std::vector<double> df(H), di(H), dg(H), dout(H);
  for (std::size_t k = 0; k < H; ++k) {
    const double o = cache.o[k];
    const double tc = cache.tanh_c[k];
    const double dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
    const double f = cache.f[k];
    const double i = cache.i[k];
    const double g = cache.g[k];
    dout[k] = dh[k] * tc * o * (1.0 - o);
    df[k] = dct * cache.c_prev[k] * f * (1.0 - f);
    di[k] = dct * g * i * (1.0 - i);
    dg[k] = dct * i * (1.0 - g * g);
    dc_prev[k] = dct * f;
  }
  outer_accumulate(p.wf.grad, df, cache.z);
  outer_accumulate(p.wi.grad, di, cache.z);
  outer_accumulate(p.wc.grad, dg, cache.z);
  outer_accumulate(p.wo.grad, dout, cache.z);
  for (std::size_t k = 0; k < H; ++k) {
    p.bf.grad[k] += df[k];
    p.bi.grad[k] += di[k];
    p.bc.grad[k] += dg[k];
    p.bo.grad[k] += dout[k];
  }
  std::vector<double> dz(H + p.input, 0.0);
  gemv_transpose_accumulate(p.wf.value, df, dz);
  gemv_transpose_accumulate(p.wi.value, di, dz);
  gemv_transpose_accumulate(p.wc.value, dg, dz);
  gemv_transpose_accumulate(p.wo.value, dout, dz);
  std::copy(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(H), dh_prev.begin());
  if (!dx.empty()) std::copy(dz.begin() + static_cast<std::ptrdiff_t>(H), dz.end(), dx.begin());
}

Matrix lstm_layer_forward(const Matrix& sequence, const LstmLayerParams& p, bool return_sequences) {
  if (sequence.rows() == 0) throw ValidationError("LSTM layer received an empty sequence");
  LstmState state = LstmState::zeros(p.hidden);
  Matrix out(return_sequences ? sequence.rows() : 1, p.hidden);
  for (std::size_t t = 0; t < sequence.rows(); ++t) {
    state = lstm_cell_forward(sequence.row(t), state, p);
    if (return_sequences) std::copy(state.h.begin(), state.h.end(), out.row(t).begin());
  }
  if (!return_sequences) std::copy(state.h.begin(), state.h.end(), out.row(0).begin());
  return out;
}

StackSpec StackSpec::desk(std::size_t input_features) {
  StackSpec s;
  s.input_features = input_features;
  s.seq_len = 410;
  s.lstm_units = {50, 25, 12};
  return s;
}

StackSpec StackSpec::paper(std::size_t input_features) {
  StackSpec s;
  s.input_features = input_features;
  s.seq_len = 9840;
  s.lstm_units = {200, 100, 50};
  return s;
}

void StackSpec::validate() const {
  if (input_features == 0) throw ShapeError("stack needs at least one input feature");
  if (seq_len == 0) throw ValidationError("sequence length must be at least 1");
  if (lstm_units.empty()) throw ShapeError("stack needs at least one LSTM layer");
  for (std::size_t u : lstm_units) {
    if (u == 0) throw ShapeError("LSTM layer with zero units");
  }
  if (head_units == 0) throw ShapeError("dense head needs at least one unit");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout rate must be in [0, 1)");
}

StackParams::StackParams(const StackSpec& spec) {
  spec.validate();
  std::size_t in = spec.input_features;
  for (std::size_t l = 0; l < spec.lstm_units.size(); ++l) {
    layers.emplace_back(in, spec.lstm_units[l], "lstm_" + std::to_string(l + 1));
    in = spec.lstm_units[l];
  }
  dense_w = ParamTensor("dense.W", spec.head_units, in);
  dense_b = ParamTensor("dense.b", spec.head_units, 1);
  out_w = ParamTensor("output.W", 1, spec.head_units);
  out_b = ParamTensor("output.b", 1, 1);
}

ParamList StackParams::params() {
  ParamList all;
  for (auto& l : layers) {
    auto p = l.params();
    all.insert(all.end(), p.begin(), p.end());
  }
  all.insert(all.end(), {&dense_w, &dense_b, &out_w, &out_b});
  return all;
}

std::vector<const ParamTensor*> StackParams::params() const {
  auto mut = const_cast<StackParams*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::size_t StackParams::parameter_count() const {
  std::size_t n = 0;
  for (const ParamTensor* p : params()) n += p->value.size();
  return n;
}

namespace {

void fill_uniform(Matrix& m, Rng& rng, double limit, std::size_t col_begin = 0,
                  std::size_t col_end = SIZE_MAX) {
  col_end = std::min(col_end, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = col_begin; c < col_end; ++c) m(r, c) = rng.uniform(-limit, limit);
  }
}

}  // namespace

void initialize(StackParams& net, std::uint64_t seed) {
  const Rng root(seed);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    LstmLayerParams& p = net.layers[l];
    Rng rng = root.split(l + 1);
    const double xavier = std::sqrt(6.0 / static_cast<double>(p.input + p.hidden));
    const double recurrent = 1.0 / std::sqrt(static_cast<double>(p.hidden));
    for (ParamTensor* w : {&p.wf, &p.wi, &p.wc, &p.wo}) {
      fill_uniform(w->value, rng, recurrent, 0, p.hidden);
      fill_uniform(w->value, rng, xavier, p.hidden);
    }
    for (ParamTensor* b : {&p.bf, &p.bi, &p.bc, &p.bo}) b->value.fill(0.0);
    p.bf.value.fill(1.0);
  }
  Rng head = root.split(1000);
  fill_uniform(net.dense_w.value, head,
               std::sqrt(6.0 / static_cast<double>(net.dense_w.value.rows() + net.dense_w.value.cols())));
  fill_uniform(net.out_w.value, head,
               std::sqrt(6.0 / static_cast<double>(net.out_w.value.rows() + net.out_w.value.cols())));
  net.dense_b.value.fill(0.0);
  net.out_b.value.fill(0.0);
  zero_grads(net.params());
}

namespace {

void check_compatible(const StackParams& net, const StackSpec& spec, const StackInput& input) {
  if (net.layers.size() != spec.lstm_units.size()) {
    throw ShapeError("parameters have " + std::to_string(net.layers.size()) +
                     " LSTM layers, spec has " + std::to_string(spec.lstm_units.size()));
  }
  std::size_t in = spec.input_features;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].input != in || net.layers[l].hidden != spec.lstm_units[l]) {
      throw ShapeError("LSTM layer " + std::to_string(l + 1) + " parameters do not match spec");
    }
    in = spec.lstm_units[l];
  }
  if (net.dense_w.value.rows() != spec.head_units || net.dense_w.value.cols() != in) {
    throw ShapeError("dense head parameters do not match spec");
  }
  if (input.rows.cols() != spec.input_features) {
    throw ShapeError("window rows have " + std::to_string(input.rows.cols()) +
                     " features, spec expects " + std::to_string(spec.input_features));
  }
  if (input.window.length != spec.seq_len) {
    throw ShapeError("window length " + std::to_string(input.window.length) +
                     " does not match sequence length " + std::to_string(spec.seq_len));
  }
  const std::size_t last = input.window.row_at(input.window.length - 1);
  if (last >= input.rows.rows() || input.window.start >= input.rows.rows()) {
    throw ShapeError("window extends past the available rows");
  }
}

}  // namespace

double stack_forward(const StackParams& net, const StackSpec& spec, const StackInput& input,
                     Mode mode, Rng* dropout_rng, ForwardTrace* trace, std::size_t bptt) {
  check_compatible(net, spec, input);
  const std::size_t L = spec.seq_len;
  const std::size_t kept = trace ? (bptt == 0 ? L : std::min(bptt, L)) : 0;
  if (trace) {
    *trace = ForwardTrace{};
    trace->seq_len = L;
    trace->kept = kept;
    trace->steps.assign(net.layers.size(), std::vector<LstmCellCache>(kept));
  }

  std::vector<LstmState> states;
  states.reserve(net.layers.size());
  for (const auto& l : net.layers) states.push_back(LstmState::zeros(l.hidden));

  for (std::size_t t = 0; t < L; ++t) {
    std::span<const double> x = input.rows.row(input.window.row_at(t));
    const bool cache_step = trace && t + kept >= L;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      LstmCellCache* cache = cache_step ? &trace->steps[l][t + kept - L] : nullptr;
      states[l] = lstm_cell_forward(x, states[l], net.layers[l], cache);
      x = states[l].h;
    }
  }

  const std::vector<double>& h = states.back().h;
  const std::size_t D = spec.head_units;
  std::vector<double> pre(net.dense_b.value.values().begin(), net.dense_b.value.values().end());
  gemv_accumulate(net.dense_w.value, h, pre);
  std::vector<double> act(D);
  for (std::size_t k = 0; k < D; ++k) act[k] = relu(pre[k]);

  std::vector<double> mask(D, 1.0);
  if (mode == Mode::Train && spec.dropout > 0.0) {
    if (dropout_rng == nullptr) throw ValidationError("train-mode forward needs a dropout RNG");
    const double keep_scale = 1.0 / (1.0 - spec.dropout);
    for (double& m : mask) m = dropout_rng->bernoulli(spec.dropout) ? 0.0 : keep_scale;
  }
  std::vector<double> head_in(D);
  for (std::size_t k = 0; k < D; ++k) head_in[k] = act[k] * mask[k];

  double logit = net.out_b.value[0];
  for (std::size_t k = 0; k < D; ++k) logit += net.out_w.value[k] * head_in[k];
  const double prob = sigmoid(logit);

  if (trace) {
    trace->last_h = h;
    trace->dense_pre = std::move(pre);
    trace->dense_act = std::move(act);
    trace->mask = std::move(mask);
    trace->head_in = std::move(head_in);
    trace->logit = logit;
    trace->prob = prob;
    trace->ready = true;
  }
  return prob;
}

void stack_backward(StackParams& net, const ForwardTrace& trace, double dlogit) {
  if (!trace.ready) throw ValidationError("stack_backward called without a forward trace");
  if (trace.steps.size() != net.layers.size()) throw ShapeError("forward trace does not match network");
  const std::size_t D = trace.head_in.size();

  net.out_b.grad[0] += dlogit;
  std::vector<double> dact(D);
  for (std::size_t k = 0; k < D; ++k) {
    net.out_w.grad[k] += dlogit * trace.head_in[k];
    dact[k] = dlogit * net.out_w.value[k] * trace.mask[k] * (trace.dense_pre[k] > 0.0 ? 1.0 : 0.0);
  }
  outer_accumulate(net.dense_w.grad, dact, trace.last_h);
  for (std::size_t k = 0; k < D; ++k) net.dense_b.grad[k] += dact[k];
  std::vector<double> dh_top(net.layers.back().hidden, 0.0);
  gemv_transpose_accumulate(net.dense_w.value, dact, dh_top);

  const std::size_t layers = net.layers.size();
  std::vector<std::vector<double>> dh_rec(layers), dc_rec(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    dh_rec[l].assign(net.layers[l].hidden, 0.0);
    dc_rec[l].assign(net.layers[l].hidden, 0.0);
  }
  std::vector<double> dh(0), dh_prev, dc_prev, dx;
  for (std::size_t k = trace.kept; k-- > 0;) {
    std::vector<double> from_above;  // gradient w.r.t. this layer's h_t from the layer above
    for (std::size_t l = layers; l-- > 0;) {
      LstmLayerParams& p = net.layers[l];
      dh = dh_rec[l];
      if (l + 1 == layers) {
        if (k + 1 == trace.kept) {
          for (std::size_t j = 0; j < dh.size(); ++j) dh[j] += dh_top[j];
        }
      } else {
        for (std::size_t j = 0; j < dh.size(); ++j) dh[j] += from_above[j];
      }
      dh_prev.assign(p.hidden, 0.0);
      dc_prev.assign(p.hidden, 0.0);
      dx.assign(p.input, 0.0);
      lstm_cell_backward(trace.steps[l][k], p, dh, dc_rec[l], dh_prev, dc_prev,
                         l == 0 ? std::span<double>() : std::span<double>(dx));
      dh_rec[l] = dh_prev;
      dc_rec[l] = dc_prev;
      from_above = dx;
    }
  }
}

double predict_window(const StackParams& net, const StackSpec& spec, const Matrix& rows,
                      const SequenceWindow& window) {
  return stack_forward(net, spec, StackInput{rows, window}, Mode::Eval);
}

namespace {

double mean_eval_loss(const StackParams& net, const StackSpec& spec, const Matrix& rows,
                      std::span<const SequenceWindow> windows) {
  double total = 0.0;
  for (const auto& w : windows) total += bce_loss(predict_window(net, spec, rows, w), w.target_label);
  return total / static_cast<double>(windows.size());
}

std::vector<Matrix> snapshot(const StackParams& net) {
  std::vector<Matrix> out;
  for (const ParamTensor* p : net.params()) out.push_back(p->value);
  return out;
}

void restore(StackParams& net, const std::vector<Matrix>& values) {
  auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainResult train_stack(StackParams& net, const StackSpec& spec, const Matrix& rows,
                        std::span<const SequenceWindow> windows, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
  if (windows.empty()) throw ValidationError("training split has no windows");
  if (config.batch_size == 0) throw ValidationError("batch size must be at least 1");
  if (config.bptt == 0) throw ValidationError("BPTT truncation length must be at least 1");
  if (!(config.lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
    throw ValidationError("validation fraction must be in [0, 1)");
  }
  std::size_t n_val = static_cast<std::size_t>(std::ceil(config.val_fraction * windows.size()));
  if (config.val_fraction > 0.0 && n_val >= windows.size()) {
    throw ValidationError("validation fraction leaves no training windows");
  }
  const auto train = windows.first(windows.size() - n_val);
  const auto val = windows.subspan(windows.size() - n_val);

  ParamList params = net.params();
  zero_grads(params);
  AdamState adam(AdamConfig{.lr = config.lr});
  const Rng root(config.seed);
  ForwardTrace trace;
  TrainResult result;
  std::optional<double> best_val;
  std::vector<Matrix> best;

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler = root.split(2 * epoch + 1);
    shuffler.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      double batch_loss = 0.0;
      for (std::size_t s = b0; s < b1; ++s) {
        const SequenceWindow& w = train[order[s]];
        Rng dropout = root.split((static_cast<std::uint64_t>(epoch + 1) << 32) | s);
        const double p = stack_forward(net, spec, StackInput{rows, w}, Mode::Train, &dropout, &trace,
                                       config.bptt);
        batch_loss += bce_loss(p, w.target_label);
        stack_backward(net, trace, p - w.target_label);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training loss became non-finite in epoch " + std::to_string(epoch + 1) +
                           "; lower the learning rate or tighten gradient clipping");
      }
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      for (ParamTensor* p : params) {
        for (double& g : p->grad.values()) g *= scale;
      }
      if (!std::isfinite(global_grad_norm(params))) {
        throw NumericError("gradient became non-finite in epoch " + std::to_string(epoch + 1) +
                           "; lower the learning rate or tighten gradient clipping");
      }
      clip_global_norm(params, config.clip_norm);
      adam.update(params);
      epoch_loss += batch_loss;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = epoch_loss / static_cast<double>(train.size());
    if (!val.empty()) {
      stats.val_loss = mean_eval_loss(net, spec, rows, val);
      if (!std::isfinite(*stats.val_loss)) throw NumericError("validation loss became non-finite");
      if (!best_val || *stats.val_loss < *best_val) {
        best_val = stats.val_loss;
        best = snapshot(net);
        result.best_epoch = stats.epoch;
      }
    }
    result.curve.push_back(stats);
    if (on_epoch && on_epoch(stats)) {
      result.stopped_early = true;
      break;
    }
  }
  if (!best.empty()) restore(net, best);
  return result;
}

std::string shape_walkthrough(const StackSpec& spec) {
  spec.validate();
  std::ostringstream out;
  const std::string L = std::to_string(spec.seq_len);
  auto line = [&](const std::string& name, const std::string& shape, const std::string& detail,
                  std::size_t params) {
    out << name << std::string(name.size() < 12 ? 12 - name.size() : 1, ' ') << shape
        << std::string(shape.size() < 14 ? 14 - shape.size() : 1, ' ') << detail;
    if (params > 0) out << "  params=" << params;
    out << '\n';
  };
  std::size_t total = 0;
  line("input", "(" + L + ", " + std::to_string(spec.input_features) + ")", "", 0);
  std::size_t in = spec.input_features;
  std::string chain;
  for (std::size_t l = 0; l < spec.lstm_units.size(); ++l) {
    const std::size_t h = spec.lstm_units[l];
    const bool seq = l + 1 < spec.lstm_units.size();
    const std::size_t n = 4 * (h * (h + in) + h);
    total += n;
    const std::string shape = seq ? "(" + L + ", " + std::to_string(h) + ")" : "(" + std::to_string(h) + ")";
    line("lstm_" + std::to_string(l + 1), shape,
         seq ? "return_sequences=true" : "return_sequences=false", n);
    chain += (chain.empty() ? "" : " → ") + shape;
    in = h;
  }
  const std::size_t dense = spec.head_units * in + spec.head_units;
  const std::string head = "(" + std::to_string(spec.head_units) + ")";
  line("dense", head, "relu", dense);
  line("dropout", head, "rate " + format_double(spec.dropout), 0);
  line("output", "(1)", "sigmoid", spec.head_units + 1);
  total += dense + spec.head_units + 1;
  out << chain << " → " << head << " → (1)\n";
  out << "total parameters: " << total << '\n';
  return out.str();
}

}  // namespace hoopseq
