#include "pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace hoopseq {

using ojson = nlohmann::ordered_json;

ModelKind parse_model_kind(std::string_view name) {
  if (name == "lstm") return ModelKind::Lstm;
  if (name == "logreg") return ModelKind::LogReg;
  if (name == "forest") return ModelKind::Forest;
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "cnn") return ModelKind::Cnn;
  throw ValidationError("unknown model '" + std::string(name) + "' (expected lstm, logreg, forest, mlp or cnn)");
}

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Lstm: return "lstm";
    case ModelKind::LogReg: return "logreg";
    case ModelKind::Forest: return "forest";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Cnn: return "cnn";
  }
  return "lstm";
}

LagMode parse_lag_mode(std::string_view name) {
  if (name == "cross_season") return LagMode::CrossSeason;
  if (name == "within_season") return LagMode::WithinSeason;
  if (name == "pre_lagged") return LagMode::PreLagged;
  throw ValidationError("unknown lag mode '" + std::string(name) +
                        "' (expected cross_season, within_season or pre_lagged)");
}

std::string_view lag_mode_name(LagMode mode) {
  switch (mode) {
    case LagMode::CrossSeason: return "cross_season";
    case LagMode::WithinSeason: return "within_season";
    case LagMode::PreLagged: return "pre_lagged";
  }
  return "cross_season";
}

// ---------------------------------------------------------------- JSON field readers

namespace {

// Values may arrive as JSON numbers/booleans or, from environment overrides, as strings.
template <typename T>
T number_from(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    T out{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError("config key '" + key + "' expects a number, got '" + s + "'");
    }
    return out;
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (v.is_number()) return v.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (v.is_number_unsigned()) return v.get<T>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
  } else {
    if (v.is_number_integer()) return v.get<T>();
  }
  throw ValidationError("config key '" + key + "' has the wrong type: " + v.dump());
}

bool bool_from(const nlohmann::json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  if (v.is_number_integer()) return v.get<std::int64_t>() != 0;
  throw ValidationError("config key '" + key + "' expects true or false, got " + v.dump());
}

std::string string_from(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw ValidationError("config key '" + key + "' expects a string, got " + v.dump());
}

std::vector<std::size_t> units_from(const nlohmann::json& v, const std::string& key) {
  std::vector<std::size_t> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(number_from<std::size_t>(e, key));
    return out;
  }
  if (v.is_string()) {
    std::stringstream ss(v.get<std::string>());
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(number_from<std::size_t>(nlohmann::json(part), key));
    return out;
  }
  throw ValidationError("config key '" + key + "' expects a list such as [50, 25, 12] or \"50,25,12\"");
}

ojson optional_json(const auto& v) { return v ? ojson(*v) : ojson(nullptr); }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return Rng(seed).split(tag).next(); }

}  // namespace

// ---------------------------------------------------------------- RunConfig

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (v.is_null()) continue;
    if (key == "model") c.model = parse_model_kind(string_from(v, key));
    else if (key == "profile") c.profile = string_from(v, key);
    else if (key == "seq_len") c.seq_len = number_from<std::size_t>(v, key);
    else if (key == "stride") c.stride = number_from<std::size_t>(v, key);
    else if (key == "include_target_row") c.include_target_row = bool_from(v, key);
    else if (key == "epochs") c.epochs = number_from<std::size_t>(v, key);
    else if (key == "batch_size") c.batch_size = number_from<std::size_t>(v, key);
    else if (key == "lr") c.lr = number_from<double>(v, key);
    else if (key == "bptt") c.bptt = number_from<std::size_t>(v, key);
    else if (key == "clip") c.clip = number_from<double>(v, key);
    else if (key == "val_fraction") c.val_fraction = number_from<double>(v, key);
    else if (key == "boundary_season") c.boundary_season = string_from(v, key);
    else if (key == "boundary_index") c.boundary_index = number_from<std::int64_t>(v, key);
    else if (key == "seed") c.seed = number_from<std::uint64_t>(v, key);
    else if (key == "lstm_units") c.lstm_units = units_from(v, key);
    else if (key == "head_units") c.head_units = number_from<std::size_t>(v, key);
    else if (key == "dropout") c.dropout = number_from<double>(v, key);
    else if (key == "trees") c.trees = number_from<std::size_t>(v, key);
    else if (key == "max_depth") c.max_depth = number_from<int>(v, key);
    else if (key == "logreg_c") c.logreg_c = number_from<double>(v, key);
    else throw ValidationError("unknown config key '" + key + "'");
  }
  return c;
}

RunConfig RunConfig::resolved() const {
  if (profile != "desk" && profile != "paper") {
    throw ValidationError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  RunConfig r = *this;
  const StackSpec base = profile == "paper" ? StackSpec::paper() : StackSpec::desk();
  if (!r.seq_len) r.seq_len = base.seq_len;
  if (r.lstm_units.empty()) r.lstm_units = base.lstm_units;
  if (!r.head_units) r.head_units = base.head_units;
  if (!r.dropout) r.dropout = base.dropout;
  if (!r.epochs) {
    switch (model) {
      case ModelKind::Lstm: r.epochs = TrainConfig{}.epochs; break;
      case ModelKind::LogReg: r.epochs = LogRegConfig{}.epochs; break;
      case ModelKind::Forest: r.epochs = 0; break;
      case ModelKind::Mlp:
      case ModelKind::Cnn: r.epochs = NetTrainConfig{}.epochs; break;
    }
  }
  if (!r.lr) {
    switch (model) {
      case ModelKind::LogReg: r.lr = LogRegConfig{}.lr; break;
      case ModelKind::Forest: r.lr = 0.0; break;
      default: r.lr = TrainConfig{}.lr; break;
    }
  }
  return r;
}

void RunConfig::validate() const {
  if (!seq_len || !epochs || !lr || !head_units || !dropout) throw ValidationError("config is not resolved");
  if (*seq_len == 0) throw ValidationError("seq_len must be at least 1");
  if (stride == 0) throw ValidationError("stride must be at least 1");
  if (batch_size == 0) throw ValidationError("batch_size must be at least 1");
  if (model == ModelKind::Mlp && batch_size < 2) {
    throw ValidationError("batch_size must be at least 2 for the MLP (batch normalization)");
  }
  if (model != ModelKind::Forest && !(*lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(clip > 0.0)) throw ValidationError("clip must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must be in [0, 1)");
  if (boundary_season && boundary_index) {
    throw ValidationError("give either boundary_season or boundary_index, not both");
  }
  if (trees == 0) throw ValidationError("trees must be at least 1");
  if (max_depth < -1) throw ValidationError("max_depth must be -1 (unlimited) or non-negative");
  if (!(logreg_c > 0.0)) throw ValidationError("logreg_c must be positive");
  stack_spec().validate();
}

ojson RunConfig::to_json() const {
  ojson j;
  j["model"] = model_kind_name(model);
  j["profile"] = profile;
  j["seq_len"] = optional_json(seq_len);
  j["stride"] = stride;
  j["include_target_row"] = include_target_row;
  j["epochs"] = optional_json(epochs);
  j["batch_size"] = batch_size;
  j["lr"] = optional_json(lr);
  j["bptt"] = bptt;
  j["clip"] = clip;
  j["val_fraction"] = val_fraction;
  j["boundary_season"] = optional_json(boundary_season);
  j["boundary_index"] = optional_json(boundary_index);
  j["seed"] = seed;
  j["lstm_units"] = lstm_units;
  j["head_units"] = optional_json(head_units);
  j["dropout"] = optional_json(dropout);
  j["trees"] = trees;
  j["max_depth"] = max_depth;
  j["logreg_c"] = logreg_c;
  return j;
}

StackSpec RunConfig::stack_spec() const {
  StackSpec s;
  s.input_features = kMatchupFeatureCount;
  s.seq_len = seq_len.value_or(0);
  s.lstm_units = lstm_units;
  s.head_units = head_units.value_or(0);
  s.dropout = dropout.value_or(0.0);
  return s;
}

// ---------------------------------------------------------------- datasets

std::string dataset_digest(const MatchupTable& table) {
  std::uint64_t h = fnv1a("matchups");
  for (const auto& e : table.examples) {
    h = fnv1a(e.game_id, h);
    h = fnv1a(e.label ? "1" : "0", h);
  }
  const auto values = table.features.values();
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double)), h);
  return hex64(h);
}

ojson LoadedDataset::identity() const {
  return {{"digest", digest}, {"examples", table.size()}, {"lag_mode", lag_mode_name(lag_mode)}};
}

ojson LoadedDataset::summary() const {
  ojson rejects = ojson::array();
  for (const auto& r : games.rejects) rejects.push_back({{"line", r.line}, {"message", r.message}});
  ojson j;
  j["games"] = games.games.size();
  j["team_rows"] = games.rows.size();
  j["examples"] = table.size();
  j["dropped_examples"] = table.dropped;
  j["seasons"] = seasons_in_order(table);
  j["lag_mode"] = lag_mode_name(lag_mode);
  j["layout"] = games.layout == CsvLayout::GameLevel ? "game_level" : "team_level";
  j["rejected_rows"] = rejects;
  j["digest"] = digest;
  if (!rule_description.empty()) j["planted_rule"] = rule_description;
  return j;
}

namespace {

LoadedDataset finish_dataset(ParsedGames games, LagMode mode) {
  LoadedDataset d;
  d.table = lag_and_pair(games.rows, games.games, mode);
  d.games = std::move(games);
  d.lag_mode = mode;
  if (d.table.size() == 0) throw ValidationError("dataset produced no matchup examples");
  d.digest = dataset_digest(d.table);
  return d;
}

}  // namespace

LoadedDataset load_dataset(const std::filesystem::path& path, const DatasetOptions& options) {
  return finish_dataset(parse_game_rows_file(path, ParseOptions{.strict = options.strict}), options.lag_mode);
}

LoadedDataset load_dataset(std::istream& in, const DatasetOptions& options) {
  return finish_dataset(parse_game_rows(in, ParseOptions{.strict = options.strict}), options.lag_mode);
}

LoadedDataset synthesize_dataset(const SynthParams& params) {
  auto synth = synthesize_schedule(params);
  LoadedDataset d = finish_dataset(std::move(synth.games), LagMode::CrossSeason);
  d.rule_description = std::move(synth.rule_description);
  return d;
}

SynthParams synth_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("synth parameters must be a JSON object");
  SynthParams p;
  for (const auto& [key, v] : j.items()) {
    if (v.is_null()) continue;
    if (key == "teams") p.teams = number_from<int>(v, key);
    else if (key == "seasons") p.seasons = number_from<int>(v, key);
    else if (key == "games_per_season") p.games_per_season = number_from<int>(v, key);
    else if (key == "seed") p.seed = number_from<std::uint64_t>(v, key);
    else if (key == "rule") p.rule = parse_planted_rule(string_from(v, key));
    else if (key == "k") p.lag_k = number_from<int>(v, key);
    else if (key == "noise") p.noise = number_from<double>(v, key);
    else if (key == "feature") p.planted_feature = string_from(v, key);
    else if (key == "first_season_year") p.first_season_year = number_from<int>(v, key);
    else throw ValidationError("unknown synth key '" + key + "'");
  }
  return p;
}

ojson synth_params_to_json(const SynthParams& p) {
  return {{"teams", p.teams},
          {"seasons", p.seasons},
          {"games_per_season", p.games_per_season},
          {"seed", p.seed},
          {"rule", planted_rule_name(p.rule)},
          {"k", p.lag_k},
          {"noise", p.noise},
          {"feature", p.planted_feature},
          {"first_season_year", p.first_season_year}};
}

// ---------------------------------------------------------------- preparation

PreparedData prepare_data(const LoadedDataset& data, const RunConfig& config, const NormalizationStats* fixed) {
  const std::size_t n = data.table.size();
  const std::size_t L = config.seq_len.value_or(0);
  if (n <= L) {
    throw ValidationError("N − L ≤ 0: the dataset has N = " + std::to_string(n) +
                          " examples but the sequence length is L = " + std::to_string(L) +
                          "; lower --seq-len or supply more games");
  }
  PreparedData p;
  auto ws = build_windows(data.table, L, config.stride, config.include_target_row);
  p.windows = std::move(ws.windows);
  p.warnings = std::move(ws.warnings);

  SplitBoundary boundary;
  if (config.boundary_index) boundary.game_index = config.boundary_index;
  else if (config.boundary_season) boundary.season = config.boundary_season;
  else boundary.game_index = default_boundary(data.table);
  p.split = split_chronological(data.table, p.windows, boundary);
  p.warnings.insert(p.warnings.end(), p.split.warnings.begin(), p.split.warnings.end());
  if (p.split.train.empty()) {
    throw ValidationError("no training windows: every target falls at or after the split boundary (game index " +
                          std::to_string(p.split.boundary) + ")");
  }
  if (p.split.test.empty()) {
    throw ValidationError("no test windows: every target falls before the split boundary (game index " +
                          std::to_string(p.split.boundary) + ")");
  }
  p.norm = fixed != nullptr ? *fixed : fit_normalizer(data.table.features, p.split.train_rows);
  if (p.norm.feature_count() != data.table.features.cols()) {
    throw ShapeError("normalization has " + std::to_string(p.norm.feature_count()) + " features, dataset has " +
                     std::to_string(data.table.features.cols()));
  }
  p.z = apply_normalizer(p.norm, data.table.features);
  return p;
}

// ---------------------------------------------------------------- trained models

std::size_t TrainedModel::input_features() const {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LstmModel>) return m.spec.input_features;
        else if constexpr (std::is_same_v<T, LogRegModel>) return m.w.value.cols();
        else if constexpr (std::is_same_v<T, Forest>) return m.features;
        else return m.spec.input_features;
      },
      state);
}

double TrainedModel::predict(const Matrix& z, const SequenceWindow& window) const {
  if (z.cols() != input_features()) {
    throw ShapeError("rows have " + std::to_string(z.cols()) + " features, model expects " +
                     std::to_string(input_features()));
  }
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LstmModel>) {
          return predict_window(m.params, m.spec, z, window);
        } else {
          return m.predict(z.row(window.target));
        }
      },
      state);
}

std::vector<double> TrainedModel::predict_raw(const Matrix& rows) const {
  if (rows.cols() != norm.feature_count()) {
    throw ShapeError("input has " + std::to_string(rows.cols()) + " features, checkpoint expects " +
                     std::to_string(norm.feature_count()));
  }
  const Matrix z = apply_normalizer(norm, rows);
  if (const auto* lstm = std::get_if<LstmModel>(&state)) {
    if (rows.rows() != lstm->spec.seq_len) {
      throw ValidationError("sequence model expects a window of exactly L = " + std::to_string(lstm->spec.seq_len) +
                            " rows, got " + std::to_string(rows.rows()));
    }
    const SequenceWindow w{.start = 0, .length = rows.rows(), .target = rows.rows()};
    return {predict_window(lstm->params, lstm->spec, z, w)};
  }
  std::vector<double> out;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    SequenceWindow w;
    w.target = r;
    out.push_back(predict(z, w));
  }
  return out;
}

std::string TrainedModel::loss_csv() const {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& row : loss) {
    out += std::to_string(row.epoch) + ',' + format_double(row.train_loss) + ',' +
           (row.val_loss ? format_double(*row.val_loss) : "NA") + '\n';
  }
  return out;
}

namespace {

ojson ranked_importances(const Forest& f) {
  ojson out = ojson::array();
  const auto& names = matchup_feature_names();
  std::size_t rank = 1;
  for (const auto& r : forest_importances(f)) {
    out.push_back({{"rank", rank++},
                   {"feature", r.feature < names.size() ? names[r.feature] : std::to_string(r.feature)},
                   {"importance", r.importance}});
  }
  return out;
}

std::size_t parameter_count(const ModelState& state) {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        std::size_t n = 0;
        if constexpr (std::is_same_v<T, LstmModel>) {
          return m.params.parameter_count();
        } else if constexpr (std::is_same_v<T, Forest>) {
          for (const auto& t : m.trees) n += t.nodes.size();
          return n;
        } else {
          for (const ParamTensor* p : const_cast<T&>(m).params()) n += p->value.size();
          return n;
        }
      },
      state);
}

}  // namespace

ojson TrainedModel::info() const {
  ojson j;
  j["model_kind"] = model_kind_name(kind());
  j["fingerprint"] = fingerprint;
  j["seed"] = config.seed;
  j["input_features"] = input_features();
  j[kind() == ModelKind::Forest ? "tree_nodes" : "parameters"] = parameter_count(state);
  j["best_epoch"] = optional_json(best_epoch);
  j["config"] = config.to_json();
  j["dataset"] = dataset;
  if (const auto* f = std::get_if<Forest>(&state)) j["feature_importances"] = ranked_importances(*f);
  return j;
}

std::string run_fingerprint(const RunConfig& resolved, const ojson& dataset_identity) {
  const std::string canonical = ojson{{"config", resolved.to_json()}, {"dataset", dataset_identity}}.dump();
  return hex64(fnv1a(canonical));
}

namespace {

RowSet target_rows(const Matrix& z, const std::vector<SequenceWindow>& windows) {
  RowSet s{Matrix(windows.size(), z.cols()), {}};
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto src = z.row(windows[i].target);
    std::copy(src.begin(), src.end(), s.x.row(i).begin());
    s.y.push_back(windows[i].target_label);
  }
  return s;
}

std::vector<SequenceWindow> pick(const std::vector<SequenceWindow>& all, const std::vector<std::size_t>& idx) {
  std::vector<SequenceWindow> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

EvalReport score(const TrainedModel& m, const PreparedData& p) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i : p.split.test) {
    const double s = m.predict(p.z, p.windows[i]);
    if (!std::isfinite(s)) throw NumericError("model produced a non-finite prediction");
    scores.push_back(s);
    labels.push_back(p.windows[i].target_label);
  }
  EvalReport r = make_report(std::string(model_kind_name(m.kind())), scores, labels);
  r.fingerprint = m.fingerprint;
  r.seed = m.config.seed;
  return r;
}

MlpSpec mlp_spec(const RunConfig& c) {
  MlpSpec s;
  s.input_features = kMatchupFeatureCount;
  s.dropout = c.dropout.value_or(s.dropout);
  return s;
}

CnnSpec cnn_spec() {
  CnnSpec s;
  s.input_features = kMatchupFeatureCount;
  return s;
}

}  // namespace

TrainedModel train_model(const LoadedDataset& data, const RunConfig& config, const ProgressFn& progress) {
  TrainedModel m;
  m.config = config.resolved();
  m.config.validate();
  const PreparedData prep = prepare_data(data, m.config);
  m.dataset = data.identity();
  m.fingerprint = run_fingerprint(m.config, m.dataset);
  m.norm = prep.norm;
  const RunConfig& c = m.config;
  const auto train_windows = pick(prep.windows, prep.split.train);
  const std::uint64_t init_seed = derive_seed(c.seed, 1);
  const std::uint64_t train_seed = derive_seed(c.seed, 2);

  auto emit = [&](LossRow row) {
    if (progress) progress(row);
    m.loss.push_back(row);
  };

  switch (c.model) {
    case ModelKind::Lstm: {
      LstmModel lm{c.stack_spec(), StackParams(c.stack_spec())};
      initialize(lm.params, init_seed);
      const TrainConfig tc{.epochs = *c.epochs,
                           .batch_size = c.batch_size,
                           .lr = *c.lr,
                           .bptt = c.bptt,
                           .clip_norm = c.clip,
                           .val_fraction = c.val_fraction,
                           .seed = train_seed};
      const auto result = train_stack(lm.params, lm.spec, prep.z, train_windows, tc, [&](const EpochStats& s) {
        emit({s.epoch, s.train_loss, s.val_loss});
        return false;
      });
      m.best_epoch = result.best_epoch;
      m.state = std::move(lm);
      break;
    }
    case ModelKind::LogReg: {
      std::vector<double> curve;
      m.state = logreg_train(target_rows(prep.z, train_windows),
                             LogRegConfig{.C = c.logreg_c, .epochs = *c.epochs, .lr = *c.lr}, &curve);
      for (std::size_t i = 0; i < curve.size(); ++i) emit({i + 1, curve[i], std::nullopt});
      break;
    }
    case ModelKind::Forest: {
      m.state = forest_train(target_rows(prep.z, train_windows),
                             ForestSpec{.trees = c.trees, .max_depth = c.max_depth, .seed = derive_seed(c.seed, 3)});
      break;
    }
    case ModelKind::Mlp: {
      MlpModel mm(mlp_spec(c));
      initialize(mm, init_seed);
      const auto curve = mlp_train(mm, target_rows(prep.z, train_windows),
                                   {.epochs = *c.epochs, .batch_size = c.batch_size, .lr = *c.lr, .seed = train_seed});
      for (const auto& e : curve) emit({e.epoch, e.train_loss, std::nullopt});
      m.state = std::move(mm);
      break;
    }
    case ModelKind::Cnn: {
      CnnModel cm(cnn_spec());
      initialize(cm, init_seed);
      const auto curve = cnn_train(cm, target_rows(prep.z, train_windows),
                                   {.epochs = *c.epochs, .batch_size = c.batch_size, .lr = *c.lr, .seed = train_seed});
      for (const auto& e : curve) emit({e.epoch, e.train_loss, std::nullopt});
      m.state = std::move(cm);
      break;
    }
  }
  m.report = score(m, prep);
  return m;
}

EvalReport evaluate_model(const TrainedModel& model, const LoadedDataset& data) {
  if (data.table.features.cols() != model.input_features()) {
    throw ShapeError("dataset has " + std::to_string(data.table.features.cols()) + " features but the checkpoint expects " +
                     std::to_string(model.input_features()));
  }
  const PreparedData prep = prepare_data(data, model.config, &model.norm);
  return score(model, prep);
}

std::string dry_run_text(const RunConfig& config) {
  RunConfig c = config.resolved();
  c.validate();
  std::ostringstream out;
  out << "model: " << model_kind_name(c.model) << ", profile: " << c.profile << ", L = " << *c.seq_len
      << ", stride = " << c.stride << "\n";
  switch (c.model) {
    case ModelKind::Lstm:
      out << shape_walkthrough(c.stack_spec());
      break;
    case ModelKind::Cnn: {
      const auto w = cnn_width_trace(kMatchupFeatureCount);
      out << "cnn widths:";
      for (std::size_t v : w) out << ' ' << v;
      out << "\nflatten: " << w.back() << " x " << cnn_spec().filters.back() << " = "
          << w.back() * cnn_spec().filters.back() << "\n";
      break;
    }
    case ModelKind::Mlp: {
      const auto s = mlp_spec(c);
      out << "mlp: (" << s.input_features << ") → (" << s.units[0] << ") → batchnorm → (" << s.units[1] << ") → ("
          << s.units[2] << ") → (1)\n";
      break;
    }
    case ModelKind::LogReg:
      out << "logreg: (" << kMatchupFeatureCount << ") → (1), C = " << format_double(c.logreg_c) << "\n";
      break;
    case ModelKind::Forest:
      out << "forest: " << c.trees << " trees, max depth "
          << (c.max_depth < 0 ? std::string("unlimited") : std::to_string(c.max_depth)) << "\n";
      break;
  }
  out << "dry run: no data read, nothing trained\n";
  return out.str();
}

// ---------------------------------------------------------------- base64

std::string base64_encode_doubles(std::span<const double> values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<double> base64_decode_doubles(std::string_view text, std::size_t expected, const std::string& field) {
  const std::size_t want_chars = 4 * ((expected * 8 + 2) / 3);
  if (text.size() != want_chars) {
    throw SchemaError("checkpoint field '" + field + "' holds " + std::to_string(text.size()) +
                      " base64 characters, expected " + std::to_string(want_chars) + " for " +
                      std::to_string(expected) + " values");
  }
  std::string bytes(text.size() / 4 * 3 + 1, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(bytes.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw SchemaError("checkpoint field '" + field + "' is not valid base64");
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

ojson tensor_json(const Matrix& m) {
  return {{"shape", {m.rows(), m.cols()}}, {"data", base64_encode_doubles(m.values())}};
}

ojson tensors_json(const std::vector<const ParamTensor*>& params) {
  ojson j = ojson::object();
  for (const ParamTensor* p : params) j[p->name] = tensor_json(p->value);
  return j;
}

template <typename M>
std::vector<const ParamTensor*> const_params(const M& m) {
  std::vector<const ParamTensor*> out;
  for (const ParamTensor* p : const_cast<M&>(m).params()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> lstm_params(const LstmModel& m) { return m.params.params(); }

ojson spec_json(const ModelState& state) {
  return std::visit(
      [](const auto& m) -> ojson {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LstmModel>) {
          return {{"input_features", m.spec.input_features}, {"seq_len", m.spec.seq_len},
                  {"lstm_units", m.spec.lstm_units},         {"head_units", m.spec.head_units},
                  {"dropout", m.spec.dropout}};
        } else if constexpr (std::is_same_v<T, LogRegModel>) {
          return {{"input_features", m.w.value.cols()}, {"C", m.C}};
        } else if constexpr (std::is_same_v<T, Forest>) {
          return {{"input_features", m.features},          {"trees", m.spec.trees},
                  {"max_depth", m.spec.max_depth},         {"min_samples_leaf", m.spec.min_samples_leaf},
                  {"max_features", m.spec.max_features},   {"bootstrap", m.spec.bootstrap},
                  {"seed", m.spec.seed}};
        } else if constexpr (std::is_same_v<T, MlpModel>) {
          return {{"input_features", m.spec.input_features}, {"units", m.spec.units},
                  {"dropout", m.spec.dropout},               {"bn_momentum", m.spec.bn_momentum},
                  {"bn_epsilon", m.spec.bn_epsilon}};
        } else {
          return {{"input_features", m.spec.input_features}, {"filters", m.spec.filters},
                  {"dense_units", m.spec.dense_units},       {"l2", m.spec.l2}};
        }
      },
      state);
}

// Dotted path of the innermost object key open at the end of `prefix`.
std::string open_field_path(std::string_view prefix) {
  struct Frame {
    bool object;
    std::string key;
  };
  std::vector<Frame> stack;
  bool expect_key = false;
  std::string last_string;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const char ch = prefix[i];
    if (ch == '"') {
      std::string s;
      for (++i; i < prefix.size() && prefix[i] != '"'; ++i) {
        if (prefix[i] == '\\') ++i;
        else s += prefix[i];
      }
      if (!stack.empty() && stack.back().object && expect_key) {
        stack.back().key = s;
        expect_key = false;
      }
    } else if (ch == '{') {
      stack.push_back({true, ""});
      expect_key = true;
    } else if (ch == '[') {
      stack.push_back({false, ""});
    } else if (ch == '}' || ch == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (ch == ',') {
      expect_key = !stack.empty() && stack.back().object;
    }
  }
  std::string path;
  for (const auto& f : stack) {
    if (!f.object || f.key.empty()) continue;
    if (!path.empty()) path += '.';
    path += f.key;
  }
  return path;
}

const nlohmann::json& field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError("checkpoint field '" + path + "' is missing");
  return j.at(key);
}

template <typename T>
T field_as(const nlohmann::json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("checkpoint field '" + path + "' has the wrong type: " + v.dump());
  }
}

void load_tensor(const nlohmann::json& group, const std::string& group_name, const std::string& name, Matrix& dst) {
  const std::string path = group_name + "." + name;
  const auto& t = field(group, name, path);
  const auto shape = field_as<std::vector<std::size_t>>(t, "shape", path + ".shape");
  if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols()) {
    throw ShapeError("checkpoint field '" + path + "' has shape " + field(t, "shape", path).dump() +
                     ", expected [" + std::to_string(dst.rows()) + "," + std::to_string(dst.cols()) + "]");
  }
  const auto values = base64_decode_doubles(field_as<std::string>(t, "data", path + ".data"), dst.size(), path + ".data");
  std::copy(values.begin(), values.end(), dst.values().begin());
}

void load_params(const nlohmann::json& root, const ParamList& params) {
  const auto& group = field(root, "params", "params");
  for (ParamTensor* p : params) load_tensor(group, "params", p->name, p->value);
}

std::vector<std::size_t> size_list(const nlohmann::json& spec, const char* key) {
  return field_as<std::vector<std::size_t>>(spec, key, std::string("spec.") + key);
}

}  // namespace

std::string checkpoint_to_json(const TrainedModel& model) {
  ojson j;
  j["format_version"] = kCheckpointVersion;
  j["model_kind"] = model_kind_name(model.kind());
  j["fingerprint"] = model.fingerprint;
  j["seed"] = model.config.seed;
  j["config"] = model.config.to_json();
  j["dataset"] = model.dataset;
  j["spec"] = spec_json(model.state);
  j["normalization"] = ojson::parse(model.norm.to_json());
  j["best_epoch"] = optional_json(model.best_epoch);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LstmModel>) {
          j["params"] = tensors_json(lstm_params(m));
        } else if constexpr (std::is_same_v<T, Forest>) {
          ojson trees = ojson::array();
          for (const auto& t : m.trees) {
            std::vector<int> feature, left, right;
            std::vector<std::uint32_t> c0, c1;
            std::vector<double> threshold;
            for (const auto& n : t.nodes) {
              feature.push_back(n.feature);
              threshold.push_back(n.threshold);
              left.push_back(n.left);
              right.push_back(n.right);
              c0.push_back(n.count0);
              c1.push_back(n.count1);
            }
            trees.push_back({{"feature", feature},
                             {"threshold", base64_encode_doubles(threshold)},
                             {"left", left},
                             {"right", right},
                             {"count0", c0},
                             {"count1", c1}});
          }
          j["forest"] = {{"trees", trees}, {"importances", base64_encode_doubles(m.importances)}};
          j["feature_importances"] = ranked_importances(m);
        } else {
          j["params"] = tensors_json(const_params(m));
          if constexpr (std::is_same_v<T, MlpModel>) {
            j["buffers"] = {{"mlp.batchnorm.running_mean", tensor_json(Matrix::column(m.running_mean))},
                            {"mlp.batchnorm.running_var", tensor_json(Matrix::column(m.running_var))}};
          }
        }
      },
      model.state);
  return j.dump(1) + "\n";
}

TrainedModel checkpoint_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const std::string path = open_field_path(text.substr(0, at));
    throw SchemaError("checkpoint is truncated or malformed at byte " + std::to_string(e.byte) +
                      (path.empty() ? std::string() : " inside field '" + path + "'"));
  }
  if (!j.is_object()) throw SchemaError("checkpoint must be a JSON object");
  const int version = field_as<int>(j, "format_version", "format_version");
  if (version != kCheckpointVersion) {
    throw SchemaError("checkpoint field 'format_version' is " + std::to_string(version) + ", supported version is " +
                      std::to_string(kCheckpointVersion));
  }
  TrainedModel m;
  const ModelKind kind = parse_model_kind(field_as<std::string>(j, "model_kind", "model_kind"));
  try {
    m.config = RunConfig::from_json(field(j, "config", "config")).resolved();
  } catch (const ValidationError& e) {
    throw SchemaError(std::string("checkpoint field 'config': ") + e.what());
  }
  if (m.config.model != kind) throw SchemaError("checkpoint field 'model_kind' disagrees with 'config.model'");
  m.fingerprint = field_as<std::string>(j, "fingerprint", "fingerprint");
  m.dataset = field(j, "dataset", "dataset");
  try {
    m.norm = NormalizationStats::from_json(field(j, "normalization", "normalization").dump());
  } catch (const ValidationError& e) {
    throw SchemaError(std::string("checkpoint field 'normalization': ") + e.what());
  }
  const auto& be = field(j, "best_epoch", "best_epoch");
  if (!be.is_null()) m.best_epoch = field_as<std::size_t>(j, "best_epoch", "best_epoch");

  const auto& spec = field(j, "spec", "spec");
  const auto input = field_as<std::size_t>(spec, "input_features", "spec.input_features");
  if (input != m.norm.feature_count()) {
    throw ShapeError("checkpoint field 'spec.input_features' is " + std::to_string(input) +
                     " but the normalization covers " + std::to_string(m.norm.feature_count()) + " features");
  }
  switch (kind) {
    case ModelKind::Lstm: {
      StackSpec s;
      s.input_features = input;
      s.seq_len = field_as<std::size_t>(spec, "seq_len", "spec.seq_len");
      s.lstm_units = size_list(spec, "lstm_units");
      s.head_units = field_as<std::size_t>(spec, "head_units", "spec.head_units");
      s.dropout = field_as<double>(spec, "dropout", "spec.dropout");
      s.validate();
      LstmModel lm{s, StackParams(s)};
      load_params(j, lm.params.params());
      m.state = std::move(lm);
      break;
    }
    case ModelKind::LogReg: {
      LogRegModel lr(input, field_as<double>(spec, "C", "spec.C"));
      load_params(j, lr.params());
      m.state = std::move(lr);
      break;
    }
    case ModelKind::Forest: {
      Forest f;
      f.features = input;
      f.spec.trees = field_as<std::size_t>(spec, "trees", "spec.trees");
      f.spec.max_depth = field_as<int>(spec, "max_depth", "spec.max_depth");
      f.spec.min_samples_leaf = field_as<std::size_t>(spec, "min_samples_leaf", "spec.min_samples_leaf");
      f.spec.max_features = field_as<std::size_t>(spec, "max_features", "spec.max_features");
      f.spec.bootstrap = field_as<bool>(spec, "bootstrap", "spec.bootstrap");
      f.spec.seed = field_as<std::uint64_t>(spec, "seed", "spec.seed");
      const auto& fj = field(j, "forest", "forest");
      const auto& trees = field(fj, "trees", "forest.trees");
      if (!trees.is_array() || trees.size() != f.spec.trees) {
        throw SchemaError("checkpoint field 'forest.trees' must list " + std::to_string(f.spec.trees) + " trees");
      }
      for (std::size_t t = 0; t < trees.size(); ++t) {
        const std::string path = "forest.trees[" + std::to_string(t) + "]";
        const auto feature = field_as<std::vector<int>>(trees[t], "feature", path + ".feature");
        const std::size_t n = feature.size();
        const auto left = field_as<std::vector<int>>(trees[t], "left", path + ".left");
        const auto right = field_as<std::vector<int>>(trees[t], "right", path + ".right");
        const auto c0 = field_as<std::vector<std::uint32_t>>(trees[t], "count0", path + ".count0");
        const auto c1 = field_as<std::vector<std::uint32_t>>(trees[t], "count1", path + ".count1");
        const auto thr = base64_decode_doubles(field_as<std::string>(trees[t], "threshold", path + ".threshold"), n,
                                               path + ".threshold");
        if (n == 0 || left.size() != n || right.size() != n || c0.size() != n || c1.size() != n) {
          throw SchemaError("checkpoint field '" + path + "' has node lists of unequal length");
        }
        DecisionTree tree;
        for (std::size_t k = 0; k < n; ++k) {
          const TreeNode node{feature[k], thr[k], left[k], right[k], c0[k], c1[k]};
          if (!node.leaf()) {
            const auto bad = [&](int child) { return child <= static_cast<int>(k) || child >= static_cast<int>(n); };
            if (node.feature >= static_cast<int>(input) || bad(node.left) || bad(node.right)) {
              throw SchemaError("checkpoint field '" + path + "' node " + std::to_string(k) + " is inconsistent");
            }
          }
          tree.nodes.push_back(node);
        }
        f.trees.push_back(std::move(tree));
      }
      f.importances = base64_decode_doubles(field_as<std::string>(fj, "importances", "forest.importances"), input,
                                            "forest.importances");
      m.state = std::move(f);
      break;
    }
    case ModelKind::Mlp: {
      MlpSpec s;
      s.input_features = input;
      s.units = size_list(spec, "units");
      s.dropout = field_as<double>(spec, "dropout", "spec.dropout");
      s.bn_momentum = field_as<double>(spec, "bn_momentum", "spec.bn_momentum");
      s.bn_epsilon = field_as<double>(spec, "bn_epsilon", "spec.bn_epsilon");
      MlpModel mm(s);
      load_params(j, mm.params());
      const auto& buffers = field(j, "buffers", "buffers");
      Matrix mean(s.units[0], 1), var(s.units[0], 1);
      load_tensor(buffers, "buffers", "mlp.batchnorm.running_mean", mean);
      load_tensor(buffers, "buffers", "mlp.batchnorm.running_var", var);
      mm.running_mean.assign(mean.values().begin(), mean.values().end());
      mm.running_var.assign(var.values().begin(), var.values().end());
      m.state = std::move(mm);
      break;
    }
    case ModelKind::Cnn: {
      CnnSpec s;
      s.input_features = input;
      s.filters = size_list(spec, "filters");
      s.dense_units = field_as<std::size_t>(spec, "dense_units", "spec.dense_units");
      s.l2 = field_as<double>(spec, "l2", "spec.l2");
      CnnModel cm(s);
      load_params(j, cm.params());
      m.state = std::move(cm);
      break;
    }
  }
  return m;
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_text_file(path)); }

// ---------------------------------------------------------------- feature rows and files

Matrix read_feature_rows(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError("feature rows: input is empty");
  if (header.rfind("\xEF\xBB\xBF", 0) == 0) header.erase(0, 3);
  const auto columns = split_csv_line(header);
  const auto& names = matchup_feature_names();
  std::vector<std::size_t> at;
  std::vector<std::string> missing;
  for (const auto& name : names) {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) missing.push_back(name);
    else at.push_back(static_cast<std::size_t>(it - columns.begin()));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 5; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 5) list += ", ...";
    throw SchemaError("feature rows are missing " + std::to_string(missing.size()) + " of " +
                      std::to_string(names.size()) + " feature columns (" + list + ")");
  }
  std::vector<double> values;
  std::size_t rows = 0;
  std::string line;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != columns.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < at.size(); ++k) values.push_back(parse_number(fields[at[k]], line_no, names[k]));
    ++rows;
  }
  return Matrix(rows, names.size(), std::move(values));
}

Matrix read_feature_rows_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_feature_rows(in);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace hoopseq
