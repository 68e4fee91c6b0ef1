#pragma once

// Run configuration, dataset preparation, training/evaluation for every model
// kind, and the JSON checkpoint format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "baselines.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "recurrent.hpp"

namespace hoopseq {

enum class ModelKind { Lstm, LogReg, Forest, Mlp, Cnn };

ModelKind parse_model_kind(std::string_view name);
std::string_view model_kind_name(ModelKind kind);

struct RunConfig {
  ModelKind model = ModelKind::Lstm;
  std::string profile = "desk";  // desk | paper
  std::optional<std::size_t> seq_len;
  std::size_t stride = 1;
  bool include_target_row = false;
  std::optional<std::size_t> epochs;
  std::size_t batch_size = 32;
  std::optional<double> lr;
  std::size_t bptt = 64;
  double clip = 5.0;
  double val_fraction = 0.0;
  std::optional<std::string> boundary_season;
  std::optional<std::int64_t> boundary_index;
  std::uint64_t seed = 7;
  std::vector<std::size_t> lstm_units;  // empty = profile default
  std::optional<std::size_t> head_units;
  std::optional<double> dropout;
  std::size_t trees = 200;
  int max_depth = -1;
  double logreg_c = 1.0;

  // Unknown keys and wrongly typed values are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  // Fills every profile/model default so the config serializes completely.
  RunConfig resolved() const;
  void validate() const;
  nlohmann::ordered_json to_json() const;

  StackSpec stack_spec() const;  // on a resolved config
};

struct DatasetOptions {
  bool strict = true;
  LagMode lag_mode = LagMode::CrossSeason;
};

LagMode parse_lag_mode(std::string_view name);
std::string_view lag_mode_name(LagMode mode);

struct LoadedDataset {
  ParsedGames games;
  MatchupTable table;
  LagMode lag_mode = LagMode::CrossSeason;
  std::string rule_description;  // synthetic data only
  std::string digest;

  nlohmann::ordered_json identity() const;  // digest, example count, lag mode
  nlohmann::ordered_json summary() const;
};

std::string dataset_digest(const MatchupTable& table);
LoadedDataset load_dataset(const std::filesystem::path& path, const DatasetOptions& options);
LoadedDataset load_dataset(std::istream& in, const DatasetOptions& options);
LoadedDataset synthesize_dataset(const SynthParams& params);
SynthParams synth_params_from_json(const nlohmann::json& j);
nlohmann::ordered_json synth_params_to_json(const SynthParams& p);

struct PreparedData {
  std::vector<SequenceWindow> windows;
  DatasetSplit split;
  NormalizationStats norm;
  Matrix z;  // normalized features
  std::vector<std::string> warnings;
};

// Windows, chronological split and normalization (fitted on training rows
// unless `fixed` is given).
PreparedData prepare_data(const LoadedDataset& data, const RunConfig& config,
                          const NormalizationStats* fixed = nullptr);

struct LstmModel {
  StackSpec spec;
  StackParams params;
};

using ModelState = std::variant<LstmModel, LogRegModel, Forest, MlpModel, CnnModel>;

struct LossRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainedModel {
  RunConfig config;  // resolved
  nlohmann::ordered_json dataset;
  std::string fingerprint;
  NormalizationStats norm;
  ModelState state;
  std::vector<LossRow> loss;
  std::optional<std::size_t> best_epoch;
  std::optional<EvalReport> report;

  ModelKind kind() const noexcept { return config.model; }
  std::size_t input_features() const;
  // Probability for one window over normalized rows. Non-sequence models read the target row.
  double predict(const Matrix& z, const SequenceWindow& window) const;
  // Raw (un-normalized) feature rows. A sequence model takes exactly L rows and
  // returns one probability; the others return one per row.
  std::vector<double> predict_raw(const Matrix& rows) const;
  std::string loss_csv() const;
  nlohmann::ordered_json info() const;
};

std::string run_fingerprint(const RunConfig& resolved, const nlohmann::ordered_json& dataset_identity);

using ProgressFn = std::function<void(const LossRow&)>;

TrainedModel train_model(const LoadedDataset& data, const RunConfig& config, const ProgressFn& progress = {});
EvalReport evaluate_model(const TrainedModel& model, const LoadedDataset& data);

// Layer walkthrough for a config without touching any data.
std::string dry_run_text(const RunConfig& config);

inline constexpr int kCheckpointVersion = 1;

std::string base64_encode_doubles(std::span<const double> values);
std::vector<double> base64_decode_doubles(std::string_view text, std::size_t expected, const std::string& field);

std::string checkpoint_to_json(const TrainedModel& model);
TrainedModel checkpoint_from_json(std::string_view text);
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

// Matchup-style CSV with HOME_/AWAY_ feature headers (extra columns ignored).
Matrix read_feature_rows(std::istream& in);
Matrix read_feature_rows_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace hoopseq
