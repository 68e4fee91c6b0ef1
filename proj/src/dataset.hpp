#pragma once

// Game ingestion, most-recent-game lag, normalization, chronological
// windows/splits and the synthetic schedule generator.

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "numcore.hpp"

namespace hoopseq {

inline constexpr std::size_t kTeamFeatureCount = 33;
inline constexpr std::size_t kMatchupFeatureCount = 2 * kTeamFeatureCount;

// Per-team statistic columns, in schema order.
inline constexpr std::array<std::string_view, kTeamFeatureCount> kFeatureNames = {
    "WINS",          "LOSSES",     "FGM",        "FGA",        "FG3A",           "FG3M",
    "FTA",           "FTM",        "OREB",       "DREB",       "AST",            "STL",
    "BLK",           "TO",         "PF",         "PTS",        "PLUS_MINUS",     "OFF_RATING",
    "DEF_RATING",    "AST_PCT",    "AST_TOV",    "AST_RATIO",  "OREB_PCT",       "DREB_PCT",
    "TM_TOV_PCT",    "EFG_PCT",    "TS_PCT",     "PACE",       "POSS",           "PIE",
    "PCT_PTS_PAINT", "PCT_PTS_FB", "PCT_PTS_OFF_TOV"};

using FeatureArray = std::array<double, kTeamFeatureCount>;

std::optional<std::size_t> feature_index(std::string_view name);
// HOME_<f1..f33> followed by AWAY_<f1..f33>.
const std::vector<std::string>& matchup_feature_names();

using Date = std::chrono::sys_days;
Date parse_iso_date(std::string_view text);  // YYYY-MM-DD, optional trailing time part
std::string format_iso_date(Date date);

struct TeamGameStat {
  std::string team_id;
  std::string game_id;
  std::string season_id;
  Date game_date{};
  std::int64_t game_index = 0;
  bool is_home = false;
  bool won = false;
  FeatureArray features{};
};

struct GameResult {
  std::string game_id;
  std::string season_id;
  Date game_date{};
  std::int64_t game_index = 0;
  std::string home_team_id;
  std::string away_team_id;  // empty when the opponent row is missing
  int home_win = 0;
};

// Returns a description of every violated invariant (empty when valid).
std::vector<std::string> validate_team_stat(const FeatureArray& features);

enum class CsvLayout { GameLevel, TeamLevel };

struct RowReject {
  std::size_t line = 0;
  std::string message;
};

struct ParseOptions {
  // Strict parsing turns the first invariant violation into a ValidationError;
  // lenient parsing drops the game and records a reject.
  bool strict = true;
};

struct ParsedGames {
  CsvLayout layout = CsvLayout::GameLevel;
  std::vector<TeamGameStat> rows;  // sorted by (game_date, game_id)
  std::vector<GameResult> games;   // sorted, game_index == position
  std::vector<RowReject> rejects;
  std::size_t data_rows = 0;
};

ParsedGames parse_game_rows(std::istream& in, const ParseOptions& options = {});
ParsedGames parse_game_rows_file(const std::filesystem::path& path, const ParseOptions& options = {});

enum class LagMode {
  CrossSeason,   // a season opener uses the team's last game of the prior season
  WithinSeason,  // season openers are dropped
  PreLagged,     // features are already lagged in the source; pair only
};

struct MatchupExample {
  std::string game_id;
  std::int64_t game_index = 0;
  std::string season_id;
  Date game_date{};
  std::string home_team_id;
  std::string away_team_id;
  int label = 0;
  // Positions in ParsedGames::rows of the lag sources (equal to the game's own
  // rows in PreLagged mode).
  std::size_t home_source = 0;
  std::size_t away_source = 0;
};

/// Examples plus one shared row-major backing store of their 66 features.
struct MatchupTable {
  std::vector<MatchupExample> examples;
  Matrix features;  // examples.size() x 66
  std::size_t dropped = 0;

  std::size_t size() const noexcept { return examples.size(); }
  std::span<const double> feature_row(std::size_t i) const { return features.row(i); }
};

MatchupTable lag_and_pair(const std::vector<TeamGameStat>& rows,
                          const std::vector<GameResult>& games, LagMode mode = LagMode::CrossSeason);

struct NormalizationStats {
  static constexpr int kFormatVersion = 1;
  static constexpr double kStdFloor = 1e-8;

  std::vector<double> mean;
  std::vector<double> stddev;  // already floored
  std::size_t fitted_rows = 0;

  std::size_t feature_count() const noexcept { return mean.size(); }
  std::string to_json() const;
  static NormalizationStats from_json(std::string_view text);
};

// Population z-score statistics over the first `train_rows` rows.
NormalizationStats fit_normalizer(const Matrix& features, std::size_t train_rows);
Matrix apply_normalizer(const NormalizationStats& stats, const Matrix& features);

struct SequenceWindow {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t target = 0;  // start + length
  int target_label = 0;
  // When set the final timestep is the target's own (lagged) row and history
  // covers [start + 1, start + length).
  bool include_target_row = false;

  std::size_t row_at(std::size_t t) const noexcept {
    if (!include_target_row) return start + t;
    return t + 1 == length ? target : start + 1 + t;
  }
};

struct WindowSet {
  std::vector<SequenceWindow> windows;
  std::vector<std::string> warnings;
};

// Window k covers rows [k*stride, k*stride + L) and targets row k*stride + L.
WindowSet build_windows(std::size_t row_count, std::size_t length, std::size_t stride,
                        bool include_target_row = false);
WindowSet build_windows(const MatchupTable& table, std::size_t length, std::size_t stride,
                        bool include_target_row = false);

struct SplitBoundary {
  std::optional<std::int64_t> game_index;
  std::optional<std::string> season;
};

struct DatasetSplit {
  std::int64_t boundary = 0;  // game_index; targets below it train
  std::vector<std::size_t> train;  // window positions
  std::vector<std::size_t> test;
  std::size_t train_rows = 0;  // leading table rows with game_index < boundary
  std::vector<std::string> warnings;
};

// Season ids in chronological order of first appearance.
std::vector<std::string> seasons_in_order(const MatchupTable& table);
// First game_index of the second-to-last season (final two seasons held out).
std::int64_t default_boundary(const MatchupTable& table);
DatasetSplit split_chronological(const MatchupTable& table,
                                 const std::vector<SequenceWindow>& windows,
                                 const SplitBoundary& boundary);

enum class PlantedRule { None, FeatureThreshold, TemporalLagK };

PlantedRule parse_planted_rule(std::string_view name);
std::string_view planted_rule_name(PlantedRule rule);

struct SynthParams {
  int teams = 8;
  int seasons = 3;
  int games_per_season = 0;  // 0 = every team plays 82 games
  std::uint64_t seed = 7;
  PlantedRule rule = PlantedRule::None;
  int lag_k = 3;
  double noise = 0.0;
  std::string planted_feature = "PIE";
  int first_season_year = 2004;
};

// Features that a planted rule may use; they are drawn independently of outcomes.
const std::vector<std::string>& plantable_features();
// Median of the planted feature's generating distribution.
double planted_threshold(std::string_view feature);

struct SyntheticData {
  ParsedGames games;
  std::string rule_description;
};

SyntheticData synthesize_schedule(const SynthParams& params);

// Game-level CSV; `table` rows carry lagged features, `games` rows raw ones.
void write_game_csv(std::ostream& out, const ParsedGames& games);
void write_matchup_csv(std::ostream& out, const MatchupTable& table);

// One CSV record with RFC 4180 quoting; fields are trimmed.
std::vector<std::string> split_csv_line(std::string_view line);
// Finite decimal number or a ParseError citing the line and column.
double parse_number(std::string_view text, std::size_t line, std::string_view column);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

}  // namespace hoopseq
