#include "dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "error.hpp"
#include "json.hpp"

namespace hoopseq {

namespace {

constexpr std::size_t idx(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureNames.size(); ++i) {
    if (kFeatureNames[i] == name) return i;
  }
  return kFeatureNames.size();
}

constexpr std::size_t kWins = idx("WINS");
constexpr std::size_t kLosses = idx("LOSSES");
constexpr std::size_t kFgm = idx("FGM");
constexpr std::size_t kFga = idx("FGA");
constexpr std::size_t kFg3a = idx("FG3A");
constexpr std::size_t kFg3m = idx("FG3M");
constexpr std::size_t kFta = idx("FTA");
constexpr std::size_t kFtm = idx("FTM");
constexpr std::size_t kPts = idx("PTS");
constexpr std::size_t kPoss = idx("POSS");

constexpr std::array<std::string_view, 9> kRateFeatures = {
    "AST_PCT", "OREB_PCT", "DREB_PCT", "TM_TOV_PCT", "EFG_PCT",
    "TS_PCT",  "PCT_PTS_PAINT", "PCT_PTS_FB", "PCT_PTS_OFF_TOV"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back(trim(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.emplace_back(trim(field));
  return out;
}

double parse_number(std::string_view text, std::size_t line, std::string_view column) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw ParseError("line " + std::to_string(line) + ": column " + std::string(column) +
                     " has non-numeric value '" + std::string(text) + "'");
  }
  return value;
}

namespace {

bool parse_flag(std::string_view text, std::size_t line, std::string_view column) {
  std::string t(trim(text));
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true" || t == "w" || t == "1.0") return true;
  if (t == "0" || t == "false" || t == "l" || t == "0.0") return false;
  throw ParseError("line " + std::to_string(line) + ": column " + std::string(column) +
                   " expects 0/1, got '" + std::string(text) + "'");
}

class Header {
 public:
  explicit Header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) pos_.emplace(names[i], i);
  }
  bool has(const std::string& name) const { return pos_.contains(name); }
  std::size_t at(const std::string& name) const {
    auto it = pos_.find(name);
    if (it == pos_.end()) throw SchemaError("missing required column '" + name + "'");
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::size_t> pos_;
};

struct RawTeamRow {
  TeamGameStat stat;
  std::size_t line = 0;
};

FeatureArray read_features(const std::vector<std::string>& fields,
                           const std::array<std::size_t, kTeamFeatureCount>& cols,
                           std::size_t line, std::string_view prefix) {
  FeatureArray f{};
  for (std::size_t i = 0; i < kTeamFeatureCount; ++i) {
    f[i] = parse_number(fields[cols[i]], line, std::string(prefix) + std::string(kFeatureNames[i]));
  }
  return f;
}

std::array<std::size_t, kTeamFeatureCount> feature_columns(const Header& h, std::string_view prefix) {
  std::array<std::size_t, kTeamFeatureCount> cols{};
  for (std::size_t i = 0; i < kTeamFeatureCount; ++i) {
    cols[i] = h.at(std::string(prefix) + std::string(kFeatureNames[i]));
  }
  return cols;
}

bool game_order(const GameResult& a, const GameResult& b) {
  if (a.game_date != b.game_date) return a.game_date < b.game_date;
  return a.game_id < b.game_id;
}

}  // namespace

std::optional<std::size_t> feature_index(std::string_view name) {
  const std::size_t i = idx(name);
  if (i == kFeatureNames.size()) return std::nullopt;
  return i;
}

const std::vector<std::string>& matchup_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    n.reserve(kMatchupFeatureCount);
    for (auto f : kFeatureNames) n.push_back("HOME_" + std::string(f));
    for (auto f : kFeatureNames) n.push_back("AWAY_" + std::string(f));
    return n;
  }();
  return names;
}

Date parse_iso_date(std::string_view text) {
  text = trim(text);
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto number = [&](std::size_t pos, std::size_t len, auto& out) {
    if (text.size() < pos + len) return false;
    const auto r = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    return r.ec == std::errc() && r.ptr == text.data() + pos + len;
  };
  const bool shape_ok = text.size() >= 10 && text[4] == '-' && text[7] == '-' &&
                        (text.size() == 10 || text[10] == 'T' || text[10] == ' ');
  if (!shape_ok || !number(0, 4, y) || !number(5, 2, m) || !number(8, 2, d)) {
    throw ParseError("invalid ISO-8601 date '" + std::string(text) + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw ParseError("invalid calendar date '" + std::string(text) + "'");
  return std::chrono::sys_days{ymd};
}

std::string format_iso_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> validate_team_stat(const FeatureArray& f) {
  std::vector<std::string> issues;
  auto name = [](std::size_t i) { return std::string(kFeatureNames[i]); };
  for (std::size_t i = kWins; i <= kPts; ++i) {
    if (f[i] < 0) issues.push_back(name(i) + " ≥ 0");
  }
  if (f[kPoss] < 0) issues.push_back("POSS ≥ 0");
  if (f[kWins] + f[kLosses] > 82) issues.push_back("WINS + LOSSES ≤ 82");
  const std::array<std::pair<std::size_t, std::size_t>, 5> ordered = {
      {{kFgm, kFga}, {kFg3m, kFg3a}, {kFtm, kFta}, {kFg3m, kFgm}, {kFg3a, kFga}}};
  for (auto [lo, hi] : ordered) {
    if (f[lo] > f[hi]) issues.push_back(name(lo) + " ≤ " + name(hi));
  }
  for (auto rate : kRateFeatures) {
    const double v = f[idx(rate)];
    if (v < 0.0 || v > 1.5) issues.push_back(std::string(rate) + " in [0, 1.5]");
  }
  return issues;
}

namespace {

std::string describe(const std::vector<std::string>& issues) {
  std::string s;
  for (const auto& i : issues) {
    if (!s.empty()) s += "; ";
    s += i;
  }
  return s;
}

void reject_or_throw(const ParseOptions& options, ParsedGames& out, std::size_t line,
                     const std::string& message) {
  if (options.strict) {
    throw ValidationError("line " + std::to_string(line) + ": " + message);
  }
  out.rejects.push_back({line, message});
}

void parse_game_level(std::istream& in, const Header& h, std::size_t column_count,
                      const ParseOptions& options, ParsedGames& out, std::size_t& line_no) {
  const std::size_t c_id = h.at("GAME_ID");
  const std::size_t c_date = h.at("GAME_DATE");
  const std::size_t c_season = h.at("SEASON_ID");
  const std::size_t c_home = h.at("HOME_TEAM_ID");
  const std::size_t c_away = h.at("AWAY_TEAM_ID");
  const std::size_t c_win = h.at("HOME_WIN");
  const auto home_cols = feature_columns(h, "HOME_");
  const auto away_cols = feature_columns(h, "AWAY_");

  struct Pending {
    GameResult game;
    FeatureArray home;
    FeatureArray away;
  };
  std::vector<Pending> pending;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++out.data_rows;
    const auto fields = split_csv_line(line);
    if (fields.size() != column_count) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(column_count) + " fields, found " +
                       std::to_string(fields.size()));
    }
    Pending p;
    p.game.game_id = fields[c_id];
    p.game.season_id = fields[c_season];
    try {
      p.game.game_date = parse_iso_date(fields[c_date]);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    p.game.home_team_id = fields[c_home];
    p.game.away_team_id = fields[c_away];
    p.game.home_win = parse_flag(fields[c_win], line_no, "HOME_WIN") ? 1 : 0;
    p.home = read_features(fields, home_cols, line_no, "HOME_");
    p.away = read_features(fields, away_cols, line_no, "AWAY_");

    auto home_issues = validate_team_stat(p.home);
    auto away_issues = validate_team_stat(p.away);
    if (!home_issues.empty() || !away_issues.empty()) {
      std::string msg;
      if (!home_issues.empty()) msg += "HOME violates " + describe(home_issues);
      if (!away_issues.empty()) {
        if (!msg.empty()) msg += "; ";
        msg += "AWAY violates " + describe(away_issues);
      }
      reject_or_throw(options, out, line_no, msg);
      continue;
    }
    pending.push_back(std::move(p));
  }

  std::stable_sort(pending.begin(), pending.end(),
                   [](const Pending& a, const Pending& b) { return game_order(a.game, b.game); });
  out.games.reserve(pending.size());
  out.rows.reserve(2 * pending.size());
  for (std::size_t g = 0; g < pending.size(); ++g) {
    Pending& p = pending[g];
    p.game.game_index = static_cast<std::int64_t>(g);
    for (int side = 0; side < 2; ++side) {
      TeamGameStat s;
      s.team_id = side == 0 ? p.game.home_team_id : p.game.away_team_id;
      s.game_id = p.game.game_id;
      s.season_id = p.game.season_id;
      s.game_date = p.game.game_date;
      s.game_index = p.game.game_index;
      s.is_home = side == 0;
      s.won = (side == 0) == (p.game.home_win == 1);
      s.features = side == 0 ? p.home : p.away;
      out.rows.push_back(std::move(s));
    }
    out.games.push_back(std::move(p.game));
  }
}

void parse_team_level(std::istream& in, const Header& h, std::size_t column_count,
                      const ParseOptions& options, ParsedGames& out, std::size_t& line_no) {
  const std::size_t c_id = h.at("GAME_ID");
  const std::size_t c_date = h.at("GAME_DATE");
  const std::size_t c_season = h.at("SEASON_ID");
  const std::size_t c_team = h.at("TEAM_ID");
  const std::size_t c_home = h.at("IS_HOME");
  const std::size_t c_won = h.at("WON");
  const auto cols = feature_columns(h, "");

  std::vector<RawTeamRow> raw;
  std::unordered_set<std::string> rejected_games;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++out.data_rows;
    const auto fields = split_csv_line(line);
    if (fields.size() != column_count) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(column_count) + " fields, found " +
                       std::to_string(fields.size()));
    }
    RawTeamRow r;
    r.line = line_no;
    r.stat.game_id = fields[c_id];
    r.stat.season_id = fields[c_season];
    try {
      r.stat.game_date = parse_iso_date(fields[c_date]);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    r.stat.team_id = fields[c_team];
    r.stat.is_home = parse_flag(fields[c_home], line_no, "IS_HOME");
    r.stat.won = parse_flag(fields[c_won], line_no, "WON");
    r.stat.features = read_features(fields, cols, line_no, "");
    const auto issues = validate_team_stat(r.stat.features);
    if (!issues.empty()) {
      reject_or_throw(options, out, line_no, "violates " + describe(issues));
      rejected_games.insert(r.stat.game_id);
      continue;
    }
    raw.push_back(std::move(r));
  }
  if (!rejected_games.empty()) {
    std::erase_if(raw, [&](const RawTeamRow& r) { return rejected_games.contains(r.stat.game_id); });
  }

  // Group by game id; every row of a game must agree on date and season.
  std::map<std::string, std::vector<std::size_t>> by_game;
  for (std::size_t i = 0; i < raw.size(); ++i) by_game[raw[i].stat.game_id].push_back(i);

  std::vector<GameResult> games;
  games.reserve(by_game.size());
  for (const auto& [game_id, members] : by_game) {
    const RawTeamRow& first = raw[members.front()];
    GameResult g;
    g.game_id = game_id;
    g.season_id = first.stat.season_id;
    g.game_date = first.stat.game_date;
    bool have_label = false;
    for (std::size_t m : members) {
      const RawTeamRow& r = raw[m];
      if (r.stat.game_date != g.game_date || r.stat.season_id != g.season_id) {
        throw ValidationError("line " + std::to_string(r.line) + ": game " + game_id +
                              " has rows with differing date or season");
      }
      if (r.stat.is_home) {
        if (g.home_team_id.empty()) g.home_team_id = r.stat.team_id;
        if (!have_label) g.home_win = r.stat.won ? 1 : 0;
        have_label = true;
      } else {
        if (g.away_team_id.empty()) g.away_team_id = r.stat.team_id;
        if (!have_label) g.home_win = r.stat.won ? 0 : 1;
        have_label = true;
      }
    }
    games.push_back(std::move(g));
  }
  std::stable_sort(games.begin(), games.end(), game_order);
  std::unordered_map<std::string, std::int64_t> game_pos;
  for (std::size_t i = 0; i < games.size(); ++i) {
    games[i].game_index = static_cast<std::int64_t>(i);
    game_pos[games[i].game_id] = games[i].game_index;
  }
  for (RawTeamRow& r : raw) r.stat.game_index = game_pos.at(r.stat.game_id);
  std::stable_sort(raw.begin(), raw.end(), [](const RawTeamRow& a, const RawTeamRow& b) {
    if (a.stat.game_index != b.stat.game_index) return a.stat.game_index < b.stat.game_index;
    return a.stat.is_home > b.stat.is_home;
  });
  out.rows.reserve(raw.size());
  for (RawTeamRow& r : raw) out.rows.push_back(std::move(r.stat));
  out.games = std::move(games);
}

}  // namespace

ParsedGames parse_game_rows(std::istream& in, const ParseOptions& options) {
  ParsedGames out;
  std::string header_line;
  std::size_t line_no = 0;
  while (std::getline(in, header_line)) {
    ++line_no;
    if (!trim(header_line).empty()) break;
  }
  if (trim(header_line).empty()) throw SchemaError("input has no header row");
  if (header_line.size() >= 3 && static_cast<unsigned char>(header_line[0]) == 0xEF &&
      static_cast<unsigned char>(header_line[1]) == 0xBB &&
      static_cast<unsigned char>(header_line[2]) == 0xBF) {
    header_line.erase(0, 3);
  }
  const auto names = split_csv_line(header_line);
  const Header h(names);
  if (h.has("HOME_TEAM_ID")) {
    out.layout = CsvLayout::GameLevel;
    parse_game_level(in, h, names.size(), options, out, line_no);
  } else if (h.has("TEAM_ID")) {
    out.layout = CsvLayout::TeamLevel;
    parse_team_level(in, h, names.size(), options, out, line_no);
  } else {
    throw SchemaError("missing required column 'HOME_TEAM_ID' (game-level) or 'TEAM_ID' (team-level)");
  }
  return out;
}

ParsedGames parse_game_rows_file(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return parse_game_rows(in, options);
}

MatchupTable lag_and_pair(const std::vector<TeamGameStat>& rows,
                          const std::vector<GameResult>& games, LagMode mode) {
  struct Sides {
    std::optional<std::size_t> home;
    std::optional<std::size_t> away;
  };
  std::unordered_map<std::string, std::size_t> game_slot;
  for (std::size_t g = 0; g < games.size(); ++g) {
    if (!game_slot.emplace(games[g].game_id, g).second) {
      throw ValidationError("duplicate game id " + games[g].game_id);
    }
  }
  std::vector<Sides> sides(games.size());
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const TeamGameStat& s = rows[r];
    if (!seen.insert(s.game_id + '\x1f' + s.team_id).second) {
      throw ValidationError("duplicate row for game " + s.game_id + ", team " + s.team_id);
    }
    auto it = game_slot.find(s.game_id);
    if (it == game_slot.end()) throw ValidationError("row references unknown game " + s.game_id);
    auto& slot = s.is_home ? sides[it->second].home : sides[it->second].away;
    if (slot) {
      throw ValidationError("game " + s.game_id + " has more than one " +
                            (s.is_home ? "home" : "away") + " participant");
    }
    slot = r;
  }

  std::vector<std::size_t> order(games.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return games[a].game_index < games[b].game_index;
  });

  MatchupTable table;
  std::vector<double> store;
  std::unordered_map<std::string, std::size_t> last;
  for (std::size_t g : order) {
    const GameResult& game = games[g];
    if (!sides[g].home) throw ValidationError("game " + game.game_id + " is missing its home participant");
    if (!sides[g].away) throw ValidationError("game " + game.game_id + " is missing its away participant");
    const std::size_t home_row = *sides[g].home;
    const std::size_t away_row = *sides[g].away;
    if (rows[home_row].won == rows[away_row].won) {
      throw ValidationError("game " + game.game_id + " rows disagree on the winner");
    }

    std::optional<std::size_t> home_src;
    std::optional<std::size_t> away_src;
    if (mode == LagMode::PreLagged) {
      home_src = home_row;
      away_src = away_row;
    } else {
      auto lookup = [&](const std::string& team) -> std::optional<std::size_t> {
        auto it = last.find(team);
        if (it == last.end()) return std::nullopt;
        if (mode == LagMode::WithinSeason && rows[it->second].season_id != game.season_id) {
          return std::nullopt;
        }
        return it->second;
      };
      home_src = lookup(rows[home_row].team_id);
      away_src = lookup(rows[away_row].team_id);
      last[rows[home_row].team_id] = home_row;
      last[rows[away_row].team_id] = away_row;
    }
    if (!home_src || !away_src) {
      ++table.dropped;
      continue;
    }
    MatchupExample ex;
    ex.game_id = game.game_id;
    ex.game_index = game.game_index;
    ex.season_id = game.season_id;
    ex.game_date = game.game_date;
    ex.home_team_id = rows[home_row].team_id;
    ex.away_team_id = rows[away_row].team_id;
    ex.label = rows[home_row].won ? 1 : 0;
    ex.home_source = *home_src;
    ex.away_source = *away_src;
    const auto& hf = rows[*home_src].features;
    const auto& af = rows[*away_src].features;
    store.insert(store.end(), hf.begin(), hf.end());
    store.insert(store.end(), af.begin(), af.end());
    table.examples.push_back(std::move(ex));
  }
  table.features = Matrix(table.examples.size(), kMatchupFeatureCount, std::move(store));
  return table;
}

std::string NormalizationStats::to_json() const {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "normalization";
  j["epsilon"] = kStdFloor;
  j["fitted_rows"] = fitted_rows;
  if (mean.size() == kMatchupFeatureCount) j["features"] = matchup_feature_names();
  j["mean"] = mean;
  j["std"] = stddev;
  return j.dump();
}

NormalizationStats NormalizationStats::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("normalization stats: ") + e.what());
  }
  if (!j.is_object() || j.value("format_version", 0) != kFormatVersion) {
    throw ValidationError("normalization stats: unsupported or missing format_version");
  }
  NormalizationStats s;
  try {
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("std").get<std::vector<double>>();
    s.fitted_rows = j.value("fitted_rows", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("normalization stats: ") + e.what());
  }
  if (s.mean.size() != s.stddev.size()) {
    throw ValidationError("normalization stats: mean and std lengths differ");
  }
  for (double sd : s.stddev) {
    if (!(sd >= kStdFloor)) throw ValidationError("normalization stats: std below epsilon floor");
  }
  return s;
}

NormalizationStats fit_normalizer(const Matrix& features, std::size_t train_rows) {
  if (train_rows == 0) throw ValidationError("cannot fit normalization: training split is empty");
  if (train_rows > features.rows()) throw ValidationError("training rows exceed available rows");
  const std::size_t f = features.cols();
  NormalizationStats s;
  s.fitted_rows = train_rows;
  s.mean.assign(f, 0.0);
  s.stddev.assign(f, 0.0);
  for (std::size_t r = 0; r < train_rows; ++r) {
    const auto row = features.row(r);
    for (std::size_t c = 0; c < f; ++c) s.mean[c] += row[c];
  }
  for (double& m : s.mean) m /= static_cast<double>(train_rows);
  for (std::size_t r = 0; r < train_rows; ++r) {
    const auto row = features.row(r);
    for (std::size_t c = 0; c < f; ++c) {
      const double d = row[c] - s.mean[c];
      s.stddev[c] += d * d;
    }
  }
  for (double& sd : s.stddev) {
    sd = std::max(std::sqrt(sd / static_cast<double>(train_rows)), NormalizationStats::kStdFloor);
  }
  return s;
}

Matrix apply_normalizer(const NormalizationStats& stats, const Matrix& features) {
  if (features.cols() != stats.feature_count()) {
    throw ShapeError("normalizer fitted on " + std::to_string(stats.feature_count()) +
                     " features, input has " + std::to_string(features.cols()));
  }
  Matrix out(features.rows(), features.cols());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto src = features.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) {
      dst[c] = (src[c] - stats.mean[c]) / stats.stddev[c];
    }
  }
  return out;
}

WindowSet build_windows(std::size_t row_count, std::size_t length, std::size_t stride,
                        bool include_target_row) {
  if (length == 0) throw ValidationError("sequence length must be at least 1");
  if (stride == 0) throw ValidationError("stride must be at least 1");
  WindowSet set;
  if (length >= row_count) {
    if (length > row_count) {
      set.warnings.push_back("sequence length " + std::to_string(length) + " exceeds row count " +
                             std::to_string(row_count) + "; no windows (N - L <= 0)");
    }
    return set;
  }
  const std::size_t count = (row_count - length - 1) / stride + 1;
  set.windows.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    SequenceWindow w;
    w.start = k * stride;
    w.length = length;
    w.target = w.start + length;
    w.include_target_row = include_target_row;
    set.windows.push_back(w);
  }
  return set;
}

WindowSet build_windows(const MatchupTable& table, std::size_t length, std::size_t stride,
                        bool include_target_row) {
  WindowSet set = build_windows(table.size(), length, stride, include_target_row);
  for (SequenceWindow& w : set.windows) w.target_label = table.examples[w.target].label;
  return set;
}

std::vector<std::string> seasons_in_order(const MatchupTable& table) {
  std::vector<std::string> seasons;
  std::unordered_set<std::string> seen;
  for (const auto& ex : table.examples) {
    if (seen.insert(ex.season_id).second) seasons.push_back(ex.season_id);
  }
  return seasons;
}

std::int64_t default_boundary(const MatchupTable& table) {
  const auto seasons = seasons_in_order(table);
  if (seasons.size() < 3) {
    throw ValidationError("default split holds out the final two seasons and needs at least three; "
                          "dataset has " + std::to_string(seasons.size()) +
                          " (pass an explicit boundary)");
  }
  const std::string& first_test = seasons[seasons.size() - 2];
  for (const auto& ex : table.examples) {
    if (ex.season_id == first_test) return ex.game_index;
  }
  throw ValidationError("season " + first_test + " not found");
}

DatasetSplit split_chronological(const MatchupTable& table,
                                 const std::vector<SequenceWindow>& windows,
                                 const SplitBoundary& boundary) {
  if (table.examples.empty()) throw ValidationError("cannot split an empty dataset");
  DatasetSplit split;
  if (boundary.season) {
    auto it = std::find_if(table.examples.begin(), table.examples.end(),
                           [&](const MatchupExample& e) { return e.season_id == *boundary.season; });
    if (it == table.examples.end()) {
      throw ValidationError("split boundary season '" + *boundary.season + "' is not in the dataset");
    }
    split.boundary = it->game_index;
  } else if (boundary.game_index) {
    const std::int64_t lo = table.examples.front().game_index;
    const std::int64_t hi = table.examples.back().game_index;
    if (*boundary.game_index < lo || *boundary.game_index > hi) {
      throw ValidationError("split boundary game index " + std::to_string(*boundary.game_index) +
                            " outside dataset range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
    }
    split.boundary = *boundary.game_index;
  } else {
    split.boundary = default_boundary(table);
  }

  for (std::size_t k = 0; k < windows.size(); ++k) {
    const std::int64_t target_game = table.examples.at(windows[k].target).game_index;
    (target_game < split.boundary ? split.train : split.test).push_back(k);
  }
  while (split.train_rows < table.size() &&
         table.examples[split.train_rows].game_index < split.boundary) {
    ++split.train_rows;
  }
  if (split.train.empty()) {
    split.warnings.push_back("split boundary precedes every prediction target; training side is empty");
  }
  if (split.test.empty()) split.warnings.push_back("split leaves the test side empty");
  return split;
}

PlantedRule parse_planted_rule(std::string_view name) {
  if (name == "none") return PlantedRule::None;
  if (name == "feature_threshold") return PlantedRule::FeatureThreshold;
  if (name == "temporal_lag_k") return PlantedRule::TemporalLagK;
  throw ValidationError("unknown planted rule '" + std::string(name) +
                        "' (expected none, feature_threshold or temporal_lag_k)");
}

std::string_view planted_rule_name(PlantedRule rule) {
  switch (rule) {
    case PlantedRule::None: return "none";
    case PlantedRule::FeatureThreshold: return "feature_threshold";
    case PlantedRule::TemporalLagK: return "temporal_lag_k";
  }
  return "none";
}

namespace {

struct PlantSpec {
  std::string_view name;
  double center;
  double spread;
};

constexpr std::array<PlantSpec, 5> kPlantable = {{{"PIE", 0.5, 0.05},
                                                   {"PCT_PTS_PAINT", 0.45, 0.05},
                                                   {"PCT_PTS_FB", 0.12, 0.03},
                                                   {"PCT_PTS_OFF_TOV", 0.16, 0.03},
                                                   {"PACE", 98.0, 3.0}}};

const PlantSpec& plant_spec(std::string_view feature) {
  for (const auto& p : kPlantable) {
    if (p.name == feature) return p;
  }
  throw ValidationError("feature '" + std::string(feature) + "' cannot carry a planted rule");
}

struct BoxScore {
  int fga = 0, fg3a = 0, fg2m = 0, fg3m = 0, fta = 0, ftm = 0;
  int oreb = 0, dreb = 0, ast = 0, stl = 0, blk = 0, tov = 0, pf = 0;
  double poss = 0;
  int points() const { return 2 * fg2m + 3 * fg3m + ftm; }
};

int binomial(Rng& rng, int n, double p) {
  int k = 0;
  for (int i = 0; i < n; ++i) k += rng.bernoulli(p) ? 1 : 0;
  return k;
}

int rounded_at_least(double v, int lo) { return std::max(lo, static_cast<int>(std::lround(v))); }

BoxScore draw_box(Rng& rng, double strength, bool home) {
  BoxScore b;
  b.poss = 98.0 + 3.0 * rng.normal();
  b.fga = std::clamp(static_cast<int>(std::lround(86.0 + 5.0 * rng.normal())), 60, 120);
  b.fg3a = static_cast<int>(std::lround(b.fga * rng.uniform(0.25, 0.42)));
  const double p2 = std::clamp(0.50 + 0.02 * strength + (home ? 0.01 : 0.0), 0.3, 0.7);
  const double p3 = std::clamp(0.355 + 0.01 * strength, 0.2, 0.5);
  b.fg2m = binomial(rng, b.fga - b.fg3a, p2);
  b.fg3m = binomial(rng, b.fg3a, p3);
  b.fta = rounded_at_least(22.0 + 4.0 * rng.normal(), 0);
  b.ftm = binomial(rng, b.fta, 0.77);
  b.oreb = rounded_at_least(10.0 + 3.0 * rng.normal(), 0);
  b.dreb = rounded_at_least(34.0 + 4.0 * rng.normal(), 0);
  b.ast = static_cast<int>(std::lround((b.fg2m + b.fg3m) * rng.uniform(0.5, 0.68)));
  b.stl = rounded_at_least(7.5 + 2.5 * rng.normal(), 0);
  b.blk = rounded_at_least(5.0 + 2.0 * rng.normal(), 0);
  b.tov = rounded_at_least(13.5 + 3.0 * rng.normal(), 0);
  b.pf = rounded_at_least(20.0 + 3.5 * rng.normal(), 0);
  return b;
}

FeatureArray team_features(const BoxScore& own, const BoxScore& opp, int wins, int losses,
                           Rng& rng) {
  FeatureArray f{};
  auto set = [&](std::string_view name, double v) { f[idx(name)] = v; };
  const int fgm = own.fg2m + own.fg3m;
  const int pts = own.points();
  const int opp_pts = opp.points();
  const double poss = std::max(own.poss, 1.0);
  set("WINS", wins);
  set("LOSSES", losses);
  set("FGM", fgm);
  set("FGA", own.fga);
  set("FG3A", own.fg3a);
  set("FG3M", own.fg3m);
  set("FTA", own.fta);
  set("FTM", own.ftm);
  set("OREB", own.oreb);
  set("DREB", own.dreb);
  set("AST", own.ast);
  set("STL", own.stl);
  set("BLK", own.blk);
  set("TO", own.tov);
  set("PF", own.pf);
  set("PTS", pts);
  set("PLUS_MINUS", pts - opp_pts);
  set("OFF_RATING", 100.0 * pts / poss);
  set("DEF_RATING", 100.0 * opp_pts / poss);
  set("AST_PCT", fgm > 0 ? static_cast<double>(own.ast) / fgm : 0.0);
  set("AST_TOV", static_cast<double>(own.ast) / std::max(own.tov, 1));
  set("AST_RATIO", 100.0 * own.ast / poss);
  set("OREB_PCT", own.oreb + opp.dreb > 0 ? static_cast<double>(own.oreb) / (own.oreb + opp.dreb) : 0.0);
  set("DREB_PCT", own.dreb + opp.oreb > 0 ? static_cast<double>(own.dreb) / (own.dreb + opp.oreb) : 0.0);
  set("TM_TOV_PCT", std::min(own.tov / poss, 1.5));
  set("EFG_PCT", own.fga > 0 ? (fgm + 0.5 * own.fg3m) / own.fga : 0.0);
  const double ts_den = 2.0 * (own.fga + 0.44 * own.fta);
  set("TS_PCT", ts_den > 0 ? std::min(pts / ts_den, 1.5) : 0.0);
  set("PACE", own.poss * (1.0 + 0.01 * rng.normal()));
  set("POSS", std::round(own.poss));
  set("PIE", std::clamp(0.5 + 0.004 * (pts - opp_pts) + 0.03 * rng.normal(), 0.0, 1.0));
  set("PCT_PTS_PAINT", std::clamp(0.45 + 0.05 * rng.normal(), 0.0, 1.0));
  set("PCT_PTS_FB", std::clamp(0.12 + 0.03 * rng.normal(), 0.0, 1.0));
  set("PCT_PTS_OFF_TOV", std::clamp(0.16 + 0.03 * rng.normal(), 0.0, 1.0));
  return f;
}

std::string season_label(int year) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, (year + 1) % 100);
  return buf;
}

}  // namespace

const std::vector<std::string>& plantable_features() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& p : kPlantable) n.emplace_back(p.name);
    return n;
  }();
  return names;
}

double planted_threshold(std::string_view feature) { return plant_spec(feature).center; }

SyntheticData synthesize_schedule(const SynthParams& params) {
  if (params.teams < 2) throw ValidationError("synthetic schedule needs at least 2 teams");
  if (params.seasons < 1) throw ValidationError("synthetic schedule needs at least 1 season");
  if (params.games_per_season < 0) throw ValidationError("games per season must be non-negative");
  if (params.noise < 0.0 || params.noise > 0.5) throw ValidationError("label noise must be in [0, 0.5]");
  if (params.rule == PlantedRule::TemporalLagK && params.lag_k < 1) {
    throw ValidationError("temporal_lag_k needs k >= 1");
  }
  const int per_round = params.teams / 2;
  const int games = params.games_per_season == 0 ? per_round * 82 : params.games_per_season;
  const int rounds = (games + per_round - 1) / per_round;
  if (rounds > 82) {
    throw ValidationError("games per season " + std::to_string(games) +
                          " would give some team more than 82 games");
  }
  const bool planted = params.rule != PlantedRule::None;
  const PlantSpec* plant = planted ? &plant_spec(params.planted_feature) : nullptr;
  const std::size_t plant_col = planted ? idx(plant->name) : 0;
  const int lag = params.rule == PlantedRule::TemporalLagK ? params.lag_k : 0;

  Rng rng(params.seed);
  SyntheticData out;
  ParsedGames& pg = out.games;
  pg.layout = CsvLayout::GameLevel;

  std::vector<std::string> team_ids;
  for (int t = 0; t < params.teams; ++t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "T%02d", t + 1);
    team_ids.emplace_back(buf);
  }
  std::vector<double> strength(params.teams);
  for (double& s : strength) s = rng.normal();

  // Mirrors the cross-season lag so planted labels can reference example rows.
  std::vector<std::optional<FeatureArray>> last(params.teams);
  std::vector<double> example_signal;

  std::int64_t game_index = 0;
  for (int season = 0; season < params.seasons; ++season) {
    const int year = params.first_season_year + season;
    const std::string season_id = season_label(year);
    const Date opener = std::chrono::sys_days{std::chrono::year{year} / std::chrono::October / 20};
    if (season > 0) {
      for (double& s : strength) s = 0.6 * s + 0.8 * rng.normal();
    }
    std::vector<int> wins(params.teams, 0);
    std::vector<int> losses(params.teams, 0);
    std::vector<int> perm(params.teams);
    int played = 0;
    for (int round = 0; round < rounds && played < games; ++round) {
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (int p = 0; p < per_round && played < games; ++p, ++played) {
        int home = perm[2 * p];
        int away = perm[2 * p + 1];
        if (rng.bernoulli(0.5)) std::swap(home, away);

        int label = -1;
        if (planted) {
          if (last[home] && last[away]) {
            example_signal.push_back((*last[home])[plant_col]);
            const std::size_t e = example_signal.size() - 1;
            if (e >= static_cast<std::size_t>(lag)) {
              label = example_signal[e - lag] > plant->center ? 1 : 0;
              if (rng.bernoulli(params.noise)) label = 1 - label;
            }
          }
          if (label < 0) label = rng.bernoulli(0.5) ? 1 : 0;
        }

        BoxScore hb = draw_box(rng, strength[home], true);
        BoxScore ab = draw_box(rng, strength[away], false);
        if (label < 0) {
          label = hb.points() == ab.points() ? (rng.bernoulli(0.5) ? 1 : 0)
                                             : (hb.points() > ab.points() ? 1 : 0);
        } else if ((hb.points() > ab.points()) != (label == 1) && hb.points() != ab.points()) {
          std::swap(hb, ab);
        }
        if (hb.points() == ab.points()) {
          BoxScore& winner = label == 1 ? hb : ab;
          ++winner.fta;
          ++winner.ftm;
        }
        (label == 1 ? wins[home] : losses[home])++;
        (label == 1 ? losses[away] : wins[away])++;

        GameResult g;
        char gid[32];
        std::snprintf(gid, sizeof gid, "SYN%04d%05d", year, played);
        g.game_id = gid;
        g.season_id = season_id;
        g.game_date = opener + std::chrono::days{round};
        g.game_index = game_index++;
        g.home_team_id = team_ids[home];
        g.away_team_id = team_ids[away];
        g.home_win = label;

        FeatureArray hf = team_features(hb, ab, wins[home], losses[home], rng);
        FeatureArray af = team_features(ab, hb, wins[away], losses[away], rng);
        if (planted) {
          hf[plant_col] = std::max(0.0, plant->center + plant->spread * rng.normal());
          af[plant_col] = std::max(0.0, plant->center + plant->spread * rng.normal());
        }
        last[home] = hf;
        last[away] = af;

        for (int side = 0; side < 2; ++side) {
          TeamGameStat s;
          s.team_id = side == 0 ? g.home_team_id : g.away_team_id;
          s.game_id = g.game_id;
          s.season_id = season_id;
          s.game_date = g.game_date;
          s.game_index = g.game_index;
          s.is_home = side == 0;
          s.won = (side == 0) == (label == 1);
          s.features = side == 0 ? hf : af;
          pg.rows.push_back(std::move(s));
        }
        pg.games.push_back(std::move(g));
      }
    }
  }
  pg.data_rows = pg.games.size();

  std::ostringstream desc;
  switch (params.rule) {
    case PlantedRule::None:
      desc << "none: home win iff home points exceed away points (team strength drives shooting)";
      break;
    case PlantedRule::FeatureThreshold:
    case PlantedRule::TemporalLagK:
      desc << planted_rule_name(params.rule) << ": label(example e) = [HOME_" << plant->name
           << "(example e-" << lag << ") > " << format_double(plant->center)
           << "], flipped with probability " << format_double(params.noise)
           << "; examples indexed after cross-season lag, earlier examples use a fair coin";
      break;
  }
  out.rule_description = desc.str();
  return out;
}

namespace {

void write_header(std::ostream& out) {
  out << "GAME_ID,GAME_DATE,SEASON_ID,HOME_TEAM_ID,AWAY_TEAM_ID,HOME_WIN";
  for (const auto& n : matchup_feature_names()) out << ',' << n;
  out << '\n';
}

void write_row(std::ostream& out, const std::string& game_id, Date date, const std::string& season,
               const std::string& home, const std::string& away, int home_win,
               std::span<const double> home_features, std::span<const double> away_features) {
  out << game_id << ',' << format_iso_date(date) << ',' << season << ',' << home << ',' << away
      << ',' << home_win;
  for (double v : home_features) out << ',' << format_double(v);
  for (double v : away_features) out << ',' << format_double(v);
  out << '\n';
}

}  // namespace

void write_game_csv(std::ostream& out, const ParsedGames& games) {
  std::unordered_map<std::string, std::pair<const TeamGameStat*, const TeamGameStat*>> sides;
  for (const auto& r : games.rows) {
    auto& s = sides[r.game_id];
    (r.is_home ? s.first : s.second) = &r;
  }
  write_header(out);
  for (const auto& g : games.games) {
    const auto& s = sides.at(g.game_id);
    if (s.first == nullptr || s.second == nullptr) {
      throw ValidationError("game " + g.game_id + " lacks a home or away row");
    }
    write_row(out, g.game_id, g.game_date, g.season_id, g.home_team_id, g.away_team_id, g.home_win,
              s.first->features, s.second->features);
  }
}

void write_matchup_csv(std::ostream& out, const MatchupTable& table) {
  write_header(out);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table.examples[i];
    const auto row = table.feature_row(i);
    write_row(out, e.game_id, e.game_date, e.season_id, e.home_team_id, e.away_team_id, e.label,
              row.first(kTeamFeatureCount), row.subspan(kTeamFeatureCount));
  }
}

}  // namespace hoopseq
