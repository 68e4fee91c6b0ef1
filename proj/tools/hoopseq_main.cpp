#include <charconv>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hoopseq/hoopseq.h"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

const char* const kEnvPrefix = "HOOPSEQ_";

// Keys consumed by the CLI itself; everything else in a config file is a run setting.
const std::vector<std::string> kCliKeys = {"config",   "out",        "data",    "synth",           "pre_lagged",
                                           "within_season", "lenient", "checkpoint", "input", "with_paper_rows",
                                           "reports",  "dry_run",    "verbose"};

const std::vector<std::string> kSynthKeys = {"teams", "seasons", "games_per_season", "seed", "rule",
                                             "k",     "noise",   "feature",          "first_season_year"};

struct Failure {
  int code;
  std::string message;
};

int exit_code_for(hs_status s) {
  switch (s) {
    case HS_OK: return kExitOk;
    case HS_ERR_IO: return kExitIo;
    case HS_ERR_NUMERIC: return kExitNumeric;
    default: return kExitUsage;
  }
}

void check(hs_status s) {
  if (s != HS_OK) {
    std::string msg = hs_last_error();
    if (s == HS_ERR_INTERNAL) msg = "internal error: " + msg;
    throw Failure{exit_code_for(s), msg};
  }
}

struct CString {
  char* p = nullptr;
  ~CString() { hs_free_string(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct DatasetHandle {
  hs_dataset* p = nullptr;
  ~DatasetHandle() { hs_dataset_free(p); }
};

struct ModelHandle {
  hs_model* p = nullptr;
  ~ModelHandle() { hs_model_free(p); }
};

std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string flag_name(const std::string& key) {
  std::string out = "--";
  for (char c : key) out += c == '_' ? '-' : c;
  return out;
}

struct Binding {
  std::string key;
  bool is_flag = false;
  std::string value;
  bool flag = false;
  CLI::Option* option = nullptr;
};

class Command {
 public:
  Command(CLI::App& app, const std::string& name, const std::string& description)
      : sub_(app.add_subcommand(name, description)) {
    value("config", "JSON config file; its keys use the snake_case flag names");
    value("out", "output directory (default: current directory)");
    value("seed", "random seed (u64)");
  }

  Command& value(const std::string& key, const std::string& help) {
    auto& b = bindings_.emplace_back();
    b.key = key;
    b.option = sub_->add_option(flag_name(key), b.value, help)->envname(env_name(key));
    return *this;
  }

  Command& flag(const std::string& key, const std::string& help) {
    auto& b = bindings_.emplace_back();
    b.key = key;
    b.is_flag = true;
    b.option = sub_->add_flag(flag_name(key), b.flag, help)->envname(env_name(key));
    return *this;
  }

  Command& positional(const std::string& key, std::vector<std::string>* target, const std::string& help) {
    positional_key_ = key;
    positional_ = target;
    sub_->add_option(key, *target, help);
    return *this;
  }

  CLI::App* app() const { return sub_; }
  bool parsed() const { return sub_->parsed(); }

  // Config file, then environment and flags on top.
  json settings() const {
    json cfg = json::object();
    for (const auto& b : bindings_) {
      if (b.key == "config" && b.option->count() > 0) cfg = read_config(b.value);
    }
    for (const auto& b : bindings_) {
      if (b.key == "config" || b.option->count() == 0) continue;
      cfg[b.key] = b.is_flag ? json(b.flag) : json(b.value);
    }
    if (positional_ != nullptr && !positional_->empty()) cfg[positional_key_] = *positional_;
    return cfg;
  }

 private:
  static json read_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{kExitIo, "cannot read config file '" + path + "'"};
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Failure{kExitUsage, "config file '" + path + "' is not valid JSON: " + e.what()};
    }
    if (!j.is_object()) throw Failure{kExitUsage, "config file '" + path + "' must hold a JSON object"};
    return j;
  }

  CLI::App* sub_;
  std::deque<Binding> bindings_;
  std::string positional_key_;
  std::vector<std::string>* positional_ = nullptr;
};

std::string as_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

bool as_bool(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) return false;
  const json& v = cfg[key];
  if (v.is_boolean()) return v.get<bool>();
  const std::string s = as_text(v);
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw Failure{kExitUsage, "setting '" + key + "' expects true or false, got '" + s + "'"};
}

json run_settings(const json& cfg) {
  json run = json::object();
  for (const auto& [key, v] : cfg.items()) {
    if (std::find(kCliKeys.begin(), kCliKeys.end(), key) == kCliKeys.end()) run[key] = v;
  }
  return run;
}

fs::path out_dir(const json& cfg) {
  const fs::path dir = cfg.contains("out") ? fs::path(as_text(cfg["out"])) : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Failure{kExitIo, "cannot create output directory '" + dir.string() + "'" +
                               (ec ? ": " + ec.message() : std::string())};
  }
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Failure{kExitIo, "cannot write '" + path.string() + "'"};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitIo, "cannot read '" + path.string() + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Top-level keys count only for the synth command; elsewhere --seed seeds training.
json synth_params(const json& cfg, bool top_level) {
  json params = json::object();
  if (cfg.contains("synth")) {
    if (!cfg["synth"].is_object()) throw Failure{kExitUsage, "config key 'synth' must be an object"};
    params = cfg["synth"];
  }
  for (const auto& key : kSynthKeys) {
    if (top_level && cfg.contains(key)) params[key] = cfg[key];
  }
  return params;
}

std::string dataset_options(const json& cfg) {
  const bool pre = as_bool(cfg, "pre_lagged");
  const bool within = as_bool(cfg, "within_season");
  if (pre && within) throw Failure{kExitUsage, "--pre-lagged and --within-season cannot be combined"};
  json o = {{"strict", !as_bool(cfg, "lenient")},
            {"lag_mode", pre ? "pre_lagged" : within ? "within_season" : "cross_season"}};
  return o.dump();
}

// --data, or a synth block in the config.
void open_dataset(const json& cfg, DatasetHandle& ds) {
  if (cfg.contains("data")) {
    check(hs_dataset_load(as_text(cfg["data"]).c_str(), dataset_options(cfg).c_str(), &ds.p));
  } else if (cfg.contains("synth")) {
    check(hs_dataset_synthesize(synth_params(cfg, false).dump().c_str(), &ds.p));
  } else {
    throw Failure{kExitUsage, "no dataset: pass --data <games.csv> or put a \"synth\" block in --config"};
  }
}

std::string describe_report(const std::string& report_text) {
  const json r = json::parse(report_text);
  auto metric = [&](const char* key) {
    return r[key].is_null() ? std::string("NA") : format_double(r[key].get<double>());
  };
  return r["model"].get<std::string>() + ": accuracy " + metric("accuracy") + ", precision " + metric("precision") +
         ", auc_roc " + metric("auc_roc") + " on " + std::to_string(r["n"].get<std::size_t>()) + " test examples";
}

int cmd_synth(const json& cfg) {
  const json params = synth_params(cfg, true);
  CString resolved;
  check(hs_synth_resolve(params.dump().c_str(), &resolved.p));
  DatasetHandle ds;
  check(hs_dataset_synthesize(resolved.p, &ds.p));
  const fs::path dir = out_dir(cfg);
  check(hs_dataset_write_games_csv(ds.p, (dir / "games.csv").string().c_str()));
  CString summary;
  check(hs_dataset_summary(ds.p, &summary.p));
  const json s = json::parse(summary.str());
  ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["generator"] = std::string("hoopseq synth ") + hs_version();
  manifest["params"] = ordered_json::parse(resolved.str());
  manifest["seed"] = manifest["params"]["seed"];
  manifest["planted_rule"] = s.value("planted_rule", "none");
  manifest["games_file"] = "games.csv";
  manifest["summary"] = ordered_json::parse(summary.str());
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << (dir / "games.csv").string() << " (" << s["games"].get<std::size_t>() << " games) and "
            << (dir / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_ingest(const json& cfg) {
  DatasetHandle ds;
  open_dataset(cfg, ds);
  json boundary = json::object();
  for (const char* key : {"boundary_season", "boundary_index"}) {
    if (cfg.contains(key)) boundary[key] = cfg[key];
  }
  CString norm;
  check(hs_dataset_normalization(ds.p, boundary.dump().c_str(), &norm.p));
  CString summary;
  check(hs_dataset_summary(ds.p, &summary.p));
  const fs::path dir = out_dir(cfg);
  check(hs_dataset_write_matchups_csv(ds.p, (dir / "matchups.csv").string().c_str()));
  write_file(dir / "normalization.json", norm.str() + (norm.str().ends_with('\n') ? "" : "\n"));
  write_file(dir / "ingest_summary.json", summary.str());
  const json s = json::parse(summary.str());
  std::cout << "ingested " << s["examples"].get<std::size_t>() << " matchup examples from "
            << s["games"].get<std::size_t>() << " games; rejected rows: " << s["rejected_rows"].size() << "\n";
  return kExitOk;
}

void print_progress(size_t epoch, double train_loss, double val_loss, void*) {
  std::cerr << "epoch " << epoch << " train_loss " << format_double(train_loss);
  if (!std::isnan(val_loss)) std::cerr << " val_loss " << format_double(val_loss);
  std::cerr << "\n";
}

int cmd_train(const json& cfg) {
  const std::string run = run_settings(cfg).dump();
  if (as_bool(cfg, "dry_run")) {
    CString text;
    check(hs_dry_run(run.c_str(), &text.p));
    std::cout << text.str();
    return kExitOk;
  }
  DatasetHandle ds;
  open_dataset(cfg, ds);
  const fs::path dir = out_dir(cfg);
  ModelHandle model;
  check(hs_model_train(ds.p, run.c_str(), as_bool(cfg, "verbose") ? print_progress : nullptr, nullptr, &model.p));
  CString loss, report;
  check(hs_model_loss_csv(model.p, &loss.p));
  check(hs_model_report(model.p, &report.p));
  check(hs_model_save(model.p, (dir / "checkpoint.json").string().c_str()));
  write_file(dir / "loss.csv", loss.str());
  write_file(dir / "report.json", report.str());
  std::cout << describe_report(report.str()) << "\n";
  std::cout << "wrote checkpoint.json, loss.csv and report.json to " << dir.string() << "\n";
  return kExitOk;
}

std::string required(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw Failure{kExitUsage, flag_name(key) + " is required"};
  return as_text(cfg[key]);
}

int cmd_evaluate(const json& cfg) {
  ModelHandle model;
  check(hs_model_load(required(cfg, "checkpoint").c_str(), &model.p));
  DatasetHandle ds;
  open_dataset(cfg, ds);
  CString report;
  check(hs_model_evaluate(model.p, ds.p, &report.p));
  const fs::path dir = out_dir(cfg);
  write_file(dir / "report.json", report.str());
  std::cout << describe_report(report.str()) << "\n";
  return kExitOk;
}

int cmd_compare(const json& cfg) {
  std::vector<std::string> paths;
  if (cfg.contains("reports")) {
    const json& r = cfg["reports"];
    if (r.is_array()) {
      for (const auto& p : r) paths.push_back(as_text(p));
    } else {
      paths.push_back(as_text(r));
    }
  }
  if (paths.empty()) throw Failure{kExitUsage, "compare needs at least one report file"};
  std::vector<std::string> texts;
  for (const auto& p : paths) texts.push_back(read_file(p));
  std::vector<const char*> ptrs;
  for (const auto& t : texts) ptrs.push_back(t.c_str());
  CString csv, js;
  check(hs_compare(ptrs.data(), ptrs.size(), as_bool(cfg, "with_paper_rows") ? 1 : 0, &csv.p, &js.p));
  const fs::path dir = out_dir(cfg);
  write_file(dir / "comparison.csv", csv.str());
  write_file(dir / "comparison.json", js.str());
  std::cout << csv.str();
  return kExitOk;
}

int cmd_predict(const json& cfg) {
  ModelHandle model;
  check(hs_model_load(required(cfg, "checkpoint").c_str(), &model.p));
  double* rows = nullptr;
  size_t n_rows = 0, n_cols = 0;
  check(hs_feature_rows_load(required(cfg, "input").c_str(), &rows, &n_rows, &n_cols));
  std::unique_ptr<double, void (*)(double*)> owned(rows, hs_free_doubles);
  std::vector<double> probs(std::max<size_t>(1, n_rows));
  size_t written = 0;
  check(hs_model_predict(model.p, rows, n_rows, n_cols, probs.data(), probs.size(), &written));
  std::cout << "probability,class\n";
  for (size_t i = 0; i < written; ++i) {
    std::cout << format_double(probs[i]) << "," << (probs[i] >= 0.5 ? 1 : 0) << "\n";
  }
  return kExitOk;
}

const char* const kFooter =
    "Settings are resolved as: command-line flags, then HOOPSEQ_* environment variables\n"
    "(HOOPSEQ_ plus the upper-case flag name with '-' as '_', e.g. HOOPSEQ_SEQ_LEN), then\n"
    "the --config JSON file (snake_case keys, e.g. \"seq_len\"), then built-in defaults.\n"
    "Exit codes: 0 success, 1 usage or validation error, 2 I/O error, 3 numerical failure.";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hoopseq: sequence models for home-win prediction from lagged game statistics"};
  app.footer(kFooter);
  app.require_subcommand(1);
  app.set_version_flag("--version", hs_version());

  Command synth(app, "synth", "generate a synthetic league with an optional planted rule");
  synth.value("teams", "number of teams (even)")
      .value("seasons", "number of seasons")
      .value("games_per_season", "games per season (0: 82 per team)")
      .value("rule", "planted rule: none, feature_threshold or temporal_lag_k")
      .value("k", "lag for temporal_lag_k")
      .value("noise", "label flip probability")
      .value("feature", "planted feature for feature_threshold (e.g. HOME_PIE)")
      .value("first_season_year", "start year of the first season");

  Command ingest(app, "ingest", "parse a game CSV, lag features and write the matchup table");
  ingest.value("data", "game-level or team-level CSV")
      .flag("pre_lagged", "features in the file are already lagged")
      .flag("within_season", "do not carry the lag across season boundaries")
      .flag("lenient", "skip malformed rows instead of failing")
      .value("boundary_season", "first test season (default: final two seasons held out)")
      .value("boundary_index", "first test game index");

  Command train(app, "train", "train a model and write checkpoint, loss curve and held-out report");
  train.value("data", "game-level or team-level CSV (or a \"synth\" block in --config)")
      .value("model", "lstm, logreg, forest, mlp or cnn")
      .value("profile", "desk (scaled) or paper (L=9840, 200/100/50; compute-heavy)")
      .value("seq_len", "window length L")
      .value("stride", "window stride")
      .flag("include_target_row", "append the target game's feature row as the last timestep")
      .value("epochs", "training epochs")
      .value("batch_size", "mini-batch size")
      .value("lr", "learning rate")
      .value("bptt", "truncated backpropagation span")
      .value("clip", "gradient norm clip")
      .value("val_fraction", "fraction of training windows held out for early stopping")
      .value("boundary_season", "first test season")
      .value("boundary_index", "first test game index")
      .value("lstm_units", "LSTM layer widths, e.g. 50,25,12")
      .value("head_units", "dense head width")
      .value("dropout", "dropout rate")
      .value("trees", "forest size")
      .value("max_depth", "forest depth limit (-1 for none)")
      .value("logreg_c", "inverse L2 strength for logistic regression")
      .flag("pre_lagged", "features in the file are already lagged")
      .flag("within_season", "do not carry the lag across season boundaries")
      .flag("lenient", "skip malformed rows instead of failing")
      .flag("dry_run", "print the layer shape walkthrough and exit without reading data")
      .flag("verbose", "print per-epoch losses to stderr");

  Command evaluate(app, "evaluate", "recompute the held-out report from a checkpoint");
  evaluate.value("checkpoint", "checkpoint.json from train")
      .value("data", "game CSV the checkpoint was trained on")
      .flag("pre_lagged", "features in the file are already lagged")
      .flag("within_season", "do not carry the lag across season boundaries")
      .flag("lenient", "skip malformed rows instead of failing");

  std::vector<std::string> report_files;
  Command compare(app, "compare", "merge report files into comparison.csv and comparison.json");
  compare.positional("reports", &report_files, "report.json files")
      .flag("with_paper_rows", "append the published reference numbers (source=paper)");

  Command predict(app, "predict", "print home-win probabilities for feature rows");
  predict.value("checkpoint", "checkpoint.json from train")
      .value("input", "CSV with HOME_/AWAY_ feature columns; sequence models take exactly L rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::vector<std::pair<Command*, int (*)(const json&)>> commands = {
      {&synth, cmd_synth},       {&ingest, cmd_ingest},   {&train, cmd_train},
      {&evaluate, cmd_evaluate}, {&compare, cmd_compare}, {&predict, cmd_predict}};
  for (const auto& [command, run] : commands) {
    if (!command->parsed()) continue;
    try {
      return run(command->settings());
    } catch (const Failure& f) {
      std::cerr << "hoopseq " << command->app()->get_name() << ": error: " << f.message << "\n";
      if (f.code == kExitUsage) {
        std::cerr << "run 'hoopseq " << command->app()->get_name() << " --help' for usage\n";
      }
      return f.code;
    } catch (const std::exception& e) {
      std::cerr << "hoopseq " << command->app()->get_name() << ": error: " << e.what() << "\n";
      return kExitUsage;
    }
  }
  return kExitUsage;
}
