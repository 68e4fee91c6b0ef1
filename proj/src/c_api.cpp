#include "hoopseq/hoopseq.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <new>

#include "error.hpp"
#include "pipeline.hpp"

struct hs_dataset {
  hoopseq::LoadedDataset data;
};

struct hs_model {
  hoopseq::TrainedModel model;
};

namespace {

thread_local std::string g_last_error;

hs_status fail(hs_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs `body`, mapping exceptions onto status codes.
template <typename F>
hs_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return HS_OK;
  } catch (const hoopseq::Error& e) {
    switch (e.kind()) {
      case hoopseq::ErrorKind::Validation: return fail(HS_ERR_USAGE, e.what());
      case hoopseq::ErrorKind::Io: return fail(HS_ERR_IO, e.what());
      case hoopseq::ErrorKind::Numeric: return fail(HS_ERR_NUMERIC, e.what());
    }
    return fail(HS_ERR_INTERNAL, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(HS_ERR_USAGE, std::string("invalid JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(HS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(HS_ERR_INTERNAL, e.what());
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) throw hoopseq::ValidationError(std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_json_arg(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw hoopseq::ValidationError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

hoopseq::DatasetOptions dataset_options(const nlohmann::json& j) {
  hoopseq::DatasetOptions o;
  for (const auto& [key, v] : j.items()) {
    if (key == "strict") o.strict = v.get<bool>();
    else if (key == "lag_mode") o.lag_mode = hoopseq::parse_lag_mode(v.get<std::string>());
    else throw hoopseq::ValidationError("unknown dataset option '" + key + "'");
  }
  return o;
}

void write_with(const char* path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw hoopseq::IoError(std::string("cannot open '") + path + "' for writing");
  fn(out);
  if (!out) throw hoopseq::IoError(std::string("failed writing '") + path + "'");
}

}  // namespace

extern "C" {

const char* hs_version(void) { return "1.0.0"; }

const char* hs_last_error(void) { return g_last_error.c_str(); }

void hs_free_string(char* s) { std::free(s); }

void hs_free_doubles(double* values) { std::free(values); }

size_t hs_feature_count(void) { return hoopseq::kMatchupFeatureCount; }

hs_status hs_dataset_synthesize(const char* params_json, hs_dataset** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const auto params = hoopseq::synth_params_from_json(parse_json_arg(params_json, "synth parameters"));
    *out = new hs_dataset{hoopseq::synthesize_dataset(params)};
  });
}

hs_status hs_synth_resolve(const char* params_json, char** json_out) {
  return guarded([&] {
    require(json_out, "json_out");
    const auto params = hoopseq::synth_params_from_json(parse_json_arg(params_json, "synth parameters"));
    *json_out = dup_string(hoopseq::synth_params_to_json(params).dump());
  });
}

hs_status hs_dataset_load(const char* csv_path, const char* options_json, hs_dataset** out) {
  return guarded([&] {
    require(csv_path, "csv_path");
    require(out, "out");
    *out = nullptr;
    const auto options = dataset_options(parse_json_arg(options_json, "dataset options"));
    *out = new hs_dataset{hoopseq::load_dataset(csv_path, options)};
  });
}

hs_status hs_dataset_write_games_csv(const hs_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds, "dataset");
    require(path, "path");
    write_with(path, [&](std::ostream& o) { hoopseq::write_game_csv(o, ds->data.games); });
  });
}

hs_status hs_dataset_write_matchups_csv(const hs_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds, "dataset");
    require(path, "path");
    write_with(path, [&](std::ostream& o) { hoopseq::write_matchup_csv(o, ds->data.table); });
  });
}

hs_status hs_dataset_summary(const hs_dataset* ds, char** json_out) {
  return guarded([&] {
    require(ds, "dataset");
    require(json_out, "json_out");
    *json_out = dup_string(ds->data.summary().dump(2) + "\n");
  });
}

hs_status hs_dataset_normalization(const hs_dataset* ds, const char* config_json, char** json_out) {
  return guarded([&] {
    require(ds, "dataset");
    require(json_out, "json_out");
    const auto config = hoopseq::RunConfig::from_json(parse_json_arg(config_json, "config"));
    hoopseq::SplitBoundary boundary;
    if (config.boundary_index) boundary.game_index = config.boundary_index;
    else if (config.boundary_season) boundary.season = config.boundary_season;
    else boundary.game_index = hoopseq::default_boundary(ds->data.table);
    const auto split = hoopseq::split_chronological(ds->data.table, {}, boundary);
    const auto stats = hoopseq::fit_normalizer(ds->data.table.features, split.train_rows);
    *json_out = dup_string(stats.to_json());
  });
}

void hs_dataset_free(hs_dataset* ds) { delete ds; }

hs_status hs_dry_run(const char* config_json, char** text_out) {
  return guarded([&] {
    require(text_out, "text_out");
    *text_out = dup_string(hoopseq::dry_run_text(hoopseq::RunConfig::from_json(parse_json_arg(config_json, "config"))));
  });
}

hs_status hs_model_train(const hs_dataset* ds, const char* config_json, hs_progress_fn progress, void* user,
                         hs_model** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    *out = nullptr;
    const auto config = hoopseq::RunConfig::from_json(parse_json_arg(config_json, "config"));
    hoopseq::ProgressFn fn;
    if (progress != nullptr) {
      fn = [&](const hoopseq::LossRow& row) {
        progress(row.epoch, row.train_loss, row.val_loss.value_or(std::numeric_limits<double>::quiet_NaN()), user);
      };
    }
    *out = new hs_model{hoopseq::train_model(ds->data, config, fn)};
  });
}

hs_status hs_model_save(const hs_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    hoopseq::save_checkpoint(model->model, path);
  });
}

hs_status hs_model_load(const char* path, hs_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new hs_model{hoopseq::load_checkpoint(path)};
  });
}

hs_status hs_model_info(const hs_model* model, char** json_out) {
  return guarded([&] {
    require(model, "model");
    require(json_out, "json_out");
    *json_out = dup_string(model->model.info().dump(2) + "\n");
  });
}

hs_status hs_model_report(const hs_model* model, char** json_out) {
  return guarded([&] {
    require(model, "model");
    require(json_out, "json_out");
    if (!model->model.report) throw hoopseq::ValidationError("model has no report; run an evaluation first");
    *json_out = dup_string(hoopseq::report_to_json(*model->model.report).dump(2) + "\n");
  });
}

hs_status hs_model_loss_csv(const hs_model* model, char** csv_out) {
  return guarded([&] {
    require(model, "model");
    require(csv_out, "csv_out");
    *csv_out = dup_string(model->model.loss_csv());
  });
}

hs_status hs_model_evaluate(hs_model* model, const hs_dataset* ds, char** report_json_out) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    model->model.report = hoopseq::evaluate_model(model->model, ds->data);
    if (report_json_out != nullptr) {
      *report_json_out = dup_string(hoopseq::report_to_json(*model->model.report).dump(2) + "\n");
    }
  });
}

hs_status hs_model_predict(const hs_model* model, const double* rows, size_t n_rows, size_t n_cols, double* out,
                           size_t capacity, size_t* n_written) {
  return guarded([&] {
    require(model, "model");
    require(n_written, "n_written");
    *n_written = 0;
    if (n_rows > 0) require(rows, "rows");
    const hoopseq::Matrix m(n_rows, n_cols, std::vector<double>(rows, rows + n_rows * n_cols));
    const auto probs = model->model.predict_raw(m);
    if (probs.size() > capacity) {
      throw hoopseq::ValidationError("output buffer holds " + std::to_string(capacity) + " values, need " +
                                     std::to_string(probs.size()));
    }
    if (!probs.empty()) require(out, "out");
    std::copy(probs.begin(), probs.end(), out);
    *n_written = probs.size();
  });
}

void hs_model_free(hs_model* model) { delete model; }

hs_status hs_feature_rows_load(const char* csv_path, double** rows_out, size_t* n_rows, size_t* n_cols) {
  return guarded([&] {
    require(csv_path, "csv_path");
    require(rows_out, "rows_out");
    require(n_rows, "n_rows");
    require(n_cols, "n_cols");
    *rows_out = nullptr;
    const auto m = hoopseq::read_feature_rows_file(csv_path);
    const std::size_t bytes = std::max<std::size_t>(1, m.size()) * sizeof(double);
    auto* buf = static_cast<double*>(std::malloc(bytes));
    if (buf == nullptr) throw std::bad_alloc();
    std::copy(m.values().begin(), m.values().end(), buf);
    *rows_out = buf;
    *n_rows = m.rows();
    *n_cols = m.cols();
  });
}

hs_status hs_compare(const char* const* report_jsons, size_t n, int with_paper_rows, char** csv_out,
                     char** json_out) {
  return guarded([&] {
    if (n > 0) require(report_jsons, "report_jsons");
    std::vector<hoopseq::EvalReport> reports;
    for (size_t i = 0; i < n; ++i) {
      require(report_jsons[i], "report");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(report_jsons[i]);
      } catch (const nlohmann::json::parse_error& e) {
        throw hoopseq::ParseError("report " + std::to_string(i + 1) + " is not valid JSON: " + e.what());
      }
      reports.push_back(hoopseq::report_from_json(j));
    }
    const auto table = hoopseq::build_comparison(reports, with_paper_rows != 0);
    if (csv_out != nullptr) *csv_out = dup_string(table.to_csv());
    if (json_out != nullptr) *json_out = dup_string(table.to_json().dump(2) + "\n");
  });
}

}  // extern "C"
