#ifndef HOOPSEQ_HOOPSEQ_H
#define HOOPSEQ_HOOPSEQ_H

/*
 * C interface to the hoopseq engine.
 *
 * Every function returns an hs_status. On failure the message is available from
 * hs_last_error() on the calling thread until the next call into the library.
 * Strings and double arrays handed out by the library are released with
 * hs_free_string / hs_free_doubles. JSON arguments are UTF-8 text.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HS_API __declspec(dllexport)
#else
#define HS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hs_status {
  HS_OK = 0,
  HS_ERR_USAGE = 1,   /* invalid arguments, data or configuration */
  HS_ERR_IO = 2,      /* file could not be read or written */
  HS_ERR_NUMERIC = 3, /* non-finite loss or gradients */
  HS_ERR_INTERNAL = 4
} hs_status;

typedef struct hs_dataset hs_dataset;
typedef struct hs_model hs_model;

/* Called after each training epoch; val_loss is NaN when no validation split is used. */
typedef void (*hs_progress_fn)(size_t epoch, double train_loss, double val_loss, void* user);

HS_API const char* hs_version(void);
HS_API const char* hs_last_error(void);
HS_API void hs_free_string(char* s);
HS_API void hs_free_doubles(double* values);

/* ---- datasets ---- */

/* params: {"teams", "seasons", "games_per_season", "seed", "rule", "k", "noise", "feature", "first_season_year"} */
HS_API hs_status hs_dataset_synthesize(const char* params_json, hs_dataset** out);
/* The same parameters with every default filled in. */
HS_API hs_status hs_synth_resolve(const char* params_json, char** json_out);
/* options: {"strict": bool, "lag_mode": "cross_season" | "within_season" | "pre_lagged"}; NULL for defaults */
HS_API hs_status hs_dataset_load(const char* csv_path, const char* options_json, hs_dataset** out);
HS_API hs_status hs_dataset_write_games_csv(const hs_dataset* ds, const char* path);
HS_API hs_status hs_dataset_write_matchups_csv(const hs_dataset* ds, const char* path);
HS_API hs_status hs_dataset_summary(const hs_dataset* ds, char** json_out);
/* Normalization statistics fitted on the rows before the default (or given) split boundary. */
HS_API hs_status hs_dataset_normalization(const hs_dataset* ds, const char* config_json, char** json_out);
HS_API void hs_dataset_free(hs_dataset* ds);

/* ---- models ---- */

/* Layer walkthrough for a configuration; reads no data. */
HS_API hs_status hs_dry_run(const char* config_json, char** text_out);
HS_API hs_status hs_model_train(const hs_dataset* ds, const char* config_json, hs_progress_fn progress,
                                void* user, hs_model** out);
HS_API hs_status hs_model_save(const hs_model* model, const char* path);
HS_API hs_status hs_model_load(const char* path, hs_model** out);
HS_API hs_status hs_model_info(const hs_model* model, char** json_out);
/* Held-out report from training or the latest evaluation. */
HS_API hs_status hs_model_report(const hs_model* model, char** json_out);
HS_API hs_status hs_model_loss_csv(const hs_model* model, char** csv_out);
HS_API hs_status hs_model_evaluate(hs_model* model, const hs_dataset* ds, char** report_json_out);
/*
 * rows: n_rows x n_cols raw feature values in matchup column order. Sequence
 * models take exactly L rows and write one probability; other models write one
 * per row. Fails with HS_ERR_USAGE when capacity is too small.
 */
HS_API hs_status hs_model_predict(const hs_model* model, const double* rows, size_t n_rows, size_t n_cols,
                                  double* out, size_t capacity, size_t* n_written);
HS_API void hs_model_free(hs_model* model);

/* Reads a CSV with HOME_/AWAY_ feature headers into a row-major array. */
HS_API hs_status hs_feature_rows_load(const char* csv_path, double** rows_out, size_t* n_rows, size_t* n_cols);
HS_API size_t hs_feature_count(void);

/* ---- comparison ---- */

HS_API hs_status hs_compare(const char* const* report_jsons, size_t n, int with_paper_rows, char** csv_out,
                            char** json_out);

#ifdef __cplusplus
}
#endif

#endif
