#ifndef TMF_TMF_H
#define TMF_TMF_H

/* C interface to the tumour-motion forecasting library. Every fallible call
 * returns a tmf_status; on failure tmf_last_error() holds a one-line message
 * for the calling thread. Objects are opaque handles released with their
 * matching *_free function. Strings returned through char** are released
 * with tmf_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TMF_API __declspec(dllexport)
#else
#define TMF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tmf_status {
  TMF_OK = 0,
  TMF_ERR_PARAMETER = 1,
  TMF_ERR_GEOMETRY = 2,
  TMF_ERR_SHAPE = 3,
  TMF_ERR_NUMERIC = 4,
  TMF_ERR_FORMAT = 5,
  TMF_ERR_CONFIG_MISMATCH = 6,
  TMF_ERR_MANIFEST = 7,
  TMF_ERR_CONTRACT = 8,
  TMF_ERR_IO = 9,
  TMF_ERR_INPUT_NOT_FOUND = 10,
  TMF_ERR_DEGENERATE_INPUT = 11,
  TMF_ERR_INTERNAL = 12
} tmf_status;

typedef enum tmf_session { TMF_SESSION_T1 = 1, TMF_SESSION_T2 = 2 } tmf_session;

TMF_API const char* tmf_version(void);
/* Machine-readable category, e.g. "input-not-found". */
TMF_API const char* tmf_status_category(tmf_status status);
TMF_API const char* tmf_last_error(void);
TMF_API void tmf_string_free(char* s);

/* Run configuration: model, training and sweep settings.
 * json_text may be NULL; otherwise {"model": {...}, "train": {...}, "sweep": {...}}
 * with every section optional. toy != 0 starts from the toy presets. */
typedef struct tmf_config tmf_config;
TMF_API tmf_status tmf_config_create(const char* json_text, int toy, tmf_config** out);
/* Sets train.epochs and rescales warmup_epochs to keep its share of the run. */
TMF_API tmf_status tmf_config_set_epochs(tmf_config* config, int epochs);
TMF_API tmf_status tmf_config_set_seed(tmf_config* config, uint64_t seed);
/* Replaces the sweep grid and/or seed list; pass n = 0 to keep either. */
TMF_API tmf_status tmf_config_set_sweep(tmf_config* config, const size_t* n_train_grid, size_t n_grid,
                                        const uint64_t* seeds, size_t n_seeds);
TMF_API tmf_status tmf_config_to_json(const tmf_config* config, char** out_json);
TMF_API void tmf_config_free(tmf_config* config);

/* Synthetic patients. spec_json may be NULL for the default phantom. */
typedef struct tmf_phantom tmf_phantom;
TMF_API tmf_status tmf_phantom_create(const char* spec_json, uint64_t seed, const char* patient_id,
                                      tmf_phantom** out);
TMF_API tmf_status tmf_phantom_describe(const tmf_phantom* phantom, char** out_json);
/* Writes frame_NNNN.pgm for a breathing trace of n_frames at 5 Hz plus positions.csv. */
TMF_API tmf_status tmf_phantom_render(const tmf_phantom* phantom, size_t n_frames, uint64_t seed,
                                      const char* out_dir);
TMF_API void tmf_phantom_free(tmf_phantom* phantom);

/* Session datasets (.tmfd). The optional config supplies the window
 * (T_obs, T_pred) and image size; NULL uses 16, 5 and 64. */
typedef struct tmf_dataset tmf_dataset;
TMF_API tmf_status tmf_dataset_build_train(const tmf_phantom* phantom, const tmf_config* config, size_t n_drrs,
                                           uint64_t seed, unsigned workers, tmf_dataset** out);
/* T2 sets render the phantom perturbed with a draw from t2_seed, plus a
 * rigid setup error of up to setup_error_mm per axis; T1 ignores both. */
TMF_API tmf_status tmf_dataset_build_test(const tmf_phantom* phantom, const tmf_config* config, tmf_session session,
                                          size_t n_sequences, double duration_s, double setup_error_mm,
                                          uint64_t seed, uint64_t t2_seed, unsigned workers, tmf_dataset** out);
TMF_API tmf_status tmf_dataset_load(const char* path, tmf_dataset** out);
TMF_API tmf_status tmf_dataset_save(const tmf_dataset* dataset, const char* path);
TMF_API tmf_status tmf_dataset_sample_count(const tmf_dataset* dataset, size_t* out);
TMF_API tmf_status tmf_dataset_describe(const tmf_dataset* dataset, char** out_json);
TMF_API void tmf_dataset_free(tmf_dataset* dataset);

/* Forecasting models (TMCK checkpoints). */
typedef struct tmf_model tmf_model;
TMF_API tmf_status tmf_model_create(const tmf_config* config, uint64_t seed, tmf_model** out);
/* expected may be NULL; otherwise a differing model config is TMF_ERR_CONFIG_MISMATCH. */
TMF_API tmf_status tmf_model_load(const char* path, const tmf_config* expected, tmf_model** out);
TMF_API tmf_status tmf_model_save(const tmf_model* model, const char* path);
TMF_API tmf_status tmf_model_parameter_count(const tmf_model* model, size_t* out);
TMF_API void tmf_model_free(tmf_model* model);

typedef void (*tmf_epoch_callback)(int epoch, double mean_loss, double lr, void* user);

/* Trains in place. out_dir (nullable) receives history.csv, best.tmck and last.tmck. */
TMF_API tmf_status tmf_train(tmf_model* model, const tmf_dataset* dataset, const tmf_config* config,
                             const char* out_dir, tmf_epoch_callback on_epoch, void* user);
/* out_dir (nullable) receives detail.csv and samples.csv. */
TMF_API tmf_status tmf_evaluate(const tmf_model* model, const tmf_dataset* dataset, const char* out_dir,
                                double* ade_mean_mm, double* fde_mean_mm);

/* Cohorts and the strategy-comparison sweep. */
typedef struct tmf_cohort tmf_cohort;
TMF_API tmf_status tmf_cohort_load(const char* manifest_path, unsigned workers, tmf_cohort** out);
TMF_API tmf_status tmf_cohort_patient_count(const tmf_cohort* cohort, size_t* out);
TMF_API tmf_status tmf_cohort_describe(const tmf_cohort* cohort, char** out_json);
/* Copy of a patient's planning (T1) or treatment (T2) phantom. */
TMF_API tmf_status tmf_cohort_phantom(const tmf_cohort* cohort, const char* patient_id, tmf_session session,
                                      tmf_phantom** out);
/* The datasets a sweep would use for this patient: test == 0 gives the T1
 * training trace of n_drrs frames, otherwise the session's test set. The
 * sweep section of config supplies test counts and the setup error. */
TMF_API tmf_status tmf_cohort_dataset(const tmf_cohort* cohort, const char* patient_id, const tmf_config* config,
                                      tmf_session session, int test, size_t n_drrs, unsigned workers,
                                      tmf_dataset** out);
/* Writes <patient_id>_T1.pgm and <patient_id>_T2.pgm reference projections. */
TMF_API tmf_status tmf_cohort_write_projections(const tmf_cohort* cohort, const char* out_dir);
TMF_API void tmf_cohort_free(tmf_cohort* cohort);

typedef void (*tmf_cell_callback)(const char* patient_id, const char* strategy, size_t n_train, uint64_t seed,
                                  double t1_ade_mm, double t2_ade_mm, void* user);

typedef struct tmf_experiment tmf_experiment;
TMF_API tmf_status tmf_sweep_run(const tmf_cohort* cohort, const tmf_config* config, unsigned workers,
                                 tmf_cell_callback on_cell, void* user, tmf_experiment** out);
/* detail.csv, summary.csv, decomposition.csv, decomposition_counts.csv, tests.csv. */
TMF_API tmf_status tmf_experiment_write_report(const tmf_experiment* experiment, const char* out_dir);
TMF_API tmf_status tmf_experiment_row_count(const tmf_experiment* experiment, size_t* out);
/* Fails with TMF_ERR_CONTRACT if any MP cell trained on its evaluation patient. */
TMF_API tmf_status tmf_experiment_check_loocv(const tmf_experiment* experiment, size_t* samples_checked);
TMF_API void tmf_experiment_free(tmf_experiment* experiment);

/* Recomputes summary.csv from a detail.csv. */
TMF_API tmf_status tmf_report_summarize(const char* detail_csv_path, const char* summary_csv_path);

/* Central-difference audit of the forecaster loss over all parameters at
 * 64-bit. config may be NULL for d_model 8, 2 heads, one layer each. */
TMF_API tmf_status tmf_gradcheck(const tmf_config* config, uint64_t seed, double* max_rel_error);

#ifdef __cplusplus
}
#endif

#endif
