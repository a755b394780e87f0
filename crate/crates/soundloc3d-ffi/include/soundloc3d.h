/* C interface to the soundloc3d pipeline. Generated by cbindgen; do not edit. */

#ifndef SOUNDLOC3D_H
#define SOUNDLOC3D_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status of an interface call; nonzero means failure and
 * `sl3d_last_error_message` describes it.
 */
typedef enum sl3d_status {
  /**
   * The call succeeded.
   */
  SL3D_OK = 0,
  /**
   * An internal failure: numeric trouble, I/O, or a caught panic.
   */
  SL3D_ERR_RUNTIME = 1,
  /**
   * The configuration is invalid or inconsistent.
   */
  SL3D_ERR_CONFIG = 2,
  /**
   * A dataset or checkpoint is missing, corrupt, or mismatched.
   */
  SL3D_ERR_DATA = 3,
  /**
   * A self-check suite ran to completion and failed.
   */
  SL3D_ERR_ORACLE = 4,
  /**
   * A pointer argument was NULL or a string was not valid UTF-8.
   */
  SL3D_ERR_ARGUMENT = 5,
} sl3d_status;

/**
 * Opaque: a fully resolved experiment configuration.
 */
typedef struct sl3d_config sl3d_config;

/**
 * Opaque: a restored model checkpoint (parameters, optimizer state, and the
 * configuration it was trained under).
 */
typedef struct sl3d_model sl3d_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (snprintf
 * semantics); returns the message length in bytes.
 *
 * # Safety
 * `buf` must be NULL or point to at least `cap` writable bytes.
 */
size_t sl3d_last_error_message(char *buf, size_t cap);

/**
 * Copy the library version into `buf` (snprintf semantics); returns the
 * version string length in bytes.
 *
 * # Safety
 * `buf` must be NULL or point to at least `cap` writable bytes.
 */
size_t sl3d_version(char *buf, size_t cap);

/**
 * Resolve `spec` — "paper", "desk", or a path to a config JSON file — into a
 * configuration handle stored in `*out`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum sl3d_status sl3d_config_load(const char *spec, struct sl3d_config **out);

/**
 * Copy the configuration's content hash (64 hex characters) into `buf`
 * (snprintf semantics).
 *
 * # Safety
 * `cfg` must come from [`sl3d_config_load`]; `buf` must be NULL or point to
 * at least `cap` writable bytes.
 */
enum sl3d_status sl3d_config_hash(const struct sl3d_config *cfg, char *buf, size_t cap);

/**
 * Release a configuration handle. NULL is a no-op.
 *
 * # Safety
 * `cfg` must be NULL or an unreleased handle from [`sl3d_config_load`].
 */
void sl3d_config_free(struct sl3d_config *cfg);

/**
 * Render `n_scenes` scenes into the `split` of the dataset at `out_dir`,
 * using up to `threads` workers. With `force`, an existing split or a
 * directory rendered under a different config is started over.
 *
 * # Safety
 * `cfg` must come from [`sl3d_config_load`]; the strings must be
 * NUL-terminated.
 */
enum sl3d_status sl3d_generate_dataset(const struct sl3d_config *cfg,
                                       const char *out_dir,
                                       const char *split,
                                       size_t n_scenes,
                                       bool force,
                                       size_t threads);

/**
 * Train on the dataset's train split and leave a checkpoint plus JSON-lines
 * log in `out_dir`. `variant` selects an ablation ("full", "noRGB",
 * "noDepth", "noCVC", "noRGBD"); with `resume`, training continues from the
 * rolling checkpoint in `out_dir`. On success the first and last step's
 * total loss are stored through the optional out pointers.
 *
 * # Safety
 * `cfg` must come from [`sl3d_config_load`]; the strings must be
 * NUL-terminated; `first_loss`/`last_loss` must be NULL or valid.
 */
enum sl3d_status sl3d_train(const struct sl3d_config *cfg,
                            const char *variant,
                            const char *data_dir,
                            const char *out_dir,
                            bool resume,
                            size_t threads,
                            double *first_loss,
                            double *last_loss);

/**
 * Restore the checkpoint at `path` into a model handle stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum sl3d_status sl3d_model_load(const char *path, struct sl3d_model **out);

/**
 * Number of optimizer steps the model has been trained for.
 *
 * # Safety
 * `model` must come from [`sl3d_model_load`].
 */
uint64_t sl3d_model_trained_steps(const struct sl3d_model *model);

/**
 * Total number of scalar parameters in the model.
 *
 * # Safety
 * `model` must come from [`sl3d_model_load`].
 */
uint64_t sl3d_model_param_count(const struct sl3d_model *model);

/**
 * Score the model on the dataset's test split and write metrics JSON/CSV and
 * predictions JSON into `out_dir`. `snr_db`/`pose_delta` inject noise at
 * load time; pass NAN to disable either. On success the headline numbers are
 * stored through the optional out pointers (`*male` is NAN when the model
 * scored no true positives).
 *
 * # Safety
 * `model` must come from [`sl3d_model_load`]; the strings must be
 * NUL-terminated; `map`/`mar`/`male` must be NULL or valid.
 */
enum sl3d_status sl3d_model_eval(const struct sl3d_model *model,
                                 const char *data_dir,
                                 const char *out_dir,
                                 double snr_db,
                                 double pose_delta,
                                 size_t threads,
                                 double *map,
                                 double *mar,
                                 double *male);

/**
 * Release a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or an unreleased handle from [`sl3d_model_load`].
 */
void sl3d_model_free(struct sl3d_model *model);

/**
 * Run one numerical self-check suite ("geometry", "dsp", "grad",
 * "hungarian", "zero-loss") or all of them when `suite` is NULL. The
 * measured-error report is copied into `detail` (snprintf semantics; may be
 * NULL). Returns `SL3D_ERR_ORACLE` when a suite fails.
 *
 * # Safety
 * `suite` must be NULL or NUL-terminated; `detail` must be NULL or point to
 * at least `detail_cap` writable bytes.
 */
enum sl3d_status sl3d_oracle(const char *suite, char *detail, size_t detail_cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOUNDLOC3D_H */
