#ifndef FEDHYPEVAE_H
#define FEDHYPEVAE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Built-in configuration presets.
 */
typedef enum FhveProfile {
  FHVE_PROFILE_FULL = 0,
  FHVE_PROFILE_DESK = 1,
} FhveProfile;

/**
 * Result code of every fallible entry point.
 */
typedef enum FhveStatus {
  FHVE_STATUS_OK = 0,
  FHVE_STATUS_NULL_POINTER = 1,
  FHVE_STATUS_INVALID_ARGUMENT = 2,
  FHVE_STATUS_CONFIG = 3,
  FHVE_STATUS_IO = 4,
  FHVE_STATUS_FORMAT = 5,
  FHVE_STATUS_CHECKPOINT_VERSION = 6,
  FHVE_STATUS_BUDGET_UNREACHABLE = 7,
  FHVE_STATUS_DIVERGED = 8,
  FHVE_STATUS_BUFFER_TOO_SMALL = 9,
  FHVE_STATUS_INTERNAL = 10,
  FHVE_STATUS_PANIC = 11,
} FhveStatus;

/**
 * Opaque privacy ledger.
 */
typedef struct FhveAccountant FhveAccountant;

/**
 * Opaque run configuration.
 */
typedef struct FhveConfig FhveConfig;

/**
 * Opaque trained generator: model shape and hypernetwork parameters.
 */
typedef struct FhveModel FhveModel;

/**
 * Opaque result of one seed of the full pipeline.
 */
typedef struct FhveRun FhveRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fhve_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void fhve_string_free(char *s);

/**
 * Creates a configuration from a built-in profile.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FhveStatus fhve_config_profile(enum FhveProfile profile, struct FhveConfig **out);

/**
 * Parses and validates a JSON configuration (same format as the CLI).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FhveStatus fhve_config_from_json(const char *json, struct FhveConfig **out);

/**
 * Loads and validates a JSON configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FhveStatus fhve_config_load(const char *path, struct FhveConfig **out);

/**
 * Writes the fully resolved configuration as JSON into `*out`.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_config_to_json(const struct FhveConfig *config, char **out);

/**
 * # Safety
 * `config` must be null or a live handle, freed once.
 */
void fhve_config_free(struct FhveConfig *config);

/**
 * Runs data generation, federated training, meta-code fitting, synthesis
 * and probing for one seed.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_run_seed(const struct FhveConfig *config, uint64_t seed, struct FhveRun **out);

/**
 * Per-seed summary (scores, ε trajectory, round MMD) as JSON.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_run_summary_json(const struct FhveRun *run, char **out);

/**
 * Mean over clients of the synthetic-only probe balanced accuracy.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_run_synthetic_bacc(const struct FhveRun *run, double *out);

/**
 * Total (ε, δ) spent, including the statistics release. `*has_epsilon`
 * is false when DP is disabled, in which case `*epsilon` is NaN.
 *
 * # Safety
 * `run` must be a live handle; `epsilon` and `has_epsilon` valid pointers.
 */
enum FhveStatus fhve_run_total_epsilon(const struct FhveRun *run,
                                       double *epsilon,
                                       bool *has_epsilon);

/**
 * Number of completed rounds.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_run_num_rounds(const struct FhveRun *run, size_t *out);

/**
 * Client-averaged MMD² between real and synthetic samples after `round`
 * (1-based).
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_run_round_mmd(const struct FhveRun *run, size_t round, double *out);

/**
 * Copies the fitted meta-code into `buf`. `*written` receives the code
 * length; if `len` is smaller the call fails with `BUFFER_TOO_SMALL`.
 *
 * # Safety
 * `run` must be a live handle, `buf` valid for `len` doubles (or null when
 * `len` is 0) and `written` a valid pointer.
 */
enum FhveStatus fhve_run_meta_code(const struct FhveRun *run,
                                   double *buf,
                                   size_t len,
                                   size_t *written);

/**
 * Builds a model handle from the run's trained hypernetwork.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_run_model(const struct FhveRun *run, struct FhveModel **out);

/**
 * # Safety
 * `run` must be null or a live handle, freed once.
 */
void fhve_run_free(struct FhveRun *run);

/**
 * Loads a hypernetwork checkpoint written by the CLI or `fhve_model_save`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FhveStatus fhve_model_load(const char *path, struct FhveModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum FhveStatus fhve_model_save(const struct FhveModel *model, const char *path);

/**
 * Embedding dimension, number of classes and code dimension.
 *
 * # Safety
 * `model` must be a live handle and the out-pointers valid.
 */
enum FhveStatus fhve_model_dims(const struct FhveModel *model,
                                size_t *data_dim,
                                size_t *num_classes,
                                size_t *code_dim);

/**
 * Draws `count` class-balanced samples from the generator at `code`,
 * using the same random stream as a run with `seed`. Rows go to `xs`
 * (row-major, `count * data_dim` doubles) and labels to `ys`.
 *
 * # Safety
 * `model` must be a live handle, `code` valid for `code_len` doubles,
 * `xs` for `xs_len` doubles and `ys` for `ys_len` values.
 */
enum FhveStatus fhve_model_synthesize_balanced(const struct FhveModel *model,
                                               const double *code,
                                               size_t code_len,
                                               size_t count,
                                               uint64_t seed,
                                               double *xs,
                                               size_t xs_len,
                                               uint32_t *ys,
                                               size_t ys_len);

/**
 * # Safety
 * `model` must be null or a live handle, freed once.
 */
void fhve_model_free(struct FhveModel *model);

/**
 * Creates an empty RDP ledger.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FhveStatus fhve_accountant_new(struct FhveAccountant **out);

/**
 * Records `steps` subsampled Gaussian steps at rate `q` and noise `sigma`.
 *
 * # Safety
 * `accountant` must be a live handle.
 */
enum FhveStatus fhve_accountant_add_steps(struct FhveAccountant *accountant,
                                          double q,
                                          double sigma,
                                          size_t steps);

/**
 * Smallest ε over the tracked orders at `delta`.
 *
 * # Safety
 * `accountant` must be a live handle and `out` a valid pointer.
 */
enum FhveStatus fhve_accountant_epsilon(const struct FhveAccountant *accountant,
                                        double delta,
                                        double *out);

/**
 * # Safety
 * `accountant` must be null or a live handle, freed once.
 */
void fhve_accountant_free(struct FhveAccountant *accountant);

/**
 * Smallest noise multiplier (to 0.01) whose `steps`-fold composition at
 * rate `q` stays within (`target_epsilon`, `delta`).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FhveStatus fhve_calibrate_sigma(double target_epsilon,
                                     double delta,
                                     double q,
                                     size_t steps,
                                     double *out);

/**
 * Message of the most recent failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call or
 * `fhve_clear_last_error` on the same thread.
 */
const char *fhve_last_error_message(void);

void fhve_clear_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDHYPEVAE_H */
